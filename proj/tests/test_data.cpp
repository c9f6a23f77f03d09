#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "cmad/data.hpp"
#include "idx_mutations.hpp"
#include "test_util.hpp"

using namespace cmad;

namespace {

Dataset small_dataset(std::uint64_t seed, int classes = 3, std::size_t per_class = 4) {
  Rng rng(seed);
  SyntheticOptions o;
  o.num_classes = classes;
  o.per_class = per_class;
  o.d_a = 3;
  o.d_b = 2;
  return gen_synthetic(o, rng);
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

}  // namespace

TEST(GenSynthetic, NoiseFreeRowsEqualPrototype) {
  Rng rng(1);
  SyntheticOptions o;
  o.noise = 0.0;
  o.num_classes = 3;
  o.per_class = 6;
  const Dataset d = gen_synthetic(o, rng);
  std::map<int, std::size_t> first;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto [it, fresh] = first.emplace(d.labels_a[i], i);
    if (fresh) continue;
    for (std::size_t j = 0; j < d.dim_a(); ++j) EXPECT_EQ(d.mod_a(i, j), d.mod_a(it->second, j));
    for (std::size_t j = 0; j < d.dim_b(); ++j) EXPECT_EQ(d.mod_b(i, j), d.mod_b(it->second, j));
  }
}

TEST(GenSynthetic, Counts) {
  Rng rng(2);
  SyntheticOptions o;
  o.num_classes = 2;
  o.per_class = 5;
  const Dataset d = gen_synthetic(o, rng);
  EXPECT_EQ(d.size(), 10u);
  EXPECT_EQ(std::count(d.labels_a.begin(), d.labels_a.end(), 0), 5);
  EXPECT_EQ(std::count(d.labels_a.begin(), d.labels_a.end(), 1), 5);
  EXPECT_EQ(d.labels_a, d.labels_b);
}

TEST(GenSynthetic, ClassSeparation) {
  for (Warp w : {Warp::none, Warp::tanh}) {
    Rng rng(3);
    SyntheticOptions o;
    o.warp = w;
    const Dataset d = gen_synthetic(o, rng);
    for (const Matrix* m : {&d.mod_a, &d.mod_b}) {
      // class means and pooled within-class stddev
      Matrix means(5, m->cols());
      std::vector<double> cnt(5, 0.0);
      for (std::size_t i = 0; i < d.size(); ++i) {
        cnt[static_cast<std::size_t>(d.labels_a[i])] += 1;
        for (std::size_t j = 0; j < m->cols(); ++j) means(static_cast<std::size_t>(d.labels_a[i]), j) += (*m)(i, j);
      }
      for (std::size_t c = 0; c < 5; ++c)
        for (std::size_t j = 0; j < m->cols(); ++j) means(c, j) /= cnt[c];
      double ss = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < m->cols(); ++j) {
          const double e = (*m)(i, j) - means(static_cast<std::size_t>(d.labels_a[i]), j);
          ss += e * e;
        }
      // per-instance within-class spread (distance to own mean)
      const double within = std::sqrt(ss / static_cast<double>(d.size()));
      double min_sep = 1e300;
      for (std::size_t a = 0; a < 5; ++a)
        for (std::size_t b = a + 1; b < 5; ++b) {
          double s = 0.0;
          for (std::size_t j = 0; j < m->cols(); ++j) s += (means(a, j) - means(b, j)) * (means(a, j) - means(b, j));
          min_sep = std::min(min_sep, std::sqrt(s));
        }
      EXPECT_GT(min_sep, 3.0 * within);
    }
  }
}

TEST(GenSynthetic, SeedDeterminism) {
  EXPECT_EQ(small_dataset(5), small_dataset(5));
  EXPECT_NE(small_dataset(5), small_dataset(6));
}

TEST(GenSynthetic, RejectsBadOptions) {
  Rng rng(1);
  SyntheticOptions o;
  o.num_classes = 1;
  EXPECT_THROW(gen_synthetic(o, rng), ArgumentError);
  o = {};
  o.noise = -1;
  EXPECT_THROW(gen_synthetic(o, rng), ArgumentError);
  o = {};
  o.per_class = 0;
  EXPECT_THROW(gen_synthetic(o, rng), ArgumentError);
}

TEST(Split, EightyTwenty) {
  const Dataset d = small_dataset(1, 5, 10);
  Rng rng(4);
  auto [train, test] = split_train_test(d, 0.2, rng);
  EXPECT_EQ(train.size(), 40u);
  EXPECT_EQ(test.size(), 10u);
}

TEST(Inject, ZeroGivesNothing) {
  const Dataset d = small_dataset(1);
  Rng rng(1);
  EXPECT_TRUE(inject_anomalies(d, 0, rng).empty());
}

TEST(Inject, LabelsAndBalance) {
  const Dataset d = small_dataset(2, 4, 10);
  Rng rng(2);
  const auto pairs = inject_anomalies(d, 25, rng);
  ASSERT_EQ(pairs.size(), 50u);
  std::size_t anomalous = 0;
  for (const auto& p : pairs) {
    const bool diff = d.labels_a[p.index_a] != d.labels_b[p.index_b];
    EXPECT_EQ(diff, p.truth == Truth::anomalous);
    if (p.truth == Truth::anomalous) {
      ++anomalous;
    } else {
      EXPECT_EQ(p.index_a, p.index_b);
    }
  }
  EXPECT_EQ(anomalous, 25u);
}

TEST(Inject, MoreConsistentPairsThanRows) {
  const Dataset d = small_dataset(2, 2, 3);
  Rng rng(2);
  const auto pairs = inject_anomalies(d, 20, rng);
  EXPECT_EQ(pairs.size(), 40u);
}

TEST(Inject, Deterministic) {
  const Dataset d = small_dataset(3);
  Rng a(9), b(9);
  EXPECT_EQ(inject_anomalies(d, 10, a), inject_anomalies(d, 10, b));
}

TEST(Inject, SingleClassIsInfeasible) {
  Dataset d = small_dataset(1, 2, 3);
  std::fill(d.labels_a.begin(), d.labels_a.end(), 0);
  std::fill(d.labels_b.begin(), d.labels_b.end(), 0);
  Rng rng(1);
  EXPECT_THROW(inject_anomalies(d, 3, rng), InfeasibleError);
}

TEST(PairsCsv, RoundTripAndValidation) {
  const Dataset d = small_dataset(4);
  Rng rng(3);
  const auto pairs = inject_anomalies(d, 5, rng);
  const std::string text = format_pairs_csv(pairs);
  EXPECT_EQ(parse_pairs_csv(text, d), pairs);
  std::string lie = text;
  const auto pos = lie.find("anomalous");
  lie.replace(pos, 9, "consistent");
  EXPECT_THROW(parse_pairs_csv(lie, d), FormatError);
  EXPECT_THROW(parse_pairs_csv("a,b,c\n", d), FormatError);
  EXPECT_THROW(parse_pairs_csv("index_a,index_b,truth\n999,0,consistent\n", d), FormatError);
}

TEST(Idx, TinyImagesDecode) {
  TempDir tmp;
  const std::vector<std::uint8_t> px = {0, 255, 128, 1, 2, 3, 4, 5};
  const std::vector<std::uint8_t> lab = {3, 7};
  write_bytes(tmp / "img", encode_idx_images(2, 2, 2, px));
  write_bytes(tmp / "lab", encode_idx_labels(lab));
  const auto idx = load_idx(tmp / "img", tmp / "lab");
  EXPECT_EQ(idx.images.rows(), 2u);
  EXPECT_EQ(idx.images.cols(), 4u);
  EXPECT_EQ(idx.images(0, 0), 0.0);
  EXPECT_EQ(idx.images(0, 1), 1.0);
  EXPECT_EQ(idx.images(0, 2), 128.0 / 255.0);
  EXPECT_EQ(idx.labels, (Labels{3, 7}));
}

TEST(Idx, HeaderBytesAreBigEndian) {
  const std::vector<std::uint8_t> px(6, 9);
  const std::string s = encode_idx_images(1, 2, 3, px);
  const std::string expect_header("\x00\x00\x08\x03\x00\x00\x00\x01\x00\x00\x00\x02\x00\x00\x00\x03", 16);
  EXPECT_EQ(s.substr(0, 16), expect_header);
  const std::string l = encode_idx_labels(std::vector<std::uint8_t>{4});
  EXPECT_EQ(l, std::string("\x00\x00\x08\x01\x00\x00\x00\x01\x04", 9));
}

TEST(Idx, RandomRoundTripIsByteIdentical) {
  Rng rng(8);
  std::vector<std::uint8_t> px(5 * 7 * 3);
  for (auto& p : px) p = static_cast<std::uint8_t>(rng.uniform_index(256));
  const std::string bytes = encode_idx_images(5, 7, 3, px);
  const auto dec = decode_idx_images(bytes);
  EXPECT_EQ(dec.pixels, px);
  EXPECT_EQ(encode_idx_images(dec.n, dec.rows, dec.cols, dec.pixels), bytes);
}

TEST(Idx, EveryOneByteTruncationRejected) {
  const std::string img = valid_idx_images();
  const std::string lab = valid_idx_labels();
  for (std::size_t len = 0; len < img.size(); ++len)
    EXPECT_THROW(decode_idx_images(std::string_view(img).substr(0, len)), FormatError) << len;
  for (std::size_t len = 0; len < lab.size(); ++len)
    EXPECT_THROW(decode_idx_labels(std::string_view(lab).substr(0, len)), FormatError) << len;
}

TEST(Idx, MutationSuiteRejected) {
  const auto suite = idx_mutation_suite();
  EXPECT_EQ(suite.size(), 50u);
  for (const auto& m : suite) {
    if (m.images) {
      EXPECT_THROW(decode_idx_images(m.bytes), FormatError) << m.name;
    } else {
      EXPECT_THROW(decode_idx_labels(m.bytes), FormatError) << m.name;
    }
  }
}

TEST(Idx, CountMismatchBetweenFiles) {
  TempDir tmp;
  write_bytes(tmp / "img", valid_idx_images());
  write_bytes(tmp / "lab", encode_idx_labels(std::vector<std::uint8_t>{1, 2}));
  try {
    load_idx(tmp / "img", tmp / "lab");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("label count"), std::string::npos);
  }
}

TEST(Idx, MissingFileIsIoError) {
  TempDir tmp;
  EXPECT_THROW(load_idx(tmp / "nope", tmp / "nope2"), IoError);
}

TEST(Tags, EqualLabelsEqualRowsUnitNorm) {
  Rng rng(3);
  const Labels l = {0, 1, 2, 1, 0};
  const Matrix t = tag_embed(l, 3, 16, rng);
  for (std::size_t j = 0; j < 16; ++j) {
    EXPECT_EQ(t(0, j), t(4, j));
    EXPECT_EQ(t(1, j), t(3, j));
  }
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(norm2(t.row(i)), 1.0, 1e-12);
}

TEST(Tags, TenClassesNearlyOrthogonal) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Matrix v = tag_vectors(10, 100, rng);
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = i + 1; j < 10; ++j) EXPECT_LT(std::abs(dot(v.row(i), v.row(j))), 0.5);
  }
}

TEST(Tags, PureFunctionOfSeed) {
  const Labels l = {0, 1, 2};
  Rng a(11), b(11);
  EXPECT_EQ(tag_embed(l, 3, 8, a), tag_embed(l, 3, 8, b));
}

TEST(DatasetDir, RoundTripIsExact) {
  TempDir tmp;
  Rng rng(1);
  SyntheticOptions o;
  o.warp = Warp::tanh;
  o.per_class = 7;
  const Dataset d = gen_synthetic(o, rng);
  save_dataset(d, tmp.path());
  EXPECT_EQ(load_dataset(tmp.path()), d);
}

TEST(DatasetDir, RowCountMismatch) {
  TempDir tmp;
  save_dataset(small_dataset(1, 3, 1), tmp.path());
  std::ofstream(tmp / "mod_a.csv") << "1,2,3\n4,5,6\n";
  EXPECT_THROW(load_dataset(tmp.path()), FormatError);
}

TEST(DatasetDir, MissingKeyIsNamed) {
  TempDir tmp;
  save_dataset(small_dataset(1), tmp.path());
  std::ofstream(tmp / "manifest.txt") << "version=1\nn=12\nd_a=3\nd_b=2\n";
  try {
    load_dataset(tmp.path());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("num_classes"), std::string::npos) << e.what();
  }
}

TEST(DatasetDir, LabelOutOfRange) {
  TempDir tmp;
  const Dataset d = small_dataset(1, 2, 2);
  save_dataset(d, tmp.path());
  std::ofstream(tmp / "labels_b.csv") << "0\n1\n5\n0\n";
  EXPECT_THROW(load_dataset(tmp.path()), FormatError);
}
