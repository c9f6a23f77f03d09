#include <gtest/gtest.h>

#include "cmad/analysis.hpp"
#include "cmad/training.hpp"
#include "test_util.hpp"

using namespace cmad;

namespace {

struct IdentityModel {
  Matrix embed_a(const Matrix& x) const { return x; }
  Matrix embed_b(const Matrix& x) const { return x; }
};

}  // namespace

TEST(Pgm, ExactBytes) {
  const GrayImage img(2, 3, {0, 1, 2, 127, 128, 255});
  const std::string expected = std::string("P5\n3 2\n255\n") + std::string("\x00\x01\x02\x7f\x80\xff", 6);
  EXPECT_EQ(encode_pgm(img), expected);
  EXPECT_EQ(decode_pgm(expected), img);
}

TEST(Pgm, FileRoundTripAndComments) {
  TempDir dir;
  Rng rng(1);
  std::vector<int> px(28 * 28);
  for (auto& p : px) p = static_cast<int>(rng.uniform_index(256));
  const GrayImage img(28, 28, px);
  write_pgm(img, dir / "x.pgm");
  EXPECT_EQ(read_pgm(dir / "x.pgm"), img);
  EXPECT_EQ(decode_pgm("P5\n# made by hand\n1 1\n255\n\x07"), GrayImage(1, 1, {7}));
}

TEST(Pgm, RejectsMalformed) {
  EXPECT_THROW(decode_pgm("P2\n1 1\n255\n0"), FormatError);
  EXPECT_THROW(decode_pgm("P5\n2 1\n255\n0"), FormatError);
  EXPECT_THROW(decode_pgm("P5\n1 1\n65535\n00"), FormatError);
  EXPECT_THROW(decode_pgm("P5\n0 1\n255\n"), FormatError);
  EXPECT_THROW(decode_pgm("P5\n1"), FormatError);
  EXPECT_THROW(decode_pgm("P5\n1 1\n255\n01"), FormatError);
  EXPECT_THROW(GrayImage(1, 1, {256}), ArgumentError);
  EXPECT_THROW(GrayImage(1, 2, {0}), ArgumentError);
}

TEST(NormalizeToGray, MinMax) {
  const std::vector<double> v = {-1, 0, 1, 3};
  const auto g = normalize_to_gray(v, 2, 2);
  EXPECT_EQ(std::vector<int>(g.pixels().begin(), g.pixels().end()), (std::vector<int>{0, 64, 128, 255}));
  const std::vector<double> flat(4, 2.5);
  const auto black = normalize_to_gray(flat, 1, 4);
  for (int p : black.pixels()) EXPECT_EQ(p, 0);
  EXPECT_THROW(normalize_to_gray(v, 3, 1), ArgumentError);
}

TEST(Reconstruct, SumsSelectedImages) {
  // images 0 and 2 point the same way as the query, image 1 is orthogonal
  const Matrix images = Matrix::from_rows({{1, 0, 0, 0}, {0, 0, 0, 1}, {2, 1, 0, 0}});
  const Vector query = {1, 0, 0, 0};
  const auto g = reconstruct(IdentityModel{}, query, images, 0.3, 2, 2);
  EXPECT_EQ(std::vector<int>(g.pixels().begin(), g.pixels().end()), (std::vector<int>{255, 85, 0, 0}));
  EXPECT_THROW(reconstruct(IdentityModel{}, query, images, 1.0, 2, 2), EmptySelectionError);
  EXPECT_THROW(reconstruct(IdentityModel{}, query, images, 0.3, 3, 2), ArgumentError);
}

TEST(Reconstruct, ScoreEqualToEpsilonExcluded) {
  const Matrix images = Matrix::from_rows({{1, 0}, {0, 1}});
  const Vector query = {1, 0};
  EXPECT_THROW(reconstruct(IdentityModel{}, query, images, 1.0, 1, 2), EmptySelectionError);
  const auto g = reconstruct(IdentityModel{}, query, images, 0.0, 1, 2);
  EXPECT_EQ(g.at(0, 0), 255);
  EXPECT_EQ(g.at(0, 1), 0);
}

TEST(Viz, CoordsAndClassFilter) {
  Rng rng(2);
  SyntheticOptions o;
  o.per_class = 15;
  const Dataset d = gen_synthetic(o, rng);
  TrainConfig c;
  c.arch_a = {20, 16, 8};
  c.arch_b = {20, 16, 8};
  c.epochs = 2;
  const auto m = train_cmad(d, c);
  const auto all = viz_embeddings(m, d, Modality::a);
  EXPECT_EQ(all.coords.rows(), d.size());
  EXPECT_EQ(all.coords.cols(), 2u);
  EXPECT_EQ(all.classes, d.labels_a);
  const auto some = viz_embeddings(m, d, Modality::b, std::set<int>{0, 3});
  EXPECT_EQ(some.coords.rows(), 30u);
  for (int k : some.classes) EXPECT_TRUE(k == 0 || k == 3);
  const std::string csv = format_coords_csv(some);
  EXPECT_EQ(csv.rfind("x,y,class_id\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 31);
  // PCA coordinates are centred
  const Vector mean = column_means(all.coords);
  EXPECT_NEAR(mean[0], 0.0, 1e-9);
  EXPECT_NEAR(mean[1], 0.0, 1e-9);
}
