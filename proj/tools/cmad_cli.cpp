#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cmad/cmad.hpp"

namespace fs = std::filesystem;
using namespace cmad;

namespace {

// Bad flag values that can only be detected once inputs are loaded.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) throw IoError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string hash_path(const fs::path& p) {
  if (!fs::is_directory(p)) return sha256_hex(io::read_file(p));
  // dataset directories: hash of the per-file hashes in a fixed order
  std::string joined;
  for (const char* name : {"manifest.txt", "mod_a.csv", "mod_b.csv", "labels_a.csv", "labels_b.csv", "model.txt"}) {
    if (fs::exists(p / name)) joined += std::string(name) + ":" + sha256_hex(io::read_file(p / name)) + "\n";
  }
  return sha256_hex(joined);
}

// Collects inputs and outputs of one run and writes run_manifest.txt.
class Run {
 public:
  Run(std::string command, std::string subcommand) : command_(std::move(command)), subcommand_(std::move(subcommand)) {}

  void set_out(fs::path out) { out_ = std::move(out); }
  const fs::path& out() const { return out_; }
  void seed(std::uint64_t s) { seed_ = std::to_string(s); }
  void input(const std::string& flag, const fs::path& p) { inputs_.push_back(flag + "=" + p.string() + " sha256=" + hash_path(p)); }

  void write(const std::string& rel, std::string_view contents) {
    fs::create_directories((out_ / rel).parent_path());
    io::write_file_atomic(out_ / rel, contents);
    artifacts_.push_back(rel + " sha256=" + sha256_hex(contents));
  }
  // Files already written under out (e.g. by save_dataset).
  void record(const std::string& rel) { artifacts_.push_back(rel + " sha256=" + sha256_hex(io::read_file(out_ / rel))); }

  void finish() {
    fs::create_directories(out_);
    std::string m = "version=1\ncommand=" + command_ + "\nsubcommand=" + subcommand_ + "\nseed=" + seed_ + "\n";
    for (const auto& i : inputs_) m += "input " + i + "\n";
    for (const auto& a : artifacts_) m += "artifact " + a + "\n";
    io::write_file_atomic(out_ / "run_manifest.txt", m);
  }

 private:
  std::string command_, subcommand_;
  fs::path out_;
  std::string seed_ = "none";
  std::vector<std::string> inputs_, artifacts_;
};

std::string quote_arg(const std::string& a) {
  if (!a.empty() && a.find_first_of(" \t\"'\\$") == std::string::npos) return a;
  std::string q = "'";
  for (char c : a) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

std::vector<std::size_t> preset_or_dims(const std::string& spec) {
  if (spec == "mnist-image") return {784, 1440, 1280, 320, 150, 50};
  if (spec == "mnist-tag") return {100, 100, 50};
  return io::parse_dims(spec, "architecture");
}

// "auto" picks <input>-64-32.
std::vector<std::size_t> resolve_arch(const std::string& spec, std::size_t input_dim, const std::string& flag) {
  if (spec == "auto") return {input_dim, 64, 32};
  const auto dims = preset_or_dims(spec);
  if (dims.front() != input_dim) {
    throw UsageError(flag + " '" + spec + "' starts at width " + std::to_string(dims.front()) +
                     " but the data has width " + std::to_string(input_dim));
  }
  return dims;
}

const CLI::Validator kArch(
    [](std::string& s) -> std::string {
      if (s == "auto") return {};
      try {
        if (preset_or_dims(s).size() < 2) return "needs at least two dimensions";
      } catch (const std::exception& e) {
        return "expected dash-separated dims, 'auto', 'mnist-image' or 'mnist-tag'";
      }
      return {};
    },
    "ARCH");

const CLI::Validator kGrid(
    [](std::string& s) -> std::string {
      try {
        for (auto part : io::split(s, ',')) {
          const double v = io::parse_double(io::trim(part), "grid value");
          if (!(v >= -1.0 && v <= 1.0)) return "grid values must lie in [-1, 1]";
        }
      } catch (const std::exception&) {
        return "expected comma-separated numbers";
      }
      return {};
    },
    "LIST");

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  for (auto part : io::split(s, ',')) out.push_back(io::parse_double(io::trim(part), "grid value"));
  return out;
}

std::string join_grid(const std::vector<double>& g) {
  std::string s;
  for (double v : g) s += (s.empty() ? "" : ",") + io::format_double(v);
  return s;
}

struct TrainFlags {
  double gamma = 0.3;
  double lambda = 1.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::string arch_a = "auto";
  std::string arch_b = "auto";
  double dropout = 0.5;
  double neg_ratio = 1.0;
  double cross_ratio = 0.25;
  std::uint64_t seed = 0;

  TrainConfig config(const Dataset& d) const {
    TrainConfig c;
    c.contrastive.gamma = gamma;
    c.contrastive.lambda_neg = lambda;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.adam.lr = lr;
    c.arch_a = resolve_arch(arch_a, d.dim_a(), "--arch-a");
    c.arch_b = resolve_arch(arch_b, d.dim_b(), "--arch-b");
    if (c.arch_a.back() != c.arch_b.back()) throw UsageError("--arch-a and --arch-b must end in the same embedding width");
    c.dropout_rate = dropout;
    c.neg_ratio = neg_ratio;
    c.cross_class_positive_ratio = cross_ratio;
    c.seed = seed;
    return c;
  }
};

void add_train_flags(CLI::App* sub, TrainFlags& f, bool with_gamma) {
  if (with_gamma) sub->add_option("--gamma", f.gamma, "margin on negative-pair similarity")->check(CLI::Range(-1.0, 1.0));
  sub->add_option("--lambda", f.lambda, "weight of the negative-pair term")->check(CLI::NonNegativeNumber);
  sub->add_option("--epochs", f.epochs, "training epochs");
  sub->add_option("--batch-size", f.batch_size, "positive pairs per step")->check(CLI::PositiveNumber);
  sub->add_option("--lr", f.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--arch-a", f.arch_a, "modality A encoder dims, e.g. 784-256-64, or auto / mnist-image")->check(kArch);
  sub->add_option("--arch-b", f.arch_b, "modality B encoder dims, e.g. 100-100-50, or auto / mnist-tag")->check(kArch);
  sub->add_option("--dropout", f.dropout, "dropout rate on hidden layers")->check(CLI::Range(0.0, 0.99));
  sub->add_option("--neg-ratio", f.neg_ratio, "negatives per positive")->check(CLI::PositiveNumber);
  sub->add_option("--cross-ratio", f.cross_ratio, "fraction of positives drawn across same-class rows")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--seed", f.seed, "random seed");
}

std::vector<EvalPair> read_pairs(Run& run, const fs::path& p, const Dataset& d) {
  run.input("--pairs", p);
  return parse_pairs_csv(io::read_file(p), d);
}

Dataset read_dataset(Run& run, const std::string& flag, const fs::path& p) {
  auto d = load_dataset(p);
  run.input(flag, p);
  return d;
}

AnyModel read_model(Run& run, const fs::path& p) {
  auto m = load_model(p);
  run.input("--model", fs::is_directory(p) ? p / "model.txt" : p);
  return m;
}

double model_gamma(const AnyModel& m) {
  if (const auto* t = std::get_if<TrainedModel>(&m)) return t->config.contrastive.gamma;
  if (const auto* l = std::get_if<LinearModel>(&m)) return l->contrastive.gamma;
  return std::numeric_limits<double>::quiet_NaN();
}

void write_detection(Run& run, const AnyModel& model, const Dataset& d, const std::vector<EvalPair>& pairs, double eps) {
  const auto det = std::visit([&](const auto& m) { return detect(m, pairs, d, {eps}); }, model);
  const auto metrics = evaluate(det, pairs);
  run.write("scores.csv", format_scores_csv(det, pairs));
  const double g = model_gamma(model);
  run.write("metrics.csv", metrics_csv_header() + metrics_csv_row(g, eps, metrics));
  std::cout << "precision " << format_metric(metrics.precision, metrics.precision_defined) << " recall "
            << format_metric(metrics.recall, metrics.recall_defined) << " accuracy "
            << format_metric(metrics.accuracy, metrics.accuracy_defined) << "\n";
}

void write_splits(Run& run, const Dataset& d, double test_fraction, Rng& rng) {
  auto record_dir = [&](const std::string& prefix) {
    for (const char* f : {"manifest.txt", "mod_a.csv", "mod_b.csv", "labels_a.csv", "labels_b.csv"}) run.record(prefix + f);
  };
  save_dataset(d, run.out());
  record_dir("");
  if (test_fraction > 0.0) {
    auto [train, test] = split_train_test(d, test_fraction, rng);
    save_dataset(train, run.out() / "train");
    save_dataset(test, run.out() / "test");
    record_dir("train/");
    record_dir("test/");
  }
}

int run_main(int argc, char** argv) {
  CLI::App app{"Cross-modal anomaly detection: synthetic data, dual-encoder training, detection and baselines."};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  std::string out;
  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", out, "output directory")->required(); };

  // gen
  SyntheticOptions gen_opt;
  std::string warp = "none";
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen", "generate a synthetic two-modality dataset (plus train/ and test/ splits)");
  gen->add_option("--classes", gen_opt.num_classes, "number of classes")->check(CLI::Range(2, 1000));
  gen->add_option("--per-class", gen_opt.per_class, "instances per class")->check(CLI::PositiveNumber);
  gen->add_option("--da", gen_opt.d_a, "modality A dimension")->check(CLI::PositiveNumber);
  gen->add_option("--db", gen_opt.d_b, "modality B dimension")->check(CLI::PositiveNumber);
  gen->add_option("--noise", gen_opt.noise, "isotropic noise stddev")->check(CLI::NonNegativeNumber);
  gen->add_option("--warp", warp, "modality B transform")->check(CLI::IsMember({"none", "tanh"}));
  gen->add_option("--warp-gain", gen_opt.warp_gain, "gain inside the tanh warp")->check(CLI::PositiveNumber);
  gen->add_option("--test-fraction", test_fraction, "held-out fraction (0 writes no split)")->check(CLI::Range(0.0, 0.95));
  gen->add_option("--seed", seed, "random seed");
  add_out(gen);

  // inject
  std::string data, test_data, pairs_path, model_path;
  std::size_t num = 100;
  auto* inject = app.add_subcommand("inject", "write an evaluation pair list with anomalous and consistent pairs");
  inject->add_option("--data", data, "dataset directory")->required();
  inject->add_option("--num", num, "anomalous pairs (the same number of consistent pairs is added)");
  inject->add_option("--seed", seed, "random seed");
  add_out(inject);

  // train
  TrainFlags tf;
  std::string method = "cmad";
  LinearFitConfig lin;
  auto* train = app.add_subcommand("train", "train the dual encoder (or the linear projection model)");
  train->add_option("--data", data, "training dataset directory")->required();
  train->add_option("--method", method, "cmad or linear")->check(CLI::IsMember({"cmad", "linear"}));
  add_train_flags(train, tf, true);
  train->add_option("--rank", lin.r, "embedding width of the linear model")->check(CLI::PositiveNumber);
  train->add_option("--max-iters", lin.max_iters, "alternating rounds of the linear model");
  train->add_option("--lambda-reg", lin.contrastive.lambda_reg, "Frobenius penalty of the linear model")
      ->check(CLI::NonNegativeNumber);
  add_out(train);

  // detect
  double epsilon = 0.3;
  auto* det = app.add_subcommand("detect", "score pairs and flag those below the threshold");
  det->add_option("--model", model_path, "model directory or model.txt")->required();
  det->add_option("--data", data, "dataset the pairs refer to")->required();
  det->add_option("--pairs", pairs_path, "pairs.csv")->required();
  det->add_option("--epsilon", epsilon, "anomaly threshold (flag if score < epsilon)")->check(CLI::Range(-1.0, 1.0));
  add_out(det);

  // sweep
  std::string gamma_grid = join_grid(default_gamma_grid()), epsilon_grid = join_grid(default_epsilon_grid());
  auto* sw = app.add_subcommand("sweep", "retrain per gamma and evaluate every epsilon");
  sw->add_option("--data", data, "training dataset directory")->required();
  sw->add_option("--test-data", test_data, "dataset the pairs refer to")->required();
  sw->add_option("--pairs", pairs_path, "pairs.csv")->required();
  sw->add_option("--gamma-grid", gamma_grid, "comma-separated margins")->check(kGrid);
  sw->add_option("--epsilon-grid", epsilon_grid, "comma-separated thresholds")->check(kGrid);
  add_train_flags(sw, tf, false);
  add_out(sw);

  // baseline
  std::size_t rank = 50;
  std::string baseline_method = "cca";
  std::optional<double> ridge;
  std::string kernel = "rbf";
  double bandwidth = 0.0;
  auto* base = app.add_subcommand("baseline", "fit CCA, PLS or kernel CCA on aligned rows (optionally evaluate)");
  base->add_option("--method", baseline_method, "cca, pls or kcca")->check(CLI::IsMember({"cca", "pls", "kcca"}));
  base->add_option("--data", data, "training dataset directory")->required();
  base->add_option("--rank", rank, "projection width, clipped to the admissible maximum")->check(CLI::PositiveNumber);
  base->add_option("--ridge", ridge, "covariance ridge [default: 1e-6, kcca 1e-3]")->check(CLI::NonNegativeNumber);
  base->add_option("--kernel", kernel, "kcca kernel")->check(CLI::IsMember({"rbf", "linear"}));
  base->add_option("--bandwidth", bandwidth, "rbf bandwidth, 0 = median heuristic")->check(CLI::NonNegativeNumber);
  base->add_option("--test-data", test_data, "evaluation dataset (with --pairs)");
  base->add_option("--pairs", pairs_path, "pairs.csv to evaluate")->needs("--test-data");
  base->add_option("--epsilon", epsilon, "anomaly threshold")->check(CLI::Range(-1.0, 1.0));
  add_out(base);

  // viz
  std::string modality = "a", classes;
  auto* viz = app.add_subcommand("viz", "2-D PCA coordinates of one modality's embeddings");
  viz->add_option("--model", model_path, "model directory or model.txt")->required();
  viz->add_option("--data", data, "dataset directory")->required();
  viz->add_option("--modality", modality, "a or b")->check(CLI::IsMember({"a", "b"}));
  viz->add_option("--classes", classes, "comma-separated class filter (empty = all)");
  add_out(viz);

  // reconstruct
  int query_class = 0;
  std::size_t image_rows = 28, image_cols = 28;
  auto* rec = app.add_subcommand("reconstruct", "sum the modality-A rows that match a modality-B query");
  rec->add_option("--model", model_path, "model directory or model.txt")->required();
  rec->add_option("--data", data, "dataset directory (A rows are the image bank)")->required();
  rec->add_option("--class", query_class, "query with the first B row of this class")->required();
  rec->add_option("--epsilon", epsilon, "selection threshold")->check(CLI::Range(-1.0, 1.0));
  rec->add_option("--image-rows", image_rows, "image height")->check(CLI::PositiveNumber);
  rec->add_option("--image-cols", image_cols, "image width")->check(CLI::PositiveNumber);
  add_out(rec);

  // idx-import
  std::string images_path, labels_path;
  std::size_t tag_dim = 100, limit = 0;
  auto* idx = app.add_subcommand("idx-import", "build an image/tag dataset from IDX files");
  idx->add_option("--images", images_path, "IDX image file")->required();
  idx->add_option("--labels", labels_path, "IDX label file")->required();
  idx->add_option("--tag-dim", tag_dim, "pseudo tag dimension")->check(CLI::PositiveNumber);
  idx->add_option("--limit", limit, "keep a seeded random subset of this many images (0 = all)");
  idx->add_option("--test-fraction", test_fraction, "held-out fraction (0 writes no split)")->check(CLI::Range(0.0, 0.95));
  idx->add_option("--seed", seed, "random seed");
  add_out(idx);

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    std::cerr << "unknown subcommand '" << argv[1] << "'\nRun with --help for the list of subcommands.\n";
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  std::string command = "cmad";
  for (int i = 1; i < argc; ++i) command += " " + quote_arg(argv[i]);
  const std::string name = app.get_subcommands().front()->get_name();
  Run run(command, name);

  try {
    run.set_out(out);
    if (name == "gen") {
      gen_opt.warp = warp == "tanh" ? Warp::tanh : Warp::none;
      run.seed(seed);
      Rng rng(seed);
      write_splits(run, gen_synthetic(gen_opt, rng), test_fraction, rng);
    } else if (name == "inject") {
      run.seed(seed);
      const Dataset d = read_dataset(run, "--data", data);
      Rng rng(seed);
      run.write("pairs.csv", format_pairs_csv(inject_anomalies(d, num, rng)));
    } else if (name == "train") {
      const Dataset d = read_dataset(run, "--data", data);
      if (method == "linear") {
        if (lin.r > std::min(d.dim_a(), d.dim_b())) throw UsageError("--rank exceeds min(d_A, d_B)");
        lin.contrastive.gamma = tf.gamma;
        lin.contrastive.lambda_neg = tf.lambda;
        lin.neg_ratio = tf.neg_ratio;
        lin.seed = tf.seed;
        run.seed(tf.seed);
        run.write("model.txt", format_model(fit_linear(d, lin)));
      } else {
        const TrainConfig cfg = tf.config(d);
        run.seed(cfg.seed);
        const auto m = train_cmad(d, cfg);
        run.write("model.txt", format_model(m));
        run.write("train_log.csv", format_train_log(m.trace));
        if (!m.trace.empty()) std::cout << "final mean loss " << io::format_double(m.trace.back().mean_loss) << "\n";
      }
    } else if (name == "detect") {
      const AnyModel model = read_model(run, model_path);
      const Dataset d = read_dataset(run, "--data", data);
      write_detection(run, model, d, read_pairs(run, pairs_path, d), epsilon);
    } else if (name == "sweep") {
      const Dataset train_set = read_dataset(run, "--data", data);
      const Dataset test_set = read_dataset(run, "--test-data", test_data);
      const auto pairs = read_pairs(run, pairs_path, test_set);
      const TrainConfig cfg = tf.config(train_set);
      run.seed(cfg.seed);
      const auto rows = sweep(train_set, test_set, pairs, cfg, parse_grid(gamma_grid), parse_grid(epsilon_grid));
      run.write("metrics.csv", format_metrics_csv(rows));
    } else if (name == "baseline") {
      const Dataset d = read_dataset(run, "--data", data);
      const auto bm = parse_baseline_method(baseline_method);
      std::size_t aligned = 0;
      for (std::size_t i = 0; i < d.size(); ++i) aligned += d.labels_a[i] == d.labels_b[i];
      const std::size_t max_rank = bm == BaselineMethod::kcca ? aligned : std::min(d.dim_a(), d.dim_b());
      const std::size_t r = std::min(rank, max_rank);
      if (r < rank) std::cerr << "note: --rank " << rank << " clipped to " << r << "\n";
      KccaOptions ko;
      ko.kernel = kernel == "linear" ? Kernel::linear : Kernel::rbf;
      ko.bandwidth_a = ko.bandwidth_b = bandwidth;
      const double rd = ridge.value_or(bm == BaselineMethod::kcca ? 1e-3 : 1e-6);
      if (bm == BaselineMethod::kcca && !(rd > 0.0)) throw UsageError("--ridge must be > 0 for kcca");
      const AnyModel model = fit_baseline(d, bm, r, rd, ko);
      run.write("model.txt", format_model(model));
      if (!pairs_path.empty()) {
        const Dataset t = read_dataset(run, "--test-data", test_data);
        write_detection(run, model, t, read_pairs(run, pairs_path, t), epsilon);
      }
    } else if (name == "viz") {
      const AnyModel model = read_model(run, model_path);
      const Dataset d = read_dataset(run, "--data", data);
      std::optional<std::set<int>> filter;
      if (!classes.empty()) {
        filter.emplace();
        for (auto part : io::split(classes, ','))
          filter->insert(static_cast<int>(io::parse_int(io::trim(part), "--classes")));
      }
      const auto view = std::visit(
          [&](const auto& m) { return viz_embeddings(m, d, modality == "a" ? Modality::a : Modality::b, filter); }, model);
      run.write("coords.csv", format_coords_csv(view));
    } else if (name == "reconstruct") {
      const AnyModel model = read_model(run, model_path);
      const Dataset d = read_dataset(run, "--data", data);
      if (image_rows * image_cols != d.dim_a()) {
        throw UsageError("--image-rows x --image-cols = " + std::to_string(image_rows * image_cols) +
                         " does not match modality A width " + std::to_string(d.dim_a()));
      }
      const auto it = std::find(d.labels_b.begin(), d.labels_b.end(), query_class);
      if (it == d.labels_b.end()) throw UsageError("--class " + std::to_string(query_class) + " has no modality B row");
      const auto row = static_cast<std::size_t>(it - d.labels_b.begin());
      const auto img = std::visit(
          [&](const auto& m) { return reconstruct(m, d.mod_b.row(row), d.mod_a, epsilon, image_rows, image_cols); },
          model);
      run.write("reconstruction.pgm", encode_pgm(img));
    } else if (name == "idx-import") {
      run.seed(seed);
      IdxImages raw = load_idx(images_path, labels_path);
      run.input("--images", images_path);
      run.input("--labels", labels_path);
      Rng rng(seed);
      if (limit > 0 && limit < raw.labels.size()) {
        auto perm = permutation(raw.labels.size(), rng);
        perm.resize(limit);
        std::sort(perm.begin(), perm.end());
        IdxImages kept = raw;
        kept.images = select_rows(raw.images, perm);
        kept.labels.clear();
        for (auto i : perm) kept.labels.push_back(raw.labels[i]);
        raw = std::move(kept);
      }
      write_splits(run, image_tag_dataset(raw, tag_dim, rng), test_fraction, rng);
    }
    run.finish();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run_main(argc, argv); }
