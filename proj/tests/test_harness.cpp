#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fopng/harness.hpp"

using namespace fopng;

namespace {

namespace fs = std::filesystem;

RunConfig tiny_config(Rule rule) {
  RunConfig cfg;
  cfg.stream.kind = StreamKind::Synthetic;
  cfg.stream.synthetic.n_tasks = 2;
  cfg.stream.synthetic.dim = 6;
  cfg.stream.synthetic.classes = 3;
  cfg.stream.synthetic.rotation_per_task_deg = 25.0;
  cfg.stream.synthetic.n_train = 200;
  cfg.stream.synthetic.n_test = 120;
  cfg.stream.validation_fraction = 0.1;
  cfg.layer_sizes = {6, 8, 3};
  cfg.opt.rule = rule;
  cfg.opt.eta = rule == Rule::Sgd || rule == Rule::Ogd || rule == Rule::Ewc
                    ? 0.05
                    : (rule == Rule::Adam ? 0.01 : 0.05);
  cfg.opt.lambda = 1e-3;
  cfg.opt.alpha = 0.5;
  cfg.epochs_per_task = 3;
  cfg.batch_size = 10;
  cfg.grads_per_task = 4;
  cfg.max_directions = 8;
  cfg.first_task_lr = 0.1;
  cfg.seeds = {1};
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentResult fake_result(std::uint64_t seed) {
  ExperimentResult r;
  r.seed = seed;
  r.test.rows = {{0.9}, {0.8, 0.7}};
  return r;
}

}  // namespace

TEST_CASE("average_accuracy arithmetic") {
  AccuracyMatrix a;
  a.rows = {{0.9}, {0.8, 0.7}};
  CHECK(average_accuracy(a, 1) == doctest::Approx(0.9));
  CHECK(average_accuracy(a, 2) == doctest::Approx(0.75));
  CHECK(a.at(1, 2) == doctest::Approx(0.8));
  CHECK_THROWS_AS(average_accuracy(a, 3), std::invalid_argument);
  CHECK_THROWS_AS(average_accuracy(a, 0), std::invalid_argument);
  CHECK_THROWS_AS(a.at(2, 1), std::invalid_argument);

  AccuracyMatrix ones;
  ones.rows = {{1.0}, {1.0, 1.0}, {1.0, 1.0, 1.0}};
  CHECK(average_accuracy(ones, 3) == 1.0);
}

TEST_CASE("emit_results writes the documented files deterministically") {
  const fs::path dir = fs::temp_directory_path() / "fopng_emit_test";
  fs::remove_all(dir);
  const RunConfig cfg = tiny_config(Rule::Sgd);

  SUBCASE("one seed, T=2: three accuracy rows and empty CI cells") {
    emit_results({fake_result(7)}, cfg, dir);
    const std::string results = slurp(dir / "results.csv");
    CHECK(std::count(results.begin(), results.end(), '\n') == 4);  // header + 3
    CHECK(results.find("7,1,1,") != std::string::npos);
    CHECK(results.find("7,2,1,") != std::string::npos);
    CHECK(results.find("7,2,2,") != std::string::npos);
    const std::string summary = slurp(dir / "summary.csv");
    CHECK(summary.find(",,,,1\n") != std::string::npos);  // CI empty, 1 seed
    CHECK(fs::exists(dir / "config.json"));
  }

  SUBCASE("re-running reproduces the CSVs byte for byte") {
    emit_results({fake_result(7), fake_result(8)}, cfg, dir);
    const std::string r1 = slurp(dir / "results.csv");
    const std::string s1 = slurp(dir / "summary.csv");
    emit_results({fake_result(7), fake_result(8)}, cfg, dir);
    CHECK(slurp(dir / "results.csv") == r1);
    CHECK(slurp(dir / "summary.csv") == s1);
  }

  SUBCASE("summarize_results_csv agrees with the emitted summary") {
    emit_results({fake_result(7), fake_result(8)}, cfg, dir);
    summarize_results_csv(dir / "results.csv", dir / "summary2.csv");
    CHECK(slurp(dir / "summary2.csv") == slurp(dir / "summary.csv"));
  }

  SUBCASE("plot script points at the summary") {
    emit_results({fake_result(7)}, cfg, dir);
    write_plot_script(dir / "summary.csv", dir / "accuracy.plt");
    CHECK(slurp(dir / "accuracy.plt").find("summary.csv") != std::string::npos);
  }

  fs::remove_all(dir);
}

TEST_CASE("single-task stream: only A_1, no projection path") {
  RunConfig cfg = tiny_config(Rule::Fopng);
  cfg.stream.synthetic.n_tasks = 1;
  cfg.max_directions = 4;
  const ExperimentResult r = run_experiment(cfg, 3);
  CHECK(r.test.num_tasks() == 1);
  CHECK(r.test.rows[0].size() == 1);
  CHECK(average_accuracy(r.test, 1) == r.test.at(1, 1));
}

TEST_CASE("a (config, seed) pair reproduces its AccuracyMatrix bitwise") {
  for (Rule rule : {Rule::Fopng, Rule::FopngPreFisher, Rule::Fng, Rule::Ogd,
                    Rule::Ewc, Rule::Sgd, Rule::Adam}) {
    const RunConfig cfg = tiny_config(rule);
    const ExperimentResult a = run_experiment(cfg, 11);
    const ExperimentResult b = run_experiment(cfg, 11);
    CHECK(a.test == b.test);
    CHECK(a.validation == b.validation);
  }
}

TEST_CASE("fopng with zero stored gradients reproduces fng end to end") {
  RunConfig fopng_cfg = tiny_config(Rule::Fopng);
  fopng_cfg.grads_per_task = 0;
  RunConfig fng_cfg = tiny_config(Rule::Fng);
  fng_cfg.grads_per_task = 0;
  const ExperimentResult a = run_experiment(fopng_cfg, 5);
  const ExperimentResult b = run_experiment(fng_cfg, 5);
  REQUIRE(a.test.num_tasks() == b.test.num_tasks());
  for (int k = 1; k <= a.test.num_tasks(); ++k) {
    for (int i = 1; i <= k; ++i) {
      CHECK(a.test.at(i, k) == doctest::Approx(b.test.at(i, k)).epsilon(1e-12));
    }
  }
}

TEST_CASE("swapping the rule leaves task-1 training identical") {
  const ExperimentResult a = run_experiment(tiny_config(Rule::Fopng), 9);
  const ExperimentResult b = run_experiment(tiny_config(Rule::Ogd), 9);
  const ExperimentResult c = run_experiment(tiny_config(Rule::Sgd), 9);
  CHECK(a.test.at(1, 1) == b.test.at(1, 1));
  CHECK(a.test.at(1, 1) == c.test.at(1, 1));
}

TEST_CASE("identical-task control: fopng holds task-1 accuracy") {
  RunConfig cfg = tiny_config(Rule::Fopng);
  cfg.stream.synthetic.rotation_per_task_deg = 0.0;  // task 2 == task 1
  cfg.seeds = {1, 2, 3};
  std::vector<double> drop;
  for (const std::uint64_t seed : cfg.seeds) {
    const ExperimentResult r = run_experiment(cfg, seed);
    drop.push_back(r.test.at(1, 1) - r.test.at(1, 2));
  }
  std::sort(drop.begin(), drop.end());
  CHECK(drop[1] <= 0.02);  // 3-seed median within 2 accuracy points
}

TEST_CASE("run_all_seeds matches per-seed runs in order") {
  RunConfig cfg = tiny_config(Rule::Fng);
  cfg.seeds = {4, 5, 6};
  const auto all = run_all_seeds(cfg);
  REQUIRE(all.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(all[i].seed == cfg.seeds[i]);
    CHECK(all[i].test == run_experiment(cfg, cfg.seeds[i]).test);
  }
}

TEST_CASE("memory capacity is validated against the task count") {
  RunConfig cfg = tiny_config(Rule::Fopng);
  cfg.grads_per_task = 5;
  cfg.max_directions = 9;  // 2 tasks * 5 > 9
  CHECK_THROWS_AS(run_experiment(cfg, 1), std::invalid_argument);
}

TEST_CASE("config json round-trip and overrides") {
  RunConfig cfg = tiny_config(Rule::FopngPreFisher);
  cfg.fisher_batch_size = 16;
  const std::string text = config_to_json_text(cfg);
  const RunConfig back = config_from_json_text(text);
  CHECK(config_to_json_text(back) == text);
  CHECK(back.opt.rule == Rule::FopngPreFisher);
  CHECK(back.fisher_batch_size == Index{16});

  RunConfig cfg2 = cfg;
  apply_override(cfg2, "optimizer.eta=0.25");
  CHECK(cfg2.opt.eta == 0.25);
  apply_override(cfg2, "fisher_batch_size=full");
  CHECK_FALSE(cfg2.fisher_batch_size.has_value());
  apply_override(cfg2, "seeds=[7,8]");
  CHECK(cfg2.seeds == std::vector<std::uint64_t>{7, 8});
  apply_override(cfg2, "stream.kind=split");
  CHECK(cfg2.stream.kind == StreamKind::Split);
  CHECK_THROWS_AS(apply_override(cfg2, "no_such_key=1"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(cfg2, "malformed"), std::invalid_argument);
}

TEST_CASE("sweep grid with the 90% first-task filter") {
  RunConfig cfg = tiny_config(Rule::Fng);
  cfg.first_task_lr = 0.0;  // first task uses the swept eta
  cfg.seeds = {1, 2};
  const auto points = run_sweep(cfg, {0.05, 1e-6}, {1e-3});
  REQUIRE(points.size() == 2);
  // the degenerate learning rate cannot reach 90% on task 1
  CHECK(points[0].passed_filter);
  CHECK_FALSE(points[1].passed_filter);
  const SweepPoint* best = best_sweep_point(points);
  REQUIRE(best != nullptr);
  CHECK(best->eta == 0.05);

  RunConfig no_val = cfg;
  no_val.stream.validation_fraction = 0.0;
  CHECK_THROWS_AS(run_sweep(no_val, {0.1}, {1e-3}), std::invalid_argument);
}

TEST_CASE("mnist streams require a data directory") {
  RunConfig cfg = tiny_config(Rule::Sgd);
  cfg.stream.kind = StreamKind::Split;
  cfg.stream.data_dir.clear();
  if (std::getenv("FOPNG_DATA_DIR") == nullptr) {
    CHECK_THROWS_AS(run_experiment(cfg, 1), std::runtime_error);
  }
}

namespace {

// 28x28 IDX fixture with one blob location per class, enough structure for
// the split stream to form all five tasks
void write_fake_mnist(const fs::path& dir) {
  fs::create_directories(dir);
  auto write_pair = [&](const char* img_name, const char* lab_name, int n) {
    std::ofstream img(dir / img_name, std::ios::binary);
    std::ofstream lab(dir / lab_name, std::ios::binary);
    auto be32 = [](std::ofstream& os, std::uint32_t v) {
      const unsigned char b[4] = {
          static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
      os.write(reinterpret_cast<const char*>(b), 4);
    };
    be32(img, 2051);
    be32(img, static_cast<std::uint32_t>(n));
    be32(img, 28);
    be32(img, 28);
    be32(lab, 2049);
    be32(lab, static_cast<std::uint32_t>(n));
    for (int i = 0; i < n; ++i) {
      const unsigned char label = static_cast<unsigned char>(i % 10);
      lab.put(static_cast<char>(label));
      const int cr = 4 + (label / 5) * 14;
      const int cc = 2 + (label % 5) * 5;
      for (int r = 0; r < 28; ++r) {
        for (int c = 0; c < 28; ++c) {
          const bool lit = std::abs(r - cr) <= 2 && std::abs(c - cc) <= 2;
          img.put(static_cast<char>(lit ? 200 + (i % 50) : 0));
        }
      }
    }
  };
  write_pair("train-images-idx3-ubyte", "train-labels-idx1-ubyte", 200);
  write_pair("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", 100);
}

}  // namespace

TEST_CASE("split-mnist pipeline end to end on a fixture dataset") {
  const fs::path dir = fs::temp_directory_path() / "fopng_fake_mnist";
  write_fake_mnist(dir);

  RunConfig cfg;
  cfg.stream.kind = StreamKind::Split;
  cfg.stream.data_dir = dir.string();
  cfg.stream.train_cap = 16;
  cfg.stream.validation_fraction = 0.0;
  cfg.layer_sizes = {784, 100, 100, 10};
  cfg.opt.rule = Rule::Fopng;
  cfg.opt.eta = 1e-5;
  cfg.opt.lambda = 5e-4;
  cfg.opt.alpha = 0.5;
  cfg.epochs_per_task = 1;
  cfg.batch_size = 10;
  cfg.grads_per_task = 2;
  cfg.max_directions = 10;
  cfg.seeds = {1};

  const ExperimentResult r = run_experiment(cfg, 1);
  REQUIRE(r.test.num_tasks() == 5);  // 5x5 lower-triangular matrix
  for (int k = 1; k <= 5; ++k) {
    CHECK(r.test.rows[static_cast<std::size_t>(k - 1)].size() ==
          static_cast<std::size_t>(k));
    for (int i = 1; i <= k; ++i) {
      CHECK(r.test.at(i, k) >= 0.0);
      CHECK(r.test.at(i, k) <= 1.0);
    }
  }
  fs::remove_all(dir);
}
