#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "fopng/harness.hpp"
#include "fopng/sha256.hpp"
#include "fopng/verification.hpp"

namespace fs = std::filesystem;
using namespace fopng;

namespace {

// Reference digests for the uncompressed standard MNIST IDX files.
const std::map<std::string, std::string> kMnistDigests = {
    {"train-images-idx3-ubyte",
     "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"},
    {"train-labels-idx1-ubyte",
     "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"},
    {"t10k-images-idx3-ubyte",
     "1bf45877962fd391f7abb20534a30fd2203d0865309fec5f87d576dbdbefdcb1"},
    {"t10k-labels-idx1-ubyte",
     "b7e67ca93571f3cd91e14dfe765b32dbd60faf907e60f7d3b49043672daa43b3"}};

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string stream;
  std::string rule;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> overrides;
};

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) cfg = config_from_json_file(opts.config_path);
  if (!opts.stream.empty()) apply_override(cfg, "stream.kind=" + opts.stream);
  if (!opts.rule.empty()) apply_override(cfg, "optimizer.rule=" + opts.rule);
  for (const auto& kv : opts.overrides) apply_override(cfg, kv);
  if (!opts.seeds.empty()) cfg.seeds = opts.seeds;
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON run configuration");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--stream", opts.stream,
                  "stream kind: permuted|rotated|split|synthetic");
  cmd->add_option("--rule", opts.rule,
                  "fopng|fopng_prefisher|fng|ogd|ewc|sgd|adam");
  cmd->add_option("--seed", opts.seeds, "seed (repeatable; replaces config seeds)");
  cmd->add_option("--set", opts.overrides,
                  "config override key=value, e.g. --set optimizer.eta=1e-4");
}

int cmd_run(const CommonOpts& opts) {
  const RunConfig cfg = resolve_config(opts);
  cfg.validate();
  const auto results = run_all_seeds(cfg);
  emit_results(results, cfg, cfg.out_dir);
  for (const auto& r : results) {
    const int T = r.test.num_tasks();
    std::printf("seed %llu: final A_%d = %.4f (degenerate steps: %ld)\n",
                static_cast<unsigned long long>(r.seed), T,
                average_accuracy(r.test, T), r.degenerate_steps);
  }
  std::printf("wrote %s/{results.csv,summary.csv,config.json}\n",
              cfg.out_dir.c_str());
  return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::vector<double>& etas,
              const std::vector<double>& lambdas) {
  RunConfig cfg = resolve_config(opts);
  cfg.validate();
  if (etas.empty() || lambdas.empty()) {
    std::fprintf(stderr, "sweep needs --etas and --lambdas\n");
    return 2;
  }
  const auto points = run_sweep(cfg, etas, lambdas);
  fs::create_directories(cfg.out_dir);
  {
    std::FILE* f = std::fopen((fs::path(cfg.out_dir) / "sweep.csv").c_str(), "w");
    if (!f) throw std::runtime_error("cannot write sweep.csv");
    std::fprintf(f, "eta,lambda,mean_final_val_accuracy,mean_task1_accuracy,passed_filter\n");
    for (const auto& pt : points) {
      std::fprintf(f, "%.17g,%.17g,%.17g,%.17g,%d\n", pt.eta, pt.lambda,
                   pt.mean_final_val_accuracy, pt.mean_task1_accuracy,
                   pt.passed_filter ? 1 : 0);
    }
    std::fclose(f);
  }
  const SweepPoint* best = best_sweep_point(points);
  if (best) {
    RunConfig best_cfg = cfg;
    best_cfg.opt.eta = best->eta;
    best_cfg.opt.lambda = best->lambda;
    std::ofstream os(fs::path(cfg.out_dir) / "best_config.json");
    os << config_to_json_text(best_cfg) << '\n';
    std::printf("best: eta=%g lambda=%g val A=%.4f (task1=%.4f, filter %s)\n",
                best->eta, best->lambda, best->mean_final_val_accuracy,
                best->mean_task1_accuracy, best->passed_filter ? "ok" : "MISSED");
  }
  std::printf("wrote %s/{sweep.csv,best_config.json}\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_verify(std::uint64_t seed) {
  const auto results = verification::run_oracle_suite(seed);
  const bool ok = verification::print_report(results, std::cout);
  std::printf("%s\n", ok ? "all checks passed" : "CHECKS FAILED");
  return ok ? 0 : 1;
}

int cmd_report(const std::string& results_csv, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const fs::path summary = fs::path(out_dir) / "summary.csv";
  summarize_results_csv(results_csv, summary);
  write_plot_script(summary, fs::path(out_dir) / "accuracy.plt");
  std::printf("wrote %s and accuracy.plt\n", summary.string().c_str());
  return 0;
}

int cmd_data_check(const std::string& dir_opt) {
  std::string dir = dir_opt;
  if (dir.empty()) {
    if (const char* env = std::getenv("FOPNG_DATA_DIR")) dir = env;
  }
  if (dir.empty()) {
    std::fprintf(stderr, "data-check: pass --dir or set FOPNG_DATA_DIR\n");
    return 2;
  }
  int mismatches = 0;
  for (const auto& [name, want] : kMnistDigests) {
    const fs::path path = fs::path(dir) / name;
    if (!fs::exists(path)) {
      std::printf("MISSING   %s\n", name.c_str());
      ++mismatches;
      continue;
    }
    const std::string got = sha256_file_hex(path);
    if (got == want) {
      std::printf("OK        %s\n", name.c_str());
    } else {
      std::printf("MISMATCH  %s\n  expected %s\n  got      %s\n", name.c_str(),
                  want.c_str(), got.c_str());
      ++mismatches;
    }
  }
  return mismatches == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FOPNG continual-learning optimizer lab"};
  app.require_subcommand(1);

  CommonOpts run_opts;
  CLI::App* run = app.add_subcommand("run", "run an experiment across seeds");
  add_common(run, run_opts);

  CommonOpts sweep_opts;
  std::vector<double> etas, lambdas;
  CLI::App* sweep = app.add_subcommand("sweep", "grid sweep over eta x lambda");
  add_common(sweep, sweep_opts);
  sweep->add_option("--etas", etas, "learning rates to sweep")->delimiter(',');
  sweep->add_option("--lambdas", lambdas, "regularizers to sweep")->delimiter(',');

  std::uint64_t verify_seed = 2026;
  CLI::App* verify = app.add_subcommand("verify", "run the oracle check suite");
  verify->add_option("--seed", verify_seed, "suite seed");

  std::string report_in, report_out = ".";
  CLI::App* report = app.add_subcommand("report", "summarize a results.csv");
  report->add_option("--in", report_in, "results.csv path")->required();
  report->add_option("--out", report_out, "output directory");

  std::string data_dir;
  CLI::App* data_check =
      app.add_subcommand("data-check", "verify SHA-256 of MNIST IDX files");
  data_check->add_option("--dir", data_dir, "dataset directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_opts);
    if (sweep->parsed()) return cmd_sweep(sweep_opts, etas, lambdas);
    if (verify->parsed()) return cmd_verify(verify_seed);
    if (report->parsed()) return cmd_report(report_in, report_out);
    if (data_check->parsed()) return cmd_data_check(data_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
