#include "fopng/harness.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace fopng {

using nlohmann::json;

namespace {

// rng stream tags: every consumer of randomness gets its own child stream of
// the run seed, so changing one consumer never perturbs another.
constexpr std::uint64_t kTagStream = 0x11;
constexpr std::uint64_t kTagInit = 0x22;
constexpr std::uint64_t kTagShuffle = 0x33;
constexpr std::uint64_t kTagFisherEpoch = 0x44;
constexpr std::uint64_t kTagFisherTask = 0x55;
constexpr std::uint64_t kTagStore = 0x66;
constexpr std::uint64_t kTagSubset = 0x77;
constexpr std::uint64_t kTagValSplit = 0x88;

bool rule_uses_memory(Rule rule) {
  return rule == Rule::Fopng || rule == Rule::FopngPreFisher || rule == Rule::Ogd;
}

bool rule_uses_fisher_per_epoch(Rule rule) {
  return rule == Rule::Fopng || rule == Rule::FopngPreFisher || rule == Rule::Fng;
}

Batch gather(const Dataset& ds, const std::vector<std::size_t>& order,
             std::size_t begin, std::size_t end) {
  Batch b;
  b.inputs.resize(static_cast<Index>(end - begin), ds.images.cols());
  b.labels.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    b.inputs.row(static_cast<Index>(i - begin)) =
        ds.images.row(static_cast<Index>(order[i]));
    b.labels[i - begin] = ds.labels[order[i]];
  }
  return b;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

unsigned parallel_jobs() {
  if (const char* env = std::getenv("FOPNG_JOBS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

}  // namespace

void RunConfig::validate() const {
  opt.validate();
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("RunConfig: need at least 2 layer sizes");
  }
  if (epochs_per_task < 1) throw std::invalid_argument("RunConfig: epochs_per_task < 1");
  if (batch_size < 1) throw std::invalid_argument("RunConfig: batch_size < 1");
  if (grads_per_task < 0) throw std::invalid_argument("RunConfig: grads_per_task < 0");
  if (max_directions < 0) throw std::invalid_argument("RunConfig: max_directions < 0");
  if (fisher_batch_size && *fisher_batch_size < 1) {
    throw std::invalid_argument("RunConfig: fisher_batch_size < 1");
  }
  if (first_task_optimizer != "sgd" && first_task_optimizer != "adam") {
    throw std::invalid_argument("RunConfig: first_task_optimizer must be sgd or adam");
  }
  if (seeds.empty()) throw std::invalid_argument("RunConfig: no seeds");
}

double AccuracyMatrix::at(int task_eval, int task_trained) const {
  if (task_trained < 1 || task_trained > num_tasks() || task_eval < 1 ||
      task_eval > task_trained) {
    throw std::invalid_argument("AccuracyMatrix: index out of range");
  }
  return rows[static_cast<std::size_t>(task_trained - 1)]
             [static_cast<std::size_t>(task_eval - 1)];
}

double average_accuracy(const AccuracyMatrix& a, int k) {
  if (k < 1 || k > a.num_tasks()) {
    throw std::invalid_argument("average_accuracy: k out of range");
  }
  const auto& row = a.rows[static_cast<std::size_t>(k - 1)];
  double sum = 0.0;
  for (double v : row) sum += v;
  return sum / static_cast<double>(row.size());
}

std::string resolve_data_dir(const StreamConfig& stream) {
  if (!stream.data_dir.empty()) return stream.data_dir;
  if (const char* env = std::getenv("FOPNG_DATA_DIR")) return env;
  return {};
}

std::pair<Dataset, Dataset> load_mnist(const std::filesystem::path& dir) {
  Dataset train = load_idx(dir / "train-images-idx3-ubyte",
                           dir / "train-labels-idx1-ubyte", Split::Train);
  Dataset test = load_idx(dir / "t10k-images-idx3-ubyte",
                          dir / "t10k-labels-idx1-ubyte", Split::Test);
  return {std::move(train), std::move(test)};
}

TaskStream build_stream(const RunConfig& cfg, std::uint64_t seed,
                        std::vector<Dataset>* validation_out) {
  Rng run_rng(seed);
  Rng stream_rng = run_rng.child({kTagStream});

  TaskStream stream;
  if (cfg.stream.kind == StreamKind::Synthetic) {
    stream = make_synthetic_stream(cfg.stream.synthetic, stream_rng);
  } else {
    const std::string dir = resolve_data_dir(cfg.stream);
    if (dir.empty()) {
      throw std::runtime_error(
          "MNIST stream requested but no data directory configured "
          "(set stream.data_dir or FOPNG_DATA_DIR)");
    }
    auto [train, test] = load_mnist(dir);
    switch (cfg.stream.kind) {
      case StreamKind::Permuted:
        stream = make_permuted_stream(train, test, cfg.stream.n_tasks, stream_rng);
        break;
      case StreamKind::Rotated:
        stream = make_rotated_stream(train, test, cfg.stream.angles_deg);
        break;
      case StreamKind::Split:
        stream = make_split_stream(train, test, cfg.stream.classes_per_task);
        break;
      case StreamKind::Synthetic:
        break;  // unreachable
    }
  }

  if (validation_out) validation_out->clear();
  for (Task& task : stream.tasks) {
    const std::uint64_t tid = static_cast<std::uint64_t>(task.id);
    if (cfg.stream.train_cap > 0) {
      Rng sub_rng = run_rng.child({kTagSubset, tid});
      task.train = subset(task.train, cfg.stream.train_cap, sub_rng);
    }
    Dataset val;
    if (cfg.stream.validation_fraction > 0.0) {
      Rng val_rng = run_rng.child({kTagValSplit, tid});
      auto [tr, va] = split_validation(task.train, cfg.stream.validation_fraction,
                                       val_rng);
      task.train = std::move(tr);
      val = std::move(va);
    }
    if (validation_out) validation_out->push_back(std::move(val));
  }
  return stream;
}

double evaluate_accuracy(const Mlp& model, const VecX& theta,
                         const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  Index correct = 0;
  for (Index i = 0; i < ds.size(); ++i) {
    const VecX logits = model.forward(theta, ds.images.row(i).transpose());
    Index argmax = 0;
    logits.maxCoeff(&argmax);
    if (static_cast<int>(argmax) == ds.labels[static_cast<std::size_t>(i)]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

ExperimentResult run_experiment(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<Dataset> vals;
  TaskStream stream = build_stream(cfg, seed, &vals);
  const int T = stream.num_tasks();
  const Rule rule = cfg.opt.rule;
  if (rule_uses_memory(rule) && cfg.grads_per_task > 0 &&
      static_cast<Index>(T) * cfg.grads_per_task > cfg.max_directions) {
    throw std::invalid_argument(
        "RunConfig: T * grads_per_task exceeds max_directions");
  }

  Rng run_rng(seed);
  ModelSpec spec;
  spec.layer_sizes = cfg.layer_sizes;
  spec.seed = run_rng.child({kTagInit}).seed();
  const Mlp model(spec);
  const Index p = model.param_count();
  VecX theta = model.init_params();

  ExperimentResult result;
  result.seed = seed;

  const bool prefisher = rule == Rule::FopngPreFisher;
  GradientMemory memory(p, cfg.max_directions,
                        prefisher ? MemoryVariant::PreFisher : MemoryVariant::Raw);
  DiagFisher F_old;         // fopng EMA state
  DiagFisher F_new;         // per-epoch estimate
  OgdBasis ogd_basis(p);
  EwcState ewc_state;
  AdamState adam_state(p);       // rule == adam, tasks 2..T
  AdamState first_adam_state(p); // first-task optimizer
  const double first_lr = cfg.first_task_lr > 0.0 ? cfg.first_task_lr : cfg.opt.eta;

  for (int t = 1; t <= T; ++t) {
    const Task& task = stream.tasks[static_cast<std::size_t>(t - 1)];
    const Batch task_batch = task.train.as_batch();
    const std::size_t n = static_cast<std::size_t>(task.train.size());
    first_adam_state = AdamState(p);

    for (int e = 1; e <= cfg.epochs_per_task; ++e) {
      std::optional<FisherProjector> projector;
      if (t >= 2 && rule_uses_fisher_per_epoch(rule)) {
        Rng fisher_rng = run_rng.child({kTagFisherEpoch,
                                        static_cast<std::uint64_t>(t),
                                        static_cast<std::uint64_t>(e)});
        F_new = estimate_diag_fisher(model, theta, task_batch, cfg.fisher_mode,
                                     cfg.fisher_batch_size, fisher_rng, t);
        if (rule == Rule::Fopng && memory.size() > 0) {
          projector.emplace(FisherProjector::raw(memory.as_matrix(), F_old.values,
                                                 F_new.values, cfg.opt.lambda));
        } else if (rule == Rule::FopngPreFisher && memory.size() > 0) {
          projector.emplace(FisherProjector::prefisher(
              memory.as_matrix(), F_new.values, cfg.opt.lambda));
        }
      }

      Rng shuffle_rng = run_rng.child({kTagShuffle,
                                       static_cast<std::uint64_t>(t),
                                       static_cast<std::uint64_t>(e)});
      const auto order = shuffle_rng.permutation(n);
      for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t b1 = std::min(n, b0 + static_cast<std::size_t>(cfg.batch_size));
        const Batch batch = gather(task.train, order, b0, b1);
        const auto [loss, g] = model.loss_and_grad(theta, batch);
        (void)loss;
        try {
          VecX v;
          if (t == 1) {
            v = cfg.first_task_optimizer == "adam"
                    ? adam_update(g, first_adam_state, first_lr, cfg.opt.adam_beta1,
                                  cfg.opt.adam_beta2, cfg.opt.adam_eps)
                    : sgd_update(g, first_lr);
          } else {
            switch (rule) {
              case Rule::Fopng:
              case Rule::FopngPreFisher:
                v = projector
                        ? trust_region_step(projector->project(g), F_new,
                                            cfg.opt.eta, cfg.opt.lambda)
                        : fng_update(g, F_new, cfg.opt.eta, cfg.opt.lambda);
                break;
              case Rule::Fng:
                v = fng_update(g, F_new, cfg.opt.eta, cfg.opt.lambda);
                break;
              case Rule::Ogd:
                v = cfg.opt.eta * ogd_basis.project(g);
                break;
              case Rule::Ewc:
                v = cfg.opt.eta *
                    ewc_gradient(g, theta, ewc_state, cfg.opt.lambda);
                break;
              case Rule::Sgd:
                v = sgd_update(g, cfg.opt.eta);
                break;
              case Rule::Adam:
                v = adam_update(g, adam_state, cfg.opt.eta, cfg.opt.adam_beta1,
                                cfg.opt.adam_beta2, cfg.opt.adam_eps);
                break;
            }
          }
          theta -= v;
        } catch (const DegenerateUpdateError&) {
          ++result.degenerate_steps;  // skip the step
        }
      }
    }

    // end-of-task bookkeeping
    const std::uint64_t tid = static_cast<std::uint64_t>(t);
    switch (rule) {
      case Rule::Fopng: {
        if (t == 1) {
          Rng fr = run_rng.child({kTagFisherTask, tid});
          F_old = estimate_diag_fisher(model, theta, task_batch, cfg.fisher_mode,
                                       cfg.fisher_batch_size, fr, t);
        } else {
          F_old = ema_update(F_old, F_new, cfg.opt.alpha);
        }
        if (cfg.grads_per_task > 0) {
          Rng sr = run_rng.child({kTagStore, tid});
          memory.store_task_gradients(model, theta, task_batch,
                                      cfg.grads_per_task, t, nullptr, sr,
                                      cfg.stored_grad);
        }
        break;
      }
      case Rule::FopngPreFisher: {
        if (cfg.grads_per_task > 0) {
          Rng fr = run_rng.child({kTagFisherTask, tid});
          const DiagFisher F_task =
              estimate_diag_fisher(model, theta, task_batch, cfg.fisher_mode,
                                   cfg.fisher_batch_size, fr, t);
          Rng sr = run_rng.child({kTagStore, tid});
          memory.store_task_gradients(model, theta, task_batch,
                                      cfg.grads_per_task, t, &F_task, sr,
                                      cfg.stored_grad);
        }
        break;
      }
      case Rule::Ogd: {
        if (cfg.grads_per_task > 0) {
          const Index before = memory.size();
          Rng sr = run_rng.child({kTagStore, tid});
          memory.store_task_gradients(model, theta, task_batch,
                                      cfg.grads_per_task, t, nullptr, sr,
                                      cfg.stored_grad);
          const Index dropped_before = ogd_basis.dropped();
          ogd_basis.absorb(
              memory.as_matrix().rightCols(memory.size() - before));
          result.dropped_directions += ogd_basis.dropped() - dropped_before;
        }
        break;
      }
      case Rule::Ewc: {
        Rng fr = run_rng.child({kTagFisherTask, tid});
        const DiagFisher F_task =
            estimate_diag_fisher(model, theta, task_batch, cfg.fisher_mode,
                                 cfg.fisher_batch_size, fr, t);
        ewc_state.anchors.push_back({theta, F_task.values});
        break;
      }
      case Rule::Fng:
      case Rule::Sgd:
      case Rule::Adam:
        break;
    }

    std::vector<double> test_row, val_row;
    for (int i = 1; i <= t; ++i) {
      test_row.push_back(evaluate_accuracy(
          model, theta, stream.tasks[static_cast<std::size_t>(i - 1)].test));
      if (cfg.stream.validation_fraction > 0.0) {
        val_row.push_back(evaluate_accuracy(
            model, theta, vals[static_cast<std::size_t>(i - 1)]));
      }
    }
    result.test.rows.push_back(std::move(test_row));
    if (cfg.stream.validation_fraction > 0.0) {
      result.validation.rows.push_back(std::move(val_row));
    }
  }
  return result;
}

std::vector<ExperimentResult> run_all_seeds(const RunConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.seeds.size();
  std::vector<ExperimentResult> out(n);
  const unsigned jobs = std::min<unsigned>(parallel_jobs(),
                                           static_cast<unsigned>(n));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = run_experiment(cfg, cfg.seeds[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) break;
      try {
        out[i] = run_experiment(cfg, cfg.seeds[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (unsigned j = 0; j < jobs; ++j) threads.emplace_back(worker);
  for (auto& th : threads) th.join();
  if (error) std::rethrow_exception(error);
  return out;
}

void emit_results(const std::vector<ExperimentResult>& results,
                  const RunConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  {
    std::ofstream os(out_dir / "results.csv");
    if (!os) throw std::runtime_error("emit_results: cannot write results.csv");
    os << "seed,task_trained,task_eval,accuracy,avg_accuracy\n";
    for (const auto& r : results) {
      for (int k = 1; k <= r.test.num_tasks(); ++k) {
        const double a_k = average_accuracy(r.test, k);
        for (int i = 1; i <= k; ++i) {
          os << r.seed << ',' << k << ',' << i << ','
             << fmt_double(r.test.at(i, k)) << ',' << fmt_double(a_k) << '\n';
        }
      }
    }
  }

  {
    std::ofstream os(out_dir / "summary.csv");
    if (!os) throw std::runtime_error("emit_results: cannot write summary.csv");
    os << "task_trained,mean_avg_accuracy,ci68_lo,ci68_hi,ci95_lo,ci95_hi,num_seeds\n";
    const int T = results.empty() ? 0 : results.front().test.num_tasks();
    const std::size_t s = results.size();
    for (int k = 1; k <= T; ++k) {
      double mean = 0.0;
      for (const auto& r : results) mean += average_accuracy(r.test, k);
      mean /= static_cast<double>(s);
      os << k << ',' << fmt_double(mean) << ',';
      if (s >= 2) {
        double var = 0.0;
        for (const auto& r : results) {
          const double d = average_accuracy(r.test, k) - mean;
          var += d * d;
        }
        var /= static_cast<double>(s - 1);
        const double sem = std::sqrt(var / static_cast<double>(s));
        os << fmt_double(mean - sem) << ',' << fmt_double(mean + sem) << ','
           << fmt_double(mean - 1.96 * sem) << ',' << fmt_double(mean + 1.96 * sem);
      } else {
        os << ",,,";  // CI undefined with one seed
      }
      os << ',' << s << '\n';
    }
  }

  {
    std::ofstream os(out_dir / "config.json");
    if (!os) throw std::runtime_error("emit_results: cannot write config.json");
    os << config_to_json_text(cfg) << '\n';
  }
}

void write_plot_script(const std::filesystem::path& summary_csv,
                       const std::filesystem::path& script_path) {
  std::ofstream os(script_path);
  if (!os) throw std::runtime_error("write_plot_script: cannot write script");
  os << "set datafile separator ','\n"
     << "set xlabel 'tasks trained'\n"
     << "set ylabel 'average accuracy A_k'\n"
     << "set yrange [0:1]\n"
     << "set key bottom left\n"
     << "plot '" << summary_csv.string()
     << "' skip 1 using 1:2:3:4 with yerrorlines title 'mean A_k (68% CI)'\n";
}

void summarize_results_csv(const std::filesystem::path& results_csv,
                           const std::filesystem::path& summary_csv) {
  std::ifstream is(results_csv);
  if (!is) throw std::runtime_error("summarize_results_csv: cannot open input");
  std::string line;
  std::getline(is, line);  // header
  // avg_accuracy repeats per (seed, k); collect one value per pair
  std::map<int, std::map<std::uint64_t, double>> a_k_by_task;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) {
      throw std::runtime_error("summarize_results_csv: malformed row");
    }
    const std::uint64_t seed = std::stoull(cells[0]);
    const int k = std::stoi(cells[1]);
    a_k_by_task[k][seed] = std::stod(cells[4]);
  }
  std::ofstream os(summary_csv);
  if (!os) throw std::runtime_error("summarize_results_csv: cannot write output");
  os << "task_trained,mean_avg_accuracy,ci68_lo,ci68_hi,ci95_lo,ci95_hi,num_seeds\n";
  for (const auto& [k, by_seed] : a_k_by_task) {
    const std::size_t s = by_seed.size();
    double mean = 0.0;
    for (const auto& [seed, v] : by_seed) mean += v;
    mean /= static_cast<double>(s);
    os << k << ',' << fmt_double(mean) << ',';
    if (s >= 2) {
      double var = 0.0;
      for (const auto& [seed, v] : by_seed) var += (v - mean) * (v - mean);
      var /= static_cast<double>(s - 1);
      const double sem = std::sqrt(var / static_cast<double>(s));
      os << fmt_double(mean - sem) << ',' << fmt_double(mean + sem) << ','
         << fmt_double(mean - 1.96 * sem) << ',' << fmt_double(mean + 1.96 * sem);
    } else {
      os << ",,,";
    }
    os << ',' << s << '\n';
  }
}

std::vector<SweepPoint> run_sweep(const RunConfig& base,
                                  const std::vector<double>& etas,
                                  const std::vector<double>& lambdas) {
  if (base.stream.validation_fraction <= 0.0) {
    throw std::invalid_argument(
        "run_sweep: validation_fraction must be > 0 for the selection rule");
  }
  std::vector<SweepPoint> points;
  for (double eta : etas) {
    for (double lambda : lambdas) {
      RunConfig cfg = base;
      cfg.opt.eta = eta;
      cfg.opt.lambda = lambda;
      const auto results = run_all_seeds(cfg);
      SweepPoint pt;
      pt.eta = eta;
      pt.lambda = lambda;
      const int T = results.front().validation.num_tasks();
      for (const auto& r : results) {
        pt.mean_final_val_accuracy += average_accuracy(r.validation, T);
        pt.mean_task1_accuracy += r.validation.at(1, 1);
      }
      pt.mean_final_val_accuracy /= static_cast<double>(results.size());
      pt.mean_task1_accuracy /= static_cast<double>(results.size());
      pt.passed_filter = pt.mean_task1_accuracy >= 0.9;
      points.push_back(pt);
    }
  }
  return points;
}

const SweepPoint* best_sweep_point(const std::vector<SweepPoint>& points) {
  const SweepPoint* best = nullptr;
  for (const auto& pt : points) {
    if (!pt.passed_filter) continue;
    if (!best || pt.mean_final_val_accuracy > best->mean_final_val_accuracy) {
      best = &pt;
    }
  }
  if (!best) {  // nothing reached 90% on task 1; fall back to the overall max
    for (const auto& pt : points) {
      if (!best || pt.mean_final_val_accuracy > best->mean_final_val_accuracy) {
        best = &pt;
      }
    }
  }
  return best;
}

// --- config (de)serialization ---

namespace {

std::string stream_kind_name(StreamKind k) {
  switch (k) {
    case StreamKind::Permuted: return "permuted";
    case StreamKind::Rotated: return "rotated";
    case StreamKind::Split: return "split";
    case StreamKind::Synthetic: return "synthetic";
  }
  return "?";
}

StreamKind stream_kind_from(const std::string& s) {
  if (s == "permuted") return StreamKind::Permuted;
  if (s == "rotated") return StreamKind::Rotated;
  if (s == "split") return StreamKind::Split;
  if (s == "synthetic") return StreamKind::Synthetic;
  throw std::invalid_argument("unknown stream kind: " + s);
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["stream"]["kind"] = stream_kind_name(cfg.stream.kind);
  j["stream"]["n_tasks"] = cfg.stream.n_tasks;
  j["stream"]["angles_deg"] = cfg.stream.angles_deg;
  j["stream"]["classes_per_task"] = cfg.stream.classes_per_task;
  j["stream"]["synthetic"] = {{"n_tasks", cfg.stream.synthetic.n_tasks},
                              {"dim", cfg.stream.synthetic.dim},
                              {"classes", cfg.stream.synthetic.classes},
                              {"rotation_per_task_deg", cfg.stream.synthetic.rotation_per_task_deg},
                              {"n_train", cfg.stream.synthetic.n_train},
                              {"n_test", cfg.stream.synthetic.n_test},
                              {"radius", cfg.stream.synthetic.radius},
                              {"sigma", cfg.stream.synthetic.sigma},
                              {"split_classes", cfg.stream.synthetic.split_classes}};
  j["stream"]["train_cap"] = cfg.stream.train_cap;
  j["stream"]["validation_fraction"] = cfg.stream.validation_fraction;
  j["stream"]["data_dir"] = cfg.stream.data_dir;
  j["model"]["layer_sizes"] = cfg.layer_sizes;
  j["optimizer"] = {{"rule", to_string(cfg.opt.rule)},
                    {"eta", cfg.opt.eta},
                    {"lambda", cfg.opt.lambda},
                    {"alpha", cfg.opt.alpha},
                    {"adam_beta1", cfg.opt.adam_beta1},
                    {"adam_beta2", cfg.opt.adam_beta2},
                    {"adam_eps", cfg.opt.adam_eps}};
  j["epochs_per_task"] = cfg.epochs_per_task;
  j["batch_size"] = cfg.batch_size;
  j["grads_per_task"] = cfg.grads_per_task;
  j["max_directions"] = cfg.max_directions;
  if (cfg.fisher_batch_size) {
    j["fisher_batch_size"] = *cfg.fisher_batch_size;
  } else {
    j["fisher_batch_size"] = "full";
  }
  j["fisher_mode"] = cfg.fisher_mode == FisherMode::Sampled ? "sampled" : "empirical";
  j["stored_grad"] = cfg.stored_grad == StoredGradKind::GroundTruthLogit ? "logit" : "loss";
  j["first_task_optimizer"] = cfg.first_task_optimizer;
  j["first_task_lr"] = cfg.first_task_lr;
  j["seeds"] = cfg.seeds;
  j["out_dir"] = cfg.out_dir;
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  if (j.contains("stream")) {
    const json& s = j["stream"];
    if (s.contains("kind")) cfg.stream.kind = stream_kind_from(s["kind"]);
    cfg.stream.n_tasks = s.value("n_tasks", cfg.stream.n_tasks);
    if (s.contains("angles_deg")) {
      cfg.stream.angles_deg = s["angles_deg"].get<std::vector<double>>();
    }
    cfg.stream.classes_per_task = s.value("classes_per_task", cfg.stream.classes_per_task);
    if (s.contains("synthetic")) {
      const json& sy = s["synthetic"];
      cfg.stream.synthetic.n_tasks = sy.value("n_tasks", cfg.stream.synthetic.n_tasks);
      cfg.stream.synthetic.dim = sy.value("dim", cfg.stream.synthetic.dim);
      cfg.stream.synthetic.classes = sy.value("classes", cfg.stream.synthetic.classes);
      cfg.stream.synthetic.rotation_per_task_deg =
          sy.value("rotation_per_task_deg", cfg.stream.synthetic.rotation_per_task_deg);
      cfg.stream.synthetic.n_train = sy.value("n_train", cfg.stream.synthetic.n_train);
      cfg.stream.synthetic.n_test = sy.value("n_test", cfg.stream.synthetic.n_test);
      cfg.stream.synthetic.radius = sy.value("radius", cfg.stream.synthetic.radius);
      cfg.stream.synthetic.sigma = sy.value("sigma", cfg.stream.synthetic.sigma);
      cfg.stream.synthetic.split_classes =
          sy.value("split_classes", cfg.stream.synthetic.split_classes);
    }
    cfg.stream.train_cap = s.value("train_cap", cfg.stream.train_cap);
    cfg.stream.validation_fraction =
        s.value("validation_fraction", cfg.stream.validation_fraction);
    cfg.stream.data_dir = s.value("data_dir", cfg.stream.data_dir);
  }
  if (j.contains("model") && j["model"].contains("layer_sizes")) {
    cfg.layer_sizes = j["model"]["layer_sizes"].get<std::vector<int>>();
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    if (o.contains("rule")) cfg.opt.rule = rule_from_string(o["rule"]);
    cfg.opt.eta = o.value("eta", cfg.opt.eta);
    cfg.opt.lambda = o.value("lambda", cfg.opt.lambda);
    cfg.opt.alpha = o.value("alpha", cfg.opt.alpha);
    cfg.opt.adam_beta1 = o.value("adam_beta1", cfg.opt.adam_beta1);
    cfg.opt.adam_beta2 = o.value("adam_beta2", cfg.opt.adam_beta2);
    cfg.opt.adam_eps = o.value("adam_eps", cfg.opt.adam_eps);
  }
  cfg.epochs_per_task = j.value("epochs_per_task", cfg.epochs_per_task);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.grads_per_task = j.value("grads_per_task", cfg.grads_per_task);
  cfg.max_directions = j.value("max_directions", cfg.max_directions);
  if (j.contains("fisher_batch_size")) {
    const json& f = j["fisher_batch_size"];
    if (f.is_string() && f == "full") {
      cfg.fisher_batch_size.reset();
    } else {
      cfg.fisher_batch_size = f.get<Index>();
    }
  }
  if (j.contains("fisher_mode")) {
    const std::string m = j["fisher_mode"];
    if (m == "sampled") {
      cfg.fisher_mode = FisherMode::Sampled;
    } else if (m == "empirical") {
      cfg.fisher_mode = FisherMode::Empirical;
    } else {
      throw std::invalid_argument("unknown fisher_mode: " + m);
    }
  }
  if (j.contains("stored_grad")) {
    const std::string m = j["stored_grad"];
    if (m == "logit") {
      cfg.stored_grad = StoredGradKind::GroundTruthLogit;
    } else if (m == "loss") {
      cfg.stored_grad = StoredGradKind::LossGrad;
    } else {
      throw std::invalid_argument("unknown stored_grad: " + m);
    }
  }
  cfg.first_task_optimizer = j.value("first_task_optimizer", cfg.first_task_optimizer);
  cfg.first_task_lr = j.value("first_task_lr", cfg.first_task_lr);
  if (j.contains("seeds")) {
    cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  }
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  return cfg;
}

}  // namespace

RunConfig config_from_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path.string());
  json j;
  is >> j;
  return config_from_json(j);
}

RunConfig config_from_json_text(const std::string& text) {
  return config_from_json(json::parse(text));
}

std::string config_to_json_text(const RunConfig& cfg) {
  return config_to_json(cfg).dump(2);
}

void apply_override(RunConfig& cfg, const std::string& key_eq_value) {
  const auto eq = key_eq_value.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("override must look like key=value: " + key_eq_value);
  }
  std::string key = key_eq_value.substr(0, eq);
  const std::string value = key_eq_value.substr(eq + 1);
  for (char& c : key) {
    if (c == '.') c = '/';
  }
  json j = config_to_json(cfg);
  const json::json_pointer ptr("/" + key);
  if (!j.contains(ptr)) {
    throw std::invalid_argument("unknown config key: " + key_eq_value.substr(0, eq));
  }
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;  // plain string
  }
  j[ptr] = parsed;
  cfg = config_from_json(j);
}

}  // namespace fopng
