#pragma once

// Repeated-run experiment protocol: each run trains from its own seed,
// scores the selection partition after every epoch, keeps the best epoch,
// and only then evaluates that model on the report partition.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "mcgnn/checkpoint.hpp"
#include "mcgnn/data.hpp"
#include "mcgnn/error.hpp"
#include "mcgnn/model.hpp"
#include "mcgnn/training.hpp"

namespace mcgnn {

struct ExperimentConfig {
  TrainConfig train;
  std::size_t runs = 10;
  std::string selection_partition = "val";  // "train" when no validation split exists
  std::string report_partition = "test";
  std::size_t threads = 1;  // runs executed concurrently
  std::optional<std::filesystem::path> checkpoint_dir;
  std::string label = "GNN";  // row name in the table
};

struct EvalEvent {
  std::size_t run = 0;
  std::size_t epoch = 0;  // 0 marks the post-selection report evaluation
  std::string partition;

  friend bool operator==(const EvalEvent&, const EvalEvent&) = default;
};

struct RunResult {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::vector<double> epoch_loss;
  std::vector<double> selection_accuracy;  // one per epoch
  std::size_t selected_epoch = 0;          // 1-based
  double report_accuracy = 0.0;
  double wall_seconds = 0.0;

  double selected_selection_accuracy() const {
    return selection_accuracy.at(selected_epoch - 1);
  }

  friend bool operator==(const RunResult&, const RunResult&) = default;
};

struct Aggregates {
  double max = 0.0;
  double min = 0.0;
  double median = 0.0;
  double avg = 0.0;

  friend bool operator==(const Aggregates&, const Aggregates&) = default;
};

/// Max/min/median/mean; the median of an even count is the midpoint of the
/// two middle values.
inline Aggregates aggregate(std::vector<double> values) {
  if (values.empty()) throw DataError("cannot aggregate an empty list");
  std::sort(values.begin(), values.end());
  Aggregates a;
  a.min = values.front();
  a.max = values.back();
  const std::size_t n = values.size();
  a.median = n % 2 == 1 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
  double s = 0.0;
  for (double v : values) s += v;
  a.avg = s / static_cast<double>(n);
  return a;
}

struct ExperimentReport {
  std::string label;
  double learning_rate = 0.0;
  std::size_t epochs = 0;
  std::size_t steps = 0;
  std::size_t hidden = 0;
  std::string selection_partition;
  std::string report_partition;
  std::vector<RunResult> runs;
  Aggregates report;            // over runs' report accuracies
  double selection_avg = 0.0;   // mean selected-epoch selection accuracy
  std::vector<EvalEvent> eval_log;

  friend bool operator==(const ExperimentReport&, const ExperimentReport&) = default;
};

namespace detail {

inline void finalize(ExperimentReport& r) {
  if (r.runs.empty()) throw DataError("experiment report has no runs");
  std::vector<double> acc;
  double sel = 0.0;
  for (const auto& run : r.runs) {
    acc.push_back(run.report_accuracy);
    sel += run.selected_selection_accuracy();
  }
  r.report = aggregate(acc);
  r.selection_avg = sel / static_cast<double>(r.runs.size());
}

}  // namespace detail

/// One run of the protocol. `log` receives every evaluation in order.
inline RunResult run_once(const ExperimentConfig& config, const Dataset& data, std::size_t run,
                          std::vector<EvalEvent>& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& train = data.partition("train");
  const auto& select = data.partition(config.selection_partition);
  const auto& report = data.partition(config.report_partition);

  TrainConfig tc = config.train;
  tc.seed = config.train.seed + run;
  RunResult r;
  r.run = run;
  r.seed = tc.seed;

  const Hyper hyper{tc.hidden, tc.steps, data.manifest.classes.size()};
  ModelParams params = init_params(data.manifest.cues, hyper, tc.seed);
  AdamState state = AdamState::fresh(params, tc.learning_rate);
  ModelParams best = params;
  double best_acc = -1.0;

  std::optional<std::filesystem::path> run_dir;
  if (config.checkpoint_dir) {
    run_dir = *config.checkpoint_dir / ("run" + std::to_string(run));
    std::filesystem::create_directories(*run_dir);
  }
  auto ck_path = [&](std::size_t epoch) {
    return *run_dir / ("epoch" + std::to_string(epoch) + ".ckpt");
  };

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const EpochStats stats = train_epoch(train, params, state, tc, epoch - 1);
    r.epoch_loss.push_back(stats.mean_loss);
    const double acc = evaluate(select, params).accuracy;
    log.push_back({run, epoch, config.selection_partition});
    r.selection_accuracy.push_back(acc);
    if (run_dir) {
      save_checkpoint({params, data.manifest.classes, state, {epoch, tc.seed, "mcgnn experiment"}},
                      ck_path(epoch));
    }
    if (acc > best_acc) {
      best_acc = acc;
      best = params;
      r.selected_epoch = epoch;
    }
  }
  if (run_dir) {
    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
      if (epoch != r.selected_epoch) std::filesystem::remove(ck_path(epoch));
    }
  }
  r.report_accuracy = evaluate(report, best).accuracy;
  log.push_back({run, 0, config.report_partition});
  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline ExperimentReport run_experiment(const ExperimentConfig& config, const Dataset& data) {
  if (config.runs < 1) throw UsageError("runs must be >= 1");
  validate_train_config(config.train);
  data.partition("train");
  data.partition(config.selection_partition);
  data.partition(config.report_partition);

  ExperimentReport rep;
  rep.label = config.label;
  rep.learning_rate = config.train.learning_rate;
  rep.epochs = config.train.epochs;
  rep.steps = config.train.steps;
  rep.hidden = config.train.hidden;
  rep.selection_partition = config.selection_partition;
  rep.report_partition = config.report_partition;
  rep.runs.resize(config.runs);

  std::vector<std::vector<EvalEvent>> logs(config.runs);
  std::vector<std::exception_ptr> errors(config.runs);
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.threads, config.runs));
  auto work = [&](std::size_t first) {
    for (std::size_t run = first; run < config.runs; run += workers) {
      try {
        rep.runs[run] = run_once(config, data, run, logs[run]);
      } catch (...) {
        errors[run] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (auto& l : logs) rep.eval_log.insert(rep.eval_log.end(), l.begin(), l.end());
  detail::finalize(rep);
  return rep;
}

struct GridSearchResult {
  double best_learning_rate = 0.0;
  std::vector<ExperimentReport> reports;  // one per grid value
};

/// Runs the protocol once per learning rate in `config.train.lr_grid` and
/// picks the rate with the highest mean selection accuracy (ties: smaller rate).
inline GridSearchResult lr_grid_search(const ExperimentConfig& config, const Dataset& data) {
  if (config.train.lr_grid.empty()) throw UsageError("learning-rate grid is empty");
  GridSearchResult out;
  double best = -1.0;
  for (double lr : config.train.lr_grid) {
    ExperimentConfig c = config;
    c.train.learning_rate = lr;
    out.reports.push_back(run_experiment(c, data));
    const double score = out.reports.back().selection_avg;
    if (score > best || (score == best && lr < out.best_learning_rate)) {
      best = score;
      out.best_learning_rate = lr;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report files

inline nlohmann::ordered_json report_to_json(const ExperimentReport& r) {
  nlohmann::ordered_json j;
  j["label"] = r.label;
  j["learning_rate"] = r.learning_rate;
  j["epochs"] = r.epochs;
  j["steps"] = r.steps;
  j["hidden"] = r.hidden;
  j["selection_partition"] = r.selection_partition;
  j["report_partition"] = r.report_partition;
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& run : r.runs) {
    j["runs"].push_back({{"run", run.run},
                         {"seed", run.seed},
                         {"selected_epoch", run.selected_epoch},
                         {"report_accuracy", run.report_accuracy},
                         {"selection_accuracy", run.selection_accuracy},
                         {"epoch_loss", run.epoch_loss},
                         {"wall_seconds", run.wall_seconds}});
  }
  j["aggregates"] = {{"max", r.report.max},
                     {"min", r.report.min},
                     {"median", r.report.median},
                     {"avg", r.report.avg},
                     {"selection_avg", r.selection_avg}};
  j["eval_log"] = nlohmann::ordered_json::array();
  for (const auto& e : r.eval_log) {
    j["eval_log"].push_back({{"run", e.run}, {"epoch", e.epoch}, {"partition", e.partition}});
  }
  return j;
}

inline ExperimentReport report_from_json(const nlohmann::ordered_json& j) {
  ExperimentReport r;
  Aggregates stored;
  try {
    r.label = j.at("label").get<std::string>();
    r.learning_rate = j.at("learning_rate").get<double>();
    r.epochs = j.at("epochs").get<std::size_t>();
    r.steps = j.at("steps").get<std::size_t>();
    r.hidden = j.at("hidden").get<std::size_t>();
    r.selection_partition = j.at("selection_partition").get<std::string>();
    r.report_partition = j.at("report_partition").get<std::string>();
    for (const auto& x : j.at("runs")) {
      RunResult run;
      run.run = x.at("run").get<std::size_t>();
      run.seed = x.at("seed").get<std::uint64_t>();
      run.selected_epoch = x.at("selected_epoch").get<std::size_t>();
      run.report_accuracy = x.at("report_accuracy").get<double>();
      run.selection_accuracy = x.at("selection_accuracy").get<std::vector<double>>();
      run.epoch_loss = x.at("epoch_loss").get<std::vector<double>>();
      run.wall_seconds = x.at("wall_seconds").get<double>();
      if (run.selected_epoch < 1 || run.selected_epoch > run.selection_accuracy.size()) {
        throw DataError("run " + std::to_string(run.run) + ": selected epoch out of range");
      }
      r.runs.push_back(std::move(run));
    }
    for (const auto& e : j.at("eval_log")) {
      r.eval_log.push_back({e.at("run").get<std::size_t>(), e.at("epoch").get<std::size_t>(),
                            e.at("partition").get<std::string>()});
    }
    const auto& a = j.at("aggregates");
    stored = {a.at("max").get<double>(), a.at("min").get<double>(),
              a.at("median").get<double>(), a.at("avg").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  detail::finalize(r);
  if (!(stored == r.report)) throw DataError("report aggregates do not match its runs");
  return r;
}

/// Fixed-width table: one summary row, then one row per run. Accuracies in
/// percent.
inline std::string report_table(const ExperimentReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  const std::string select_col = r.selection_partition == "val" ? "Avg_V" : "Avg_T";
  os << std::left << std::setw(16) << "Model" << std::right << std::setw(9) << select_col
     << std::setw(9) << "Max"
     << std::setw(9) << "Min" << std::setw(9) << "Med" << std::setw(9) << "Avg" << "\n";
  os << std::left << std::setw(16) << r.label << std::right << std::setw(9)
     << 100.0 * r.selection_avg << std::setw(9) << 100.0 * r.report.max << std::setw(9)
     << 100.0 * r.report.min << std::setw(9) << 100.0 * r.report.median << std::setw(9)
     << 100.0 * r.report.avg << "\n\n";
  os << "lr=" << std::defaultfloat << r.learning_rate << " epochs=" << r.epochs
     << " K=" << r.steps << " L_h=" << r.hidden << " select=" << r.selection_partition
     << " report=" << r.report_partition << "\n";
  os << std::fixed << std::setprecision(2);
  os << std::right << std::setw(5) << "run" << std::setw(12) << "seed" << std::setw(8)
     << "epoch" << std::setw(10) << "select" << std::setw(10) << "report" << std::setw(10)
     << "seconds" << "\n";
  for (const auto& run : r.runs) {
    os << std::setw(5) << run.run << std::setw(12) << run.seed << std::setw(8)
       << run.selected_epoch << std::setw(10) << 100.0 * run.selected_selection_accuracy()
       << std::setw(10) << 100.0 * run.report_accuracy << std::setw(10) << run.wall_seconds
       << "\n";
  }
  return os.str();
}

/// Writes `<path>` (JSON) and `<path>` with extension .txt (table).
inline void write_report(const ExperimentReport& r, const std::filesystem::path& path) {
  if (r.runs.empty()) throw DataError("refusing to write a report with no runs");
  write_text(path, report_to_json(r).dump(2) + "\n");
  auto table = path;
  table.replace_extension(".txt");
  write_text(table, report_table(r));
}

inline ExperimentReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report " + path.string());
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": parse error: " + e.what());
  }
  return report_from_json(j);
}

}  // namespace mcgnn
