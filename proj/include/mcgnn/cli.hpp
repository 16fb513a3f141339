#pragma once

// Command-line front end. run_cli() is the whole program; tools/mcgnn.cpp
// only forwards main's arguments so the commands can be driven from tests.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mcgnn/checkpoint.hpp"
#include "mcgnn/data.hpp"
#include "mcgnn/error.hpp"
#include "mcgnn/harness.hpp"
#include "mcgnn/model.hpp"
#include "mcgnn/training.hpp"

namespace mcgnn::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kData = 3,
  kNumerical = 4,
  kIo = 5,
};

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return kUsage;
    case ErrorKind::data: return kData;
    case ErrorKind::dimension: return kData;
    case ErrorKind::numerical: return kNumerical;
    case ErrorKind::io: return kIo;
  }
  return kFailure;
}

/// Worker count from MCGNN_THREADS, falling back to 1.
inline std::size_t default_threads() {
  if (const char* env = std::getenv("MCGNN_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + ": parse error: " + e.what());
  }
}

inline std::string confusion_text(const EvalResult& r, const std::vector<std::string>& classes) {
  std::ostringstream os;
  std::size_t w = 10;
  for (const auto& c : classes) w = std::max(w, c.size() + 2);
  os << std::left << std::setw(static_cast<int>(w)) << "true\\pred";
  for (const auto& c : classes) os << std::right << std::setw(static_cast<int>(w)) << c;
  os << "\n";
  for (std::size_t t = 0; t < classes.size(); ++t) {
    os << std::left << std::setw(static_cast<int>(w)) << classes[t];
    for (std::size_t p = 0; p < classes.size(); ++p) {
      os << std::right << std::setw(static_cast<int>(w)) << r.confusion[t][p];
    }
    os << "\n";
  }
  return os.str();
}

inline DatasetManifest manifest_of(const Checkpoint& ck) {
  DatasetManifest m;
  m.classes = ck.classes;
  m.cues = ck.params.cues;
  return m;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data;
  std::string out;
  double lr = 1e-4;
  std::size_t epochs = 20;
  std::size_t steps = 4;
  std::size_t hidden = 128;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;
  std::string resume_from;
};

inline int cmd_train(const TrainArgs& a, bool seed_given, bool lr_given, bool shape_given,
                     std::ostream& out) {
  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.epochs = a.epochs;
  tc.steps = a.steps;
  tc.hidden = a.hidden;
  tc.batch_size = a.batch;
  tc.seed = a.seed;
  tc.clip_norm = a.clip_norm;
  validate_train_config(tc);
  if (!(tc.learning_rate > 0.0)) throw UsageError("--lr must be > 0");

  // Everything is loaded and checked before the output directory is touched.
  const Dataset data = load_dataset(a.data);
  const auto& train = data.partition("train");
  const bool has_val = data.has("val");

  ModelParams params;
  AdamState state;
  std::size_t start_epoch = 0;
  if (!a.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(a.resume_from);
    require_matching_manifest(ck, data.manifest);
    if (!ck.optimizer) throw UsageError("checkpoint has no optimizer state; cannot resume");
    if (seed_given && a.seed != ck.meta.seed) {
      throw UsageError("--seed differs from the resumed checkpoint's seed " +
                       std::to_string(ck.meta.seed));
    }
    if (lr_given && a.lr != ck.optimizer->lr) {
      throw UsageError("--lr differs from the resumed checkpoint's learning rate");
    }
    if (shape_given && (a.steps != ck.params.hyper.steps || a.hidden != ck.params.hyper.hidden)) {
      throw UsageError("--steps/--hidden differ from the resumed checkpoint");
    }
    start_epoch = ck.meta.epochs_completed;
    if (start_epoch >= tc.epochs) {
      throw UsageError("checkpoint already has " + std::to_string(start_epoch) +
                       " epochs; --epochs must be larger");
    }
    tc.seed = ck.meta.seed;
    tc.steps = ck.params.hyper.steps;
    tc.hidden = ck.params.hyper.hidden;
    tc.learning_rate = ck.optimizer->lr;
    params = std::move(ck.params);
    state = std::move(*ck.optimizer);
  } else {
    params = init_params(data.manifest.cues, {tc.hidden, tc.steps, data.manifest.classes.size()},
                         tc.seed);
    state = AdamState::fresh(params, tc.learning_rate);
  }

  const fs::path out_dir = a.out;
  fs::create_directories(out_dir);
  const fs::path log_path = out_dir / "train_log.jsonl";
  for (std::size_t epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    const EpochStats stats = train_epoch(train, params, state, tc, epoch);
    nlohmann::ordered_json rec;
    rec["epoch"] = epoch + 1;
    rec["loss"] = stats.mean_loss;
    rec["clamped_samples"] = stats.clamped;
    rec["train_accuracy"] = evaluate(train, params).accuracy;
    if (has_val) rec["val_accuracy"] = evaluate(data.partition("val"), params).accuracy;
    {
      std::ofstream log(log_path, std::ios::app);
      if (!log) throw IoError("cannot append to " + log_path.string());
      log << rec.dump() << "\n";
    }
    Checkpoint ck{params, data.manifest.classes, state, {epoch + 1, tc.seed, "mcgnn train"}};
    std::ostringstream name;
    name << "epoch" << std::setw(3) << std::setfill('0') << epoch + 1 << ".ckpt";
    save_checkpoint(ck, out_dir / name.str());
    save_checkpoint(ck, out_dir / "last.ckpt");
    out << rec.dump() << "\n";
    if (stats.clamped > 0) {
      out << "warning: " << stats.clamped << " sample(s) hit the log clamp in epoch "
          << epoch + 1 << "\n";
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// eval / predict

inline int cmd_eval(const std::string& checkpoint, const std::string& data_path,
                    const std::string& partition, const std::string& out_file,
                    std::size_t threads, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(data_path);
  require_matching_manifest(ck, data.manifest);
  const auto& samples = data.partition(partition);
  const EvalResult r = evaluate(samples, ck.params, threads);

  std::ostringstream os;
  os << "partition: " << partition << "\n";
  os << "samples: " << r.total << "\n";
  os << "correct: " << r.correct << "\n";
  os << "accuracy: " << std::fixed << std::setprecision(6) << r.accuracy << "\n";
  os << confusion_text(r, ck.classes);
  out << os.str();
  if (!out_file.empty()) {
    nlohmann::ordered_json j;
    j["partition"] = partition;
    j["samples"] = r.total;
    j["correct"] = r.correct;
    j["accuracy"] = r.accuracy;
    j["classes"] = ck.classes;
    j["confusion"] = r.confusion;
    write_text(out_file, j.dump(2) + "\n");
  }
  return kOk;
}

inline int cmd_predict(const std::string& checkpoint, const std::string& record_file,
                       std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const DatasetManifest m = manifest_of(ck);
  std::ifstream in(record_file);
  if (!in) throw DataError("cannot open record file " + record_file);
  std::string line;
  std::optional<GraphSample> sample;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    sample = record_from_line(line, m, record_file + ":" + std::to_string(lineno));
    break;
  }
  if (!sample) throw DataError(record_file + ": no record found");
  const GraphSample capped = cap_cues(*sample, ck.params.cues, CapMode::eval);
  const ForwardResult fr = forward(capped, ck.params);
  const auto nodes = canonical_nodes(capped);

  out << "sample: " << sample->id << "\n";
  out << "prediction: " << ck.classes[fr.vote.predicted] << " (" << fr.vote.predicted << ")\n";
  std::vector<std::size_t> tally(ck.classes.size(), 0);
  for (std::size_t c : fr.vote.node_votes) ++tally[c];
  out << "votes:";
  for (std::size_t c = 0; c < ck.classes.size(); ++c) out << " " << ck.classes[c] << "=" << tally[c];
  out << "\n";
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    out << "  node " << n << " [" << ck.params.cues[nodes[n].cue].name << " #" << nodes[n].index
        << "] -> " << ck.classes[fr.vote.node_votes[n]] << "\n";
  }
  out << "mean probabilities:";
  out << std::fixed << std::setprecision(6);
  for (std::size_t c = 0; c < ck.classes.size(); ++c) {
    out << " " << ck.classes[c] << "=" << fr.vote.mean_probs[c];
  }
  out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// gen-synthetic / gradcheck / experiment / import

inline int cmd_gen_synthetic(const std::string& spec_file, const std::string& out_dir,
                             std::ostream& out) {
  const SyntheticSpec spec = synthetic_spec_from_json(read_json_file(spec_file));
  const fs::path manifest = gen_synthetic(spec, out_dir);
  out << "wrote " << manifest.string() << "\n";
  return kOk;
}

struct GradcheckArgs {
  std::size_t hidden = 8;
  std::size_t steps = 4;
  std::size_t classes = 3;
  std::vector<std::size_t> dims{5, 7};
  std::vector<std::size_t> nodes{3, 2};
  std::uint64_t seed = 1;
  double epsilon = 1e-5;
  double tolerance = 1e-6;
};

/// Random model and sample for gradient checking. Biases are drawn too so
/// their paths are exercised.
inline std::pair<ModelParams, GraphSample> gradcheck_problem(const GradcheckArgs& a) {
  if (a.dims.empty() || a.dims.size() != a.nodes.size()) {
    throw UsageError("--dims and --nodes need the same, non-zero number of entries");
  }
  std::vector<CueSpec> cues;
  for (std::size_t q = 0; q < a.dims.size(); ++q) {
    cues.push_back({"cue" + std::to_string(q), a.dims[q], 16, 48});
  }
  ModelParams p = init_params(cues, {a.hidden, a.steps, a.classes}, a.seed);
  Rng rng(a.seed, 0x67726164ULL);
  for (auto& b : p.tensors.proj_bias) {
    for (double& v : b.values()) v = rng.uniform(-0.1, 0.1);
  }
  for (double& v : p.tensors.readout_bias.values()) v = rng.uniform(-0.1, 0.1);
  GraphSample s{"gradcheck", rng.index(a.classes), {}};
  s.features.resize(cues.size());
  for (std::size_t q = 0; q < cues.size(); ++q) {
    for (std::size_t j = 0; j < a.nodes[q]; ++j) {
      Vector v(cues[q].feature_dim);
      for (double& x : v) x = rng.normal();
      s.features[q].push_back(std::move(v));
    }
  }
  validate_sample(s, p.cues);
  return {std::move(p), std::move(s)};
}

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  const auto [params, sample] = gradcheck_problem(a);
  const GradCheckReport rep = grad_check(params, sample, a.epsilon);
  out << std::left << std::setw(28) << "group" << std::right << std::setw(9) << "entries"
      << std::setw(14) << "max_rel" << std::setw(14) << "max_abs" << "\n";
  for (const auto& g : rep.groups) {
    out << std::left << std::setw(28) << g.name << std::right << std::setw(9) << g.entries
        << std::setw(14) << std::scientific << std::setprecision(3) << g.max_rel << std::setw(14)
        << g.max_abs << std::defaultfloat << "\n";
  }
  const bool ok = rep.max_rel() < a.tolerance;
  out << "max relative error " << std::scientific << std::setprecision(3) << rep.max_rel()
      << (ok ? " < " : " >= ") << a.tolerance << std::defaultfloat << (ok ? " PASS" : " FAIL")
      << "\n";
  return ok ? kOk : kNumerical;
}

/// Experiment settings from a JSON file; relative paths resolve against the
/// file's directory.
struct ExperimentFile {
  ExperimentConfig config;
  fs::path data;
  fs::path out;
  bool grid_search = false;
};

inline ExperimentFile experiment_from_json(const nlohmann::json& j, const fs::path& base) {
  ExperimentFile f;
  auto& c = f.config;
  try {
    f.data = j.at("data").get<std::string>();
    f.out = j.at("out").get<std::string>();
    c.runs = j.value("runs", c.runs);
    c.train.epochs = j.value("epochs", c.train.epochs);
    c.train.learning_rate = j.value("lr", c.train.learning_rate);
    c.train.steps = j.value("steps", c.train.steps);
    c.train.hidden = j.value("hidden", c.train.hidden);
    c.train.batch_size = j.value("batch", c.train.batch_size);
    c.train.seed = j.value("seed", c.train.seed);
    c.train.clip_norm = j.value("clip_norm", c.train.clip_norm);
    c.train.lr_grid = j.value("lr_grid", c.train.lr_grid);
    c.selection_partition = j.value("selection", c.selection_partition);
    c.report_partition = j.value("report", c.report_partition);
    c.label = j.value("label", c.label);
    f.grid_search = j.value("grid_search", false);
    if (j.value("keep_checkpoints", false)) c.checkpoint_dir = fs::path("checkpoints");
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed experiment config: ") + e.what());
  }
  if (f.data.is_relative()) f.data = base / f.data;
  if (f.out.is_relative()) f.out = base / f.out;
  if (c.checkpoint_dir) c.checkpoint_dir = f.out / *c.checkpoint_dir;
  if (c.runs < 1) throw UsageError("runs must be >= 1");
  for (const auto* p : {&c.selection_partition, &c.report_partition}) {
    if (*p != "train" && *p != "val" && *p != "test") {
      throw UsageError("selection/report partition must be train, val or test");
    }
  }
  validate_train_config(c.train);
  return f;
}

inline int cmd_experiment(const std::string& config_file, std::size_t threads,
                          std::ostream& out) {
  ExperimentFile f =
      experiment_from_json(read_json_file(config_file), fs::path(config_file).parent_path());
  f.config.threads = threads;
  const Dataset data = load_dataset(f.data);
  data.partition("train");
  data.partition(f.config.selection_partition);
  data.partition(f.config.report_partition);
  fs::create_directories(f.out);
  if (f.grid_search) {
    const GridSearchResult g = lr_grid_search(f.config, data);
    nlohmann::ordered_json summary;
    summary["best_learning_rate"] = g.best_learning_rate;
    summary["grid"] = nlohmann::ordered_json::array();
    for (const auto& r : g.reports) {
      std::ostringstream name;
      name << "report_lr" << r.learning_rate << ".json";
      write_report(r, f.out / name.str());
      summary["grid"].push_back({{"learning_rate", r.learning_rate},
                                 {"selection_avg", r.selection_avg},
                                 {"report_avg", r.report.avg}});
      out << report_table(r) << "\n";
    }
    write_text(f.out / "grid_search.json", summary.dump(2) + "\n");
    out << "best learning rate: " << g.best_learning_rate << "\n";
    return kOk;
  }
  const ExperimentReport r = run_experiment(f.config, data);
  write_report(r, f.out / "report.json");
  out << report_table(r);
  return kOk;
}

inline int cmd_import(const std::string& dir, const std::string& out_dir,
                      const std::vector<std::string>& classes,
                      const std::vector<std::string>& cues, std::size_t cap_train,
                      std::size_t cap_eval, std::ostream& out) {
  ImportOptions opt;
  opt.classes = classes;
  opt.cues = cues;
  opt.cap_train = cap_train;
  opt.cap_eval = cap_eval;
  const Dataset d = import_features(dir, opt);
  const fs::path manifest = write_dataset(d, out_dir);
  out << "wrote " << manifest.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-cue graph neural network: train, evaluate and inspect models"};
  app.require_subcommand(1);
  std::size_t threads = default_threads();
  app.add_option("--threads", threads, "Worker thread cap (default: $MCGNN_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  train->add_option("--data", ta.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--out", ta.out, "Output directory")->required();
  auto* lr_opt = train->add_option("--lr", ta.lr, "Learning rate")->capture_default_str();
  train->add_option("--epochs", ta.epochs, "Total epochs")->check(CLI::PositiveNumber)->capture_default_str();
  auto* steps_opt = train->add_option("-k,--steps", ta.steps, "Message-passing steps K")->capture_default_str();
  auto* hidden_opt = train->add_option("--hidden", ta.hidden, "Hidden size L_h")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--batch", ta.batch, "Samples per optimizer step")->check(CLI::PositiveNumber)->capture_default_str();
  auto* seed_opt = train->add_option("--seed", ta.seed, "Random seed")->capture_default_str();
  train->add_option("--clip-norm", ta.clip_norm, "Global gradient-norm clip (0 = off)")->capture_default_str();
  train->add_option("--resume-from", ta.resume_from, "Checkpoint to resume from")->check(CLI::ExistingFile);

  std::string ck_path, data_path, partition = "test", out_file, record;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a partition");
  eval->add_option("--checkpoint", ck_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path, "Dataset manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--partition", partition)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  eval->add_option("--out", out_file, "Also write the result as JSON");

  auto* predict = app.add_subcommand("predict", "Classify one sample record");
  predict->add_option("--checkpoint", ck_path)->required()->check(CLI::ExistingFile);
  predict->add_option("--record", record, "File holding one JSON record")->required()->check(CLI::ExistingFile);

  std::string spec_file, out_dir;
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic multi-cue dataset");
  gen->add_option("--spec", spec_file, "Synthetic spec (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Compare backprop gradients with finite differences");
  gc->add_option("--hidden", ga.hidden)->check(CLI::PositiveNumber)->capture_default_str();
  gc->add_option("-k,--steps", ga.steps)->capture_default_str();
  gc->add_option("--classes", ga.classes)->check(CLI::Range(2, 1 << 20))->capture_default_str();
  gc->add_option("--dims", ga.dims, "Feature dim per cue")->delimiter(',');
  gc->add_option("--nodes", ga.nodes, "Node count per cue")->delimiter(',');
  gc->add_option("--seed", ga.seed)->capture_default_str();
  gc->add_option("--epsilon", ga.epsilon)->check(CLI::PositiveNumber)->capture_default_str();
  gc->add_option("--tolerance", ga.tolerance)->check(CLI::PositiveNumber)->capture_default_str();

  std::string config_file;
  auto* exp = app.add_subcommand("experiment", "Run the repeated-run protocol from a config");
  exp->add_option("--config", config_file, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  std::string import_dir;
  std::vector<std::string> import_classes, import_cues;
  std::size_t cap_train = 16, cap_eval = 48;
  auto* imp = app.add_subcommand("import", "Convert per-sample feature files to a dataset");
  imp->add_option("--dir", import_dir, "Directory with labels.tsv")->required()->check(CLI::ExistingDirectory);
  imp->add_option("--out", out_dir, "Output directory")->required();
  imp->add_option("--classes", import_classes, "Class order")->delimiter(',');
  imp->add_option("--cues", import_cues, "Cue order")->delimiter(',');
  imp->add_option("--cap-train", cap_train)->check(CLI::PositiveNumber)->capture_default_str();
  imp->add_option("--cap-eval", cap_eval)->check(CLI::PositiveNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) {
      return cmd_train(ta, seed_opt->count() > 0, lr_opt->count() > 0,
                       steps_opt->count() > 0 || hidden_opt->count() > 0, out);
    }
    if (*eval) return cmd_eval(ck_path, data_path, partition, out_file, threads, out);
    if (*predict) return cmd_predict(ck_path, record, out);
    if (*gen) return cmd_gen_synthetic(spec_file, out_dir, out);
    if (*gc) return cmd_gradcheck(ga, out);
    if (*exp) return cmd_experiment(config_file, threads, out);
    if (*imp) return cmd_import(import_dir, out_dir, import_classes, import_cues, cap_train, cap_eval, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

}  // namespace mcgnn::cli
