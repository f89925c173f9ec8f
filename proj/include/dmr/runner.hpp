#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmr/baselines.hpp"
#include "dmr/classifier.hpp"
#include "dmr/errors.hpp"
#include "dmr/feature_store.hpp"
#include "dmr/memory.hpp"
#include "dmr/metrics.hpp"

// Config-driven experiment orchestration: data source -> task stream ->
// per-stage train / memorize / evaluate loop -> JSON + CSV reports.

namespace dmr {

using json = nlohmann::json;

enum class CiPooling { kAll, kPrevious };

struct RunConfig {
  // data
  bool synth_source = true;
  SynthSpec synth;
  int test_per_class = 100;      // synth: fresh oracle draws per class
  std::string load_path;
  FeatureFormat load_format = FeatureFormat::kCsv;
  double test_fraction = 0.2;    // load: per-class holdout share
  // stream
  int base = 0;
  int increment = 0;
  std::uint64_t stream_seed = 0;
  // memory
  std::string fidelity = "dmr";  // finetune | prior | d-std | dmr-lite | dmr
  KSelectConfig select;
  EmConfig em;
  // train
  TrainConfig train;
  // eval
  std::optional<double> mmd_bandwidth;  // unset: median heuristic
  CiPooling ci_pooling = CiPooling::kAll;
  int mmd_samples = 200;
  // out
  std::string out_dir;
};

namespace cfg_detail {

inline void check_keys(const json& obj, const std::string& path,
                       const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError(path + "." + key, "unknown field");
  }
}

inline const json& require(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.contains(key)) throw ConfigError(path + "." + key, "missing required field");
  return obj.at(key);
}

inline json get_object(const json& obj, const std::string& path, const std::string& key) {
  const json& value = require(obj, path, key);
  if (!value.is_object()) throw ConfigError(path + "." + key, "expected an object");
  return value;
}

inline long long get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  return j.get<long long>();
}

inline double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

inline std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

template <typename T>
T opt_int(const json& obj, const std::string& path, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return static_cast<T>(get_int(obj.at(key), path + "." + key));
}

inline double opt_number(const json& obj, const std::string& path, const std::string& key,
                         double fallback) {
  if (!obj.contains(key)) return fallback;
  return get_number(obj.at(key), path + "." + key);
}

}  // namespace cfg_detail

inline RunConfig parse_config(const json& root) {
  namespace cd = cfg_detail;
  if (!root.is_object()) throw ConfigError("config", "expected a JSON object");
  cd::check_keys(root, "config", {"data", "stream", "memory", "train", "eval", "out"});
  RunConfig cfg;

  // data
  {
    const json data = cd::get_object(root, "config", "data");
    cd::check_keys(data, "data",
                   {"source", "synth_spec", "test_per_class", "path", "format", "test_fraction"});
    const std::string source = cd::get_string(cd::require(data, "data", "source"), "data.source");
    if (source == "synth") {
      cfg.synth_source = true;
      const json spec = cd::get_object(data, "data", "synth_spec");
      cd::check_keys(spec, "data.synth_spec",
                     {"num_classes", "dim", "components_per_class", "separation", "anisotropy",
                      "samples_per_class", "seed"});
      cfg.synth.num_classes = cd::opt_int(spec, "data.synth_spec", "num_classes", 0);
      cfg.synth.dim = cd::opt_int(spec, "data.synth_spec", "dim", 0);
      cfg.synth.components_per_class = cd::opt_int(spec, "data.synth_spec", "components_per_class", 1);
      cfg.synth.separation = cd::opt_number(spec, "data.synth_spec", "separation", 8.0);
      cfg.synth.anisotropy = cd::opt_number(spec, "data.synth_spec", "anisotropy", 1.0);
      cfg.synth.samples_per_class = cd::opt_int(spec, "data.synth_spec", "samples_per_class", 0);
      cfg.synth.seed = static_cast<std::uint64_t>(
          cd::get_int(cd::require(spec, "data.synth_spec", "seed"), "data.synth_spec.seed"));
      try {
        cfg.synth.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError("data.synth_spec", e.what());
      }
      cfg.test_per_class = cd::opt_int(data, "data", "test_per_class", 100);
      if (cfg.test_per_class < 2) throw ConfigError("data.test_per_class", "must be >= 2");
    } else if (source == "load") {
      cfg.synth_source = false;
      cfg.load_path = cd::get_string(cd::require(data, "data", "path"), "data.path");
      const std::string format =
          data.contains("format") ? cd::get_string(data.at("format"), "data.format") : "csv";
      if (format == "csv") {
        cfg.load_format = FeatureFormat::kCsv;
      } else if (format == "binary") {
        cfg.load_format = FeatureFormat::kPackedBinary;
      } else {
        throw ConfigError("data.format", "expected \"csv\" or \"binary\"");
      }
      cfg.test_fraction = cd::opt_number(data, "data", "test_fraction", 0.2);
      if (cfg.test_fraction <= 0.0 || cfg.test_fraction >= 1.0) {
        throw ConfigError("data.test_fraction", "must be in (0, 1)");
      }
    } else {
      throw ConfigError("data.source", "expected \"synth\" or \"load\"");
    }
  }

  // stream
  {
    const json stream = cd::get_object(root, "config", "stream");
    cd::check_keys(stream, "stream", {"base", "increment", "seed"});
    cfg.base = cd::opt_int(stream, "stream", "base", 0);
    cfg.increment = cd::opt_int(stream, "stream", "increment", 0);
    cfg.stream_seed = static_cast<std::uint64_t>(
        cd::get_int(cd::require(stream, "stream", "seed"), "stream.seed"));
    if (cfg.base < 1) throw ConfigError("stream.base", "must be >= 1");
  }

  // memory
  {
    const json memory = cd::get_object(root, "config", "memory");
    cd::check_keys(memory, "memory", {"fidelity", "k_max", "threshold", "em"});
    cfg.fidelity =
        cd::get_string(cd::require(memory, "memory", "fidelity"), "memory.fidelity");
    if (cfg.fidelity != "finetune") {
      try {
        fidelity_from_name(cfg.fidelity);
      } catch (const std::invalid_argument&) {
        throw ConfigError("memory.fidelity",
                          "expected one of finetune, prior, d-std, dmr-lite, dmr");
      }
    }
    cfg.select.k_max = cd::opt_int(memory, "memory", "k_max", 5);
    cfg.select.threshold = cd::opt_number(memory, "memory", "threshold", 0.1);
    if (cfg.select.k_max < 2) throw ConfigError("memory.k_max", "must be >= 2");
    if (cfg.select.threshold < 0 || cfg.select.threshold >= 1) {
      throw ConfigError("memory.threshold", "must be in [0, 1)");
    }
    if (memory.contains("em")) {
      const json em = memory.at("em");
      if (!em.is_object()) throw ConfigError("memory.em", "expected an object");
      cd::check_keys(em, "memory.em", {"max_iters", "rel_tol", "jitter", "init"});
      cfg.em.max_iters = cd::opt_int(em, "memory.em", "max_iters", 200);
      cfg.em.rel_tol = cd::opt_number(em, "memory.em", "rel_tol", 1e-6);
      if (cfg.em.max_iters < 1) throw ConfigError("memory.em.max_iters", "must be >= 1");
      if (cfg.em.rel_tol <= 0) throw ConfigError("memory.em.rel_tol", "must be positive");
      if (em.contains("jitter")) {
        const json& jit = em.at("jitter");
        if (jit.is_string()) {
          if (jit.get<std::string>() != "auto") {
            throw ConfigError("memory.em.jitter", "expected \"auto\" or a non-negative number");
          }
        } else {
          const double value = cd::get_number(jit, "memory.em.jitter");
          if (value < 0) throw ConfigError("memory.em.jitter", "must be >= 0");
          cfg.em.cov_jitter = value;
        }
      }
      if (em.contains("init")) {
        const std::string init = cd::get_string(em.at("init"), "memory.em.init");
        if (init == "kmeans") {
          cfg.em.init = EmInit::kKMeansSeeded;
        } else if (init == "random") {
          cfg.em.init = EmInit::kRandomResponsibilities;
        } else {
          throw ConfigError("memory.em.init", "expected \"kmeans\" or \"random\"");
        }
      }
    }
  }

  // train
  {
    const json train = cd::get_object(root, "config", "train");
    cd::check_keys(train, "train",
                   {"epochs", "batch", "lr", "momentum", "xi", "beta_alpha", "pseudo_per_class",
                    "seed", "base_lr", "base_epochs"});
    cfg.train.epochs = cd::opt_int(train, "train", "epochs", 20);
    cfg.train.batch_size = cd::opt_int(train, "train", "batch", 32);
    cfg.train.learning_rate = cd::opt_number(train, "train", "lr", 1e-3);
    cfg.train.momentum = cd::opt_number(train, "train", "momentum", 0.9);
    cfg.train.xi = cd::opt_number(train, "train", "xi", 0.5);
    cfg.train.beta_alpha = cd::opt_number(train, "train", "beta_alpha", 0.5);
    cfg.train.pseudo_per_class = cd::opt_int(train, "train", "pseudo_per_class", 8);
    cfg.train.seed = static_cast<std::uint64_t>(
        cd::get_int(cd::require(train, "train", "seed"), "train.seed"));
    if (train.contains("base_lr")) {
      cfg.train.base_learning_rate = cd::get_number(train.at("base_lr"), "train.base_lr");
    }
    if (train.contains("base_epochs")) {
      cfg.train.base_epochs = static_cast<int>(cd::get_int(train.at("base_epochs"), "train.base_epochs"));
    }
    try {
      cfg.train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("train", e.what());
    }
  }

  // eval
  if (root.contains("eval")) {
    const json eval = root.at("eval");
    if (!eval.is_object()) throw ConfigError("eval", "expected an object");
    cd::check_keys(eval, "eval", {"mmd_bandwidth", "ci_pooling", "mmd_samples"});
    if (eval.contains("mmd_bandwidth")) {
      const json& bw = eval.at("mmd_bandwidth");
      if (bw.is_string()) {
        if (bw.get<std::string>() != "median") {
          throw ConfigError("eval.mmd_bandwidth", "expected \"median\" or a positive number");
        }
      } else {
        const double value = cd::get_number(bw, "eval.mmd_bandwidth");
        if (value <= 0) throw ConfigError("eval.mmd_bandwidth", "must be positive");
        cfg.mmd_bandwidth = value;
      }
    }
    if (eval.contains("ci_pooling")) {
      const std::string pooling = cd::get_string(eval.at("ci_pooling"), "eval.ci_pooling");
      if (pooling == "all") {
        cfg.ci_pooling = CiPooling::kAll;
      } else if (pooling == "previous") {
        cfg.ci_pooling = CiPooling::kPrevious;
      } else {
        throw ConfigError("eval.ci_pooling", "expected \"all\" or \"previous\"");
      }
    }
    cfg.mmd_samples = cd::opt_int(eval, "eval", "mmd_samples", 200);
    if (cfg.mmd_samples < 2) throw ConfigError("eval.mmd_samples", "must be >= 2");
  }

  // out
  {
    const json out = cd::get_object(root, "config", "out");
    cd::check_keys(out, "out", {"dir"});
    cfg.out_dir = cd::get_string(cd::require(out, "out", "dir"), "out.dir");
  }
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path, json* raw = nullptr) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  if (raw != nullptr) *raw = root;
  return parse_config(root);
}

// --- Experiment loop ----------------------------------------------------------

struct ExperimentOutput {
  RunReport report;
  MemoryBank bank;
  LinearClassifier classifier;
  double k_bar = 0.0;
  int dim = 0;
  int num_classes = 0;
  json report_json;
};

namespace run_detail {

struct EvalData {
  std::map<int, Eigen::MatrixXd> test_features;  // per class
};

inline Batch batch_of_task(const Task& task, int dim) {
  Batch batch;
  batch.features.resize(static_cast<Eigen::Index>(task.records.size()), dim);
  batch.labels.reserve(task.records.size());
  for (std::size_t i = 0; i < task.records.size(); ++i) {
    batch.features.row(static_cast<Eigen::Index>(i)) = task.records[i].vector.transpose();
    batch.labels.push_back(task.records[i].class_id);
  }
  return batch;
}

inline double round2(double x) { return std::round(x * 100.0) / 100.0; }

inline json stage_to_json(const StageReport& stage) {
  json j;
  j["task_id"] = stage.task_id;
  j["accuracy"] = round2(stage.accuracy);
  json per_class = json::object();
  for (const auto& [cls, acc] : stage.per_class_accuracy) {
    per_class[std::to_string(cls)] = round2(acc);
  }
  j["per_class_accuracy"] = per_class;
  j["confusion_index"] = stage.confusion_value;
  j["old_to_new"] = stage.confusion.old_to_new;
  j["new_to_old"] = stage.confusion.new_to_old;
  j["old_total"] = stage.confusion.old_total;
  j["new_total"] = stage.confusion.new_total;
  json mmd = json::object();
  for (const auto& [cls, value] : stage.mmd_per_old_class) {
    mmd[std::to_string(cls)] = value;
  }
  j["mmd_per_old_class"] = mmd;
  j["footprint_floats"] = stage.footprint_floats;
  j["classes_seen"] = stage.classes_seen;
  return j;
}

}  // namespace run_detail

inline ExperimentOutput run_experiment(const RunConfig& cfg, const json& echo_config) {
  // Data: training records plus a held-out test pool per class.
  Dataset train_set;
  run_detail::EvalData eval_data;
  if (cfg.synth_source) {
    SynthResult synth = synth_generate(cfg.synth);
    train_set = std::move(synth.dataset);
    for (const auto& [cls, truth] : synth.truth) {
      eval_data.test_features[cls] =
          sample(truth, cfg.test_per_class, mix_seed(cfg.synth.seed, 0x7e57ULL, static_cast<std::uint64_t>(cls)));
    }
  } else {
    Dataset full = load_embeddings(cfg.load_path, cfg.load_format);
    train_set.dim = full.dim;
    for (int cls : full.class_ids()) {
      std::vector<std::size_t> indices;
      for (std::size_t i = 0; i < full.records.size(); ++i) {
        if (full.records[i].class_id == cls) indices.push_back(i);
      }
      Rng rng(mix_seed(cfg.stream_seed, 0x7e57ULL, static_cast<std::uint64_t>(cls)));
      rng.shuffle(indices);
      auto held_out = static_cast<std::size_t>(
          std::floor(cfg.test_fraction * static_cast<double>(indices.size())));
      held_out = std::max<std::size_t>(held_out, 1);
      if (indices.size() < held_out + 2) {
        throw ConfigError("data.test_fraction", "class " + std::to_string(cls) +
                                                    " has too few records for the holdout");
      }
      Eigen::MatrixXd test(static_cast<Eigen::Index>(held_out), full.dim);
      for (std::size_t i = 0; i < held_out; ++i) {
        test.row(static_cast<Eigen::Index>(i)) = full.records[indices[i]].vector.transpose();
      }
      eval_data.test_features[cls] = std::move(test);
      std::vector<std::size_t> rest(indices.begin() + static_cast<std::ptrdiff_t>(held_out),
                                    indices.end());
      std::sort(rest.begin(), rest.end());  // preserve file order for training
      for (std::size_t i : rest) train_set.records.push_back(full.records[i]);
    }
  }

  const TaskStream stream = split_task_stream(train_set, cfg.base, cfg.increment, cfg.stream_seed);
  const auto task_of_class = stream.task_of_class();
  const bool finetune = cfg.fidelity == "finetune";
  const Fidelity fidelity = finetune ? Fidelity::kPrior : fidelity_from_name(cfg.fidelity);

  LinearClassifier clf = LinearClassifier::make(stream.dim);
  MemoryBank bank;
  std::vector<StageReport> stages;
  std::vector<int> seen_classes;

  for (const auto& task : stream.tasks) {
    const int stage_id = task.task_id;
    try {
      Batch task_batch = run_detail::batch_of_task(task, stream.dim);
      TrainConfig stage_cfg = cfg.train;
      stage_cfg.seed = mix_seed(cfg.train.seed, 0x57a6eULL, static_cast<std::uint64_t>(stage_id));
      clf = finetune ? finetune_stage(clf, task_batch, stage_cfg)
                     : train_stage(clf, task_batch, bank, stage_cfg);

      if (!finetune) {
        Dataset task_set;
        task_set.dim = stream.dim;
        task_set.records = task.records;
        for (int cls : task.class_ids) {
          const Eigen::MatrixXd features = task_set.features_of_class(cls);
          ClassMemory mem;
          if (fidelity == Fidelity::kPrior) {
            mem = fit_prior(cls, features);
          } else if (fidelity == Fidelity::kDStd) {
            mem = fit_dstd(cls, features);
          } else {
            KSelectConfig select_cfg = cfg.select;
            select_cfg.seed = mix_seed(cfg.train.seed, 0x5e1ec7ULL, static_cast<std::uint64_t>(cls));
            EmConfig em_cfg = cfg.em;
            em_cfg.seed = mix_seed(cfg.train.seed, 0x6d655dULL, static_cast<std::uint64_t>(cls));
            mem = fit_class_memory(cls, features, fidelity, select_cfg, em_cfg);
          }
          bank.add(std::move(mem));
        }
      }

      seen_classes.insert(seen_classes.end(), task.class_ids.begin(), task.class_ids.end());
      std::sort(seen_classes.begin(), seen_classes.end());

      std::vector<int> labels;
      Eigen::Index rows = 0;
      for (int cls : seen_classes) rows += eval_data.test_features.at(cls).rows();
      Eigen::MatrixXd eval_features(rows, stream.dim);
      Eigen::Index cursor = 0;
      for (int cls : seen_classes) {
        const auto& block = eval_data.test_features.at(cls);
        eval_features.middleRows(cursor, block.rows()) = block;
        for (Eigen::Index i = 0; i < block.rows(); ++i) labels.push_back(cls);
        cursor += block.rows();
      }
      const std::vector<int> preds = predict(clf, eval_features);

      StageReport stage;
      stage.task_id = stage_id;
      stage.accuracy = stage_accuracy(preds, labels);
      stage.classes_seen = static_cast<int>(seen_classes.size());

      std::map<int, long> class_correct, class_total;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        ++class_total[labels[i]];
        if (preds[i] == labels[i]) ++class_correct[labels[i]];
      }
      for (int cls : seen_classes) {
        stage.per_class_accuracy[cls] =
            100.0 * static_cast<double>(class_correct[cls]) / static_cast<double>(class_total[cls]);
      }

      if (stage_id > 0) {
        if (cfg.ci_pooling == CiPooling::kAll) {
          stage.confusion = confusion_index(preds, labels, task_of_class, stage_id);
        } else {
          std::vector<int> sub_preds, sub_labels;
          for (std::size_t i = 0; i < labels.size(); ++i) {
            const int label_task = task_of_class.at(labels[i]);
            if (label_task == stage_id || label_task == stage_id - 1) {
              sub_preds.push_back(preds[i]);
              sub_labels.push_back(labels[i]);
            }
          }
          // Predictions of even older classes count as "old".
          stage.confusion = confusion_index(sub_preds, sub_labels, task_of_class, stage_id);
        }
        stage.confusion_value = stage.confusion.index();
      }

      if (stage_id > 0 && !finetune) {
        for (int cls : seen_classes) {
          if (task_of_class.at(cls) == stage_id) continue;
          const auto& real = eval_data.test_features.at(cls);
          const Eigen::Index real_rows = std::min<Eigen::Index>(real.rows(), cfg.mmd_samples);
          const Eigen::MatrixXd pseudo =
              generate_pseudo(bank, cls, cfg.mmd_samples,
                              mix_seed(cfg.train.seed, 0x6d6d64ULL,
                                       static_cast<std::uint64_t>(cls)));
          stage.mmd_per_old_class[cls] =
              mmd_to_truth(pseudo, real.topRows(real_rows), cfg.mmd_bandwidth);
        }
      }

      stage.footprint_floats = bank.total_footprint();
      stages.push_back(std::move(stage));
    } catch (const NumericError& e) {
      throw NumericError("stage " + std::to_string(stage_id) + ": " + e.what());
    }
  }

  ExperimentOutput output;
  output.report = run_summary(stages);
  output.bank = std::move(bank);
  output.classifier = std::move(clf);
  output.k_bar = output.bank.mean_component_count();
  output.dim = stream.dim;
  output.num_classes = static_cast<int>(seen_classes.size());

  json j;
  j["config"] = echo_config;
  j["seeds"] = {{"stream", cfg.stream_seed}, {"train", cfg.train.seed}};
  j["fidelity"] = cfg.fidelity;
  j["dim"] = output.dim;
  j["num_classes"] = output.num_classes;
  j["k_bar"] = output.k_bar;
  json stage_array = json::array();
  for (const auto& stage : output.report.stages) {
    stage_array.push_back(run_detail::stage_to_json(stage));
  }
  j["stages"] = stage_array;
  j["summary"] = {{"average_accuracy", run_detail::round2(output.report.average_accuracy)},
                  {"final_accuracy", run_detail::round2(output.report.final_accuracy)},
                  {"performance_drop", run_detail::round2(output.report.performance_drop)},
                  {"confusion_total", output.report.confusion_total}};
  output.report_json = std::move(j);
  return output;
}

// --- Emission -------------------------------------------------------------------

inline std::string report_csv(const json& report) {
  std::string csv = "task_id,A_tau,C_I,M_new,M_old,footprint\n";
  char line[160];
  for (const auto& stage : report.at("stages")) {
    std::snprintf(line, sizeof(line), "%d,%.2f,%.4f,%lld,%lld,%lld\n",
                  stage.at("task_id").get<int>(), stage.at("accuracy").get<double>(),
                  stage.at("confusion_index").get<double>(),
                  stage.at("old_to_new").get<long long>(),
                  stage.at("new_to_old").get<long long>(),
                  stage.at("footprint_floats").get<long long>());
    csv += line;
  }
  return csv;
}

/// Inspection-oriented JSON view of a bank: means and weights in full,
/// spreads summarized by their per-component scalar deviation.
inline json bank_summary_json(const MemoryBank& bank) {
  json classes = json::object();
  for (const auto& [class_id, mem] : bank.entries) {
    json entry;
    entry["fidelity"] = fidelity_name(mem.fidelity);
    entry["components"] = mem.component_count();
    entry["weights"] = mem.weights;
    entry["footprint_floats"] = memory_footprint(mem);
    json means = json::array();
    json spread = json::array();
    for (int k = 0; k < mem.component_count(); ++k) {
      const auto idx = static_cast<std::size_t>(k);
      std::vector<double> mean(mem.means[idx].data(),
                               mem.means[idx].data() + mem.means[idx].size());
      means.push_back(mean);
      switch (mem.fidelity) {
        case Fidelity::kDmr:
          spread.push_back(detail::scalar_std_from_cov(mem.covariances[idx]));
          break;
        case Fidelity::kDStd:
          spread.push_back(detail::scalar_std_from_diag(mem.diag_stds[idx]));
          break;
        default:
          spread.push_back(mem.scalar_stds[idx]);
          break;
      }
    }
    entry["means"] = means;
    entry["scalar_std_per_component"] = spread;
    classes[std::to_string(class_id)] = entry;
  }
  return json{{"dim", bank.dim},
              {"classes", classes},
              {"mean_component_count", bank.mean_component_count()},
              {"total_footprint_floats", bank.total_footprint()}};
}

/// Writes report.json, report.csv, bank.bin, bank.json and classifier.bin
/// under out_dir (created if needed).
inline void write_outputs(const ExperimentOutput& output, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto dir = std::filesystem::path(out_dir);
  {
    std::ofstream out(dir / "report.json", std::ios::binary);
    out << output.report_json.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "report.csv", std::ios::binary);
    out << report_csv(output.report_json);
  }
  if (!output.bank.empty()) {
    save_bank_file(output.bank, (dir / "bank.bin").string());
    std::ofstream out(dir / "bank.json", std::ios::binary);
    out << bank_summary_json(output.bank).dump(2) << '\n';
  }
  save_classifier_file(output.classifier, (dir / "classifier.bin").string());
}

// --- Comparison -------------------------------------------------------------------

inline json load_report_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("reports", "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("reports", path + ": invalid JSON: " + e.what());
  }
}

/// Side-by-side CSV of summary metrics. Reports must describe the same
/// stream shape (stage count and per-stage class counts).
inline std::string compare_reports_csv(const std::vector<json>& reports,
                                       const std::vector<std::string>& names) {
  if (reports.size() < 2) throw ConfigError("reports", "need at least two reports to compare");
  std::vector<int> shape;
  for (const auto& stage : reports.front().at("stages")) {
    shape.push_back(stage.at("classes_seen").get<int>());
  }
  for (const auto& report : reports) {
    std::vector<int> other;
    for (const auto& stage : report.at("stages")) {
      other.push_back(stage.at("classes_seen").get<int>());
    }
    if (other != shape) throw ConfigError("reports", "stream shape mismatch");
  }
  std::string csv = "report,fidelity,A_bar,A_T,PD,C_I_total,footprint\n";
  char line[512];
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& summary = reports[i].at("summary");
    const auto& last_stage = reports[i].at("stages").back();
    std::snprintf(line, sizeof(line), "%s,%s,%.2f,%.2f,%.2f,%.4f,%lld\n", names[i].c_str(),
                  reports[i].at("fidelity").get<std::string>().c_str(),
                  summary.at("average_accuracy").get<double>(),
                  summary.at("final_accuracy").get<double>(),
                  summary.at("performance_drop").get<double>(),
                  summary.at("confusion_total").get<double>(),
                  last_stage.at("footprint_floats").get<long long>());
    csv += line;
  }
  return csv;
}

/// Human-readable per-class listing of a stored memory bank.
inline std::string inspect_bank(const MemoryBank& bank) {
  std::ostringstream out;
  if (bank.empty()) {
    out << "0 classes\n";
    return out.str();
  }
  out << bank.entries.size() << " classes, dim " << bank.dim << ", mean components "
      << bank.mean_component_count() << "\n";
  for (const auto& [cls, mem] : bank.entries) {
    out << "class " << cls << ": fidelity=" << fidelity_name(mem.fidelity)
        << " K=" << mem.component_count() << " footprint=" << memory_footprint(mem)
        << " weights=[";
    for (int k = 0; k < mem.component_count(); ++k) {
      if (k > 0) out << ", ";
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", mem.weights[static_cast<std::size_t>(k)]);
      out << buf;
    }
    out << "]\n";
  }
  return out.str();
}

}  // namespace dmr
