#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmr {

/// Top-1 accuracy in percent.
inline double stage_accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty()) throw std::invalid_argument("stage_accuracy: empty predictions");
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("stage_accuracy: size mismatch");
  }
  long correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(preds.size());
}

/// Cross-task confusion tallies for one evaluation: how many old-task
/// samples were pulled into new-task classes and vice versa, each counted
/// against its own population. Within-task mistakes do not register here.
struct ConfusionCounts {
  long old_to_new = 0;  // old-task samples predicted as a new-task class
  long new_to_old = 0;  // new-task samples predicted as an old-task class
  long old_total = 0;
  long new_total = 0;

  double index() const {
    double value = 0.0;
    if (old_total > 0) value += static_cast<double>(old_to_new) / static_cast<double>(old_total);
    if (new_total > 0) value += static_cast<double>(new_to_old) / static_cast<double>(new_total);
    return value;
  }
};

/// Confusion index at the given stage: labels and predictions are mapped
/// through task_of_class; "new" means task == current_task, "old" means
/// task < current_task.
inline ConfusionCounts confusion_index(const std::vector<int>& preds,
                                       const std::vector<int>& labels,
                                       const std::map<int, int>& task_of_class,
                                       int current_task) {
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("confusion_index: size mismatch");
  }
  auto task_of = [&](int class_id) {
    const auto it = task_of_class.find(class_id);
    if (it == task_of_class.end()) {
      throw std::invalid_argument("confusion_index: class " + std::to_string(class_id) +
                                  " has no task mapping");
    }
    if (it->second > current_task) {
      throw std::invalid_argument("confusion_index: class " + std::to_string(class_id) +
                                  " belongs to a future task");
    }
    return it->second;
  };
  ConfusionCounts counts;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool label_new = task_of(labels[i]) == current_task;
    const bool pred_new = task_of(preds[i]) == current_task;
    if (label_new) {
      ++counts.new_total;
      if (!pred_new) ++counts.new_to_old;
    } else {
      ++counts.old_total;
      if (pred_new) ++counts.old_to_new;
    }
  }
  return counts;
}

/// Convenience overload: the newest task in the mapping is "current".
inline ConfusionCounts confusion_index(const std::vector<int>& preds,
                                       const std::vector<int>& labels,
                                       const std::map<int, int>& task_of_class) {
  if (task_of_class.empty()) throw std::invalid_argument("confusion_index: empty task map");
  int current = 0;
  for (const auto& [cls, task] : task_of_class) current = std::max(current, task);
  return confusion_index(preds, labels, task_of_class, current);
}

struct StageReport {
  int task_id = 0;
  double accuracy = 0.0;  // percent
  std::map<int, double> per_class_accuracy;
  ConfusionCounts confusion;
  double confusion_value = 0.0;
  std::map<int, double> mmd_per_old_class;
  long long footprint_floats = 0;
  int classes_seen = 0;
};

struct RunReport {
  std::vector<StageReport> stages;
  double average_accuracy = 0.0;
  double final_accuracy = 0.0;
  double performance_drop = 0.0;  // base accuracy minus final accuracy
  double confusion_total = 0.0;
};

inline RunReport run_summary(const std::vector<StageReport>& stages) {
  if (stages.empty()) throw std::invalid_argument("run_summary: no stages");
  RunReport report;
  report.stages = stages;
  double acc_sum = 0.0;
  for (const auto& stage : stages) {
    acc_sum += stage.accuracy;
    report.confusion_total += stage.confusion_value;
  }
  report.average_accuracy = acc_sum / static_cast<double>(stages.size());
  report.final_accuracy = stages.back().accuracy;
  report.performance_drop = stages.front().accuracy - stages.back().accuracy;
  return report;
}

}  // namespace dmr
