#pragma once

#include <Eigen/Dense>

#include "dmr/classifier.hpp"
#include "dmr/memory.hpp"

// Reference memory strategies for ablation parity: a single class center
// with one scalar deviation, the per-dimension variant, and plain
// fine-tuning without replay. All three reuse the incremental trainer so
// the only variable is how old classes are summarized.

namespace dmr {

/// Class center plus one scalar std (root of the mean per-dimension
/// variance).
inline ClassMemory fit_prior(int class_id, const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw std::invalid_argument("fit_prior: need at least 2 samples");
  KSelectConfig unused_select;
  EmConfig unused_em;
  return fit_class_memory(class_id, features, Fidelity::kPrior, unused_select, unused_em);
}

/// Class center plus the per-dimension std vector.
inline ClassMemory fit_dstd(int class_id, const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw std::invalid_argument("fit_dstd: need at least 2 samples");
  ClassMemory mem;
  mem.class_id = class_id;
  mem.fidelity = Fidelity::kDStd;
  mem.weights = {1.0};
  const Eigen::RowVectorXd mu = features.colwise().mean();
  mem.means.push_back(mu.transpose());
  const Eigen::MatrixXd centered = features.rowwise() - mu;
  mem.diag_stds.push_back(
      centered.array().square().colwise().mean().sqrt().matrix().transpose());
  return mem;
}

/// No-replay fine-tuning: the same trainer with an empty bank and the
/// mixed term switched off.
inline LinearClassifier finetune_stage(const LinearClassifier& classifier, const Batch& task,
                                       const TrainConfig& cfg) {
  TrainConfig pure = cfg;
  pure.xi = 1.0;
  MemoryBank empty_bank;
  return train_stage(classifier, task, empty_bank, pure);
}

}  // namespace dmr
