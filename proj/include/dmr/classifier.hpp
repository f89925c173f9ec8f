#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmr/errors.hpp"
#include "dmr/memory.hpp"
#include "dmr/random.hpp"
#include "dmr/serialize.hpp"

namespace dmr {

/// Linear head over frozen features. Columns are appended as tasks arrive;
/// existing columns are never touched by an expansion.
struct LinearClassifier {
  Eigen::MatrixXd weights;  // d x C
  Eigen::VectorXd bias;     // C
  std::vector<int> class_order;

  static LinearClassifier make(Eigen::Index dim) {
    LinearClassifier clf;
    clf.weights.resize(dim, 0);
    clf.bias.resize(0);
    return clf;
  }

  Eigen::Index dim() const { return weights.rows(); }
  int num_classes() const { return static_cast<int>(class_order.size()); }

  bool has_class(int class_id) const {
    return std::find(class_order.begin(), class_order.end(), class_id) != class_order.end();
  }

  int column_of(int class_id) const {
    const auto it = std::find(class_order.begin(), class_order.end(), class_id);
    if (it == class_order.end()) {
      throw std::invalid_argument("class " + std::to_string(class_id) +
                                  " is not part of the classifier");
    }
    return static_cast<int>(it - class_order.begin());
  }

  void expand(const std::vector<int>& new_class_ids) {
    for (int c : new_class_ids) {
      if (has_class(c)) {
        throw std::invalid_argument("class " + std::to_string(c) + " already present");
      }
    }
    const auto old_cols = weights.cols();
    weights.conservativeResize(Eigen::NoChange, old_cols + static_cast<Eigen::Index>(new_class_ids.size()));
    weights.rightCols(static_cast<Eigen::Index>(new_class_ids.size())).setZero();
    bias.conservativeResize(old_cols + static_cast<Eigen::Index>(new_class_ids.size()));
    bias.tail(static_cast<Eigen::Index>(new_class_ids.size())).setZero();
    class_order.insert(class_order.end(), new_class_ids.begin(), new_class_ids.end());
  }

  Eigen::VectorXd logits(const Eigen::VectorXd& x) const {
    if (x.size() != dim()) throw std::invalid_argument("feature dimension mismatch");
    return weights.transpose() * x + bias;
  }
};

struct Batch {
  Eigen::MatrixXd features;  // rows are samples
  std::vector<int> labels;

  Eigen::Index size() const { return features.rows(); }
  bool empty() const { return features.rows() == 0; }
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double xi = 0.5;          // weight between (cls + pseudo) and mixed terms
  double beta_alpha = 0.5;  // lambda ~ Beta(alpha, alpha)
  int pseudo_per_class = 8;
  std::uint64_t seed = 0;
  std::optional<double> base_learning_rate;  // stage-0 override
  std::optional<int> base_epochs;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (learning_rate <= 0) throw std::invalid_argument("train: learning_rate must be positive");
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train: momentum must be in [0, 1)");
    if (xi < 0 || xi > 1) throw std::invalid_argument("train: xi must be in [0, 1]");
    if (beta_alpha <= 0) throw std::invalid_argument("train: beta_alpha must be positive");
    if (pseudo_per_class < 0) throw std::invalid_argument("train: pseudo_per_class must be >= 0");
  }
};

/// Convex blend of a new-task feature with an old-class pseudo feature.
inline Eigen::VectorXd mixup_enhance(const Eigen::VectorXd& new_feat,
                                     const Eigen::VectorXd& pseudo_feat, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) {
    throw std::invalid_argument("mixup: lambda must be in [0, 1]");
  }
  if (new_feat.size() != pseudo_feat.size()) {
    throw std::invalid_argument("mixup: dimension mismatch");
  }
  return lambda * new_feat + (1.0 - lambda) * pseudo_feat;
}

namespace detail {

/// Mean softmax cross-entropy over one batch; optionally accumulates
/// coeff-scaled gradients into the provided buffers.
inline double batch_cross_entropy(const LinearClassifier& clf, const Batch& batch,
                                  double coeff, Eigen::MatrixXd* grad_w,
                                  Eigen::VectorXd* grad_b) {
  if (batch.empty()) return 0.0;
  if (batch.features.cols() != clf.dim()) {
    throw std::invalid_argument("batch feature dimension mismatch");
  }
  if (static_cast<Eigen::Index>(batch.labels.size()) != batch.size()) {
    throw std::invalid_argument("batch labels do not match feature rows");
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const Eigen::VectorXd x = batch.features.row(i).transpose();
    const int col = clf.column_of(batch.labels[static_cast<std::size_t>(i)]);
    Eigen::VectorXd z = clf.logits(x);
    const double zmax = z.maxCoeff();
    const double lse = zmax + std::log((z.array() - zmax).exp().sum());
    total += lse - z(col);
    if (grad_w != nullptr) {
      Eigen::VectorXd p = (z.array() - lse).exp();
      p(col) -= 1.0;
      grad_w->noalias() += (coeff * inv_n) * (x * p.transpose());
      *grad_b += (coeff * inv_n) * p;
    }
  }
  return total * inv_n;
}

struct LossGrad {
  double loss = 0.0;
  Eigen::MatrixXd grad_weights;
  Eigen::VectorXd grad_bias;
};

inline LossGrad composite_loss_grad_impl(const Batch& batch_new, const Batch& batch_pseudo,
                                         const Batch& batch_mixed, const LinearClassifier& clf,
                                         double xi, bool want_grad) {
  if (xi < 0.0 || xi > 1.0) throw std::invalid_argument("xi must be in [0, 1]");
  if (batch_new.empty()) throw std::invalid_argument("new-task batch must not be empty");
  LossGrad out;
  Eigen::MatrixXd* gw = nullptr;
  Eigen::VectorXd* gb = nullptr;
  if (want_grad) {
    out.grad_weights = Eigen::MatrixXd::Zero(clf.weights.rows(), clf.weights.cols());
    out.grad_bias = Eigen::VectorXd::Zero(clf.bias.size());
    gw = &out.grad_weights;
    gb = &out.grad_bias;
  }
  const double l_cls = batch_cross_entropy(clf, batch_new, xi, gw, gb);
  const double l_pseudo = batch_cross_entropy(clf, batch_pseudo, xi, gw, gb);
  const double l_mixed = batch_cross_entropy(clf, batch_mixed, 1.0 - xi, gw, gb);
  out.loss = xi * (l_cls + l_pseudo) + (1.0 - xi) * l_mixed;
  return out;
}

}  // namespace detail

/// Composite objective: xi * (new-task cross-entropy + pseudo-feature
/// cross-entropy) + (1 - xi) * mixed-feature cross-entropy. Pseudo and
/// mixed terms vanish for empty batches (base stage).
inline double composite_loss(const Batch& batch_new, const Batch& batch_pseudo,
                             const Batch& batch_mixed, const LinearClassifier& clf, double xi) {
  return detail::composite_loss_grad_impl(batch_new, batch_pseudo, batch_mixed, clf, xi, false)
      .loss;
}

inline detail::LossGrad composite_loss_grad(const Batch& batch_new, const Batch& batch_pseudo,
                                            const Batch& batch_mixed,
                                            const LinearClassifier& clf, double xi) {
  return detail::composite_loss_grad_impl(batch_new, batch_pseudo, batch_mixed, clf, xi, true);
}

/// Argmax prediction; exact logit ties resolve to the lower class id.
inline std::vector<int> predict(const LinearClassifier& clf, const Eigen::MatrixXd& features) {
  if (clf.num_classes() == 0) throw std::invalid_argument("classifier has no classes");
  if (features.cols() != clf.dim()) throw std::invalid_argument("feature dimension mismatch");
  std::vector<int> preds;
  preds.reserve(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const Eigen::VectorXd z = clf.logits(features.row(i).transpose());
    int best_class = clf.class_order.front();
    double best_logit = z(0);
    for (int c = 1; c < clf.num_classes(); ++c) {
      const int class_id = clf.class_order[static_cast<std::size_t>(c)];
      if (z(c) > best_logit || (z(c) == best_logit && class_id < best_class)) {
        best_logit = z(c);
        best_class = class_id;
      }
    }
    preds.push_back(best_class);
  }
  return preds;
}

/// One incremental stage of minibatch SGD with momentum on the composite
/// objective. The classifier grows columns for the task's classes; old
/// columns train further but are never re-initialized. Pseudo features are
/// re-drawn from the bank for every batch; each new feature is blended
/// with a pseudo feature of a uniformly random old class using
/// lambda ~ Beta(alpha, alpha) and keeps its new-class label.
///
/// Data shuffling and replay draws run on separate seeded streams, so a
/// run with replay disabled consumes the same shuffle sequence as one with
/// replay enabled.
inline LinearClassifier train_stage(const LinearClassifier& classifier, const Batch& task,
                                    const MemoryBank& bank, const TrainConfig& cfg) {
  cfg.validate();
  if (task.empty()) throw std::invalid_argument("train_stage: empty task batch");
  if (static_cast<Eigen::Index>(task.labels.size()) != task.size()) {
    throw std::invalid_argument("train_stage: labels do not match features");
  }

  LinearClassifier clf = classifier;
  if (clf.dim() == 0 && clf.num_classes() == 0) clf.weights.resize(task.features.cols(), 0);
  std::set<int> fresh(task.labels.begin(), task.labels.end());
  std::vector<int> new_ids;
  for (int c : fresh) {
    if (!clf.has_class(c)) new_ids.push_back(c);
  }
  clf.expand(new_ids);

  const bool is_base = bank.empty();
  const double lr = is_base ? cfg.base_learning_rate.value_or(cfg.learning_rate)
                            : cfg.learning_rate;
  const int epochs = is_base ? cfg.base_epochs.value_or(cfg.epochs) : cfg.epochs;

  std::vector<int> old_ids;
  for (const auto& [id, mem] : bank.entries) old_ids.push_back(id);

  Rng rng_data(mix_seed(cfg.seed, 0xda7aULL));
  Rng rng_replay(mix_seed(cfg.seed, 0x5eedULL));

  Eigen::MatrixXd vel_w = Eigen::MatrixXd::Zero(clf.weights.rows(), clf.weights.cols());
  Eigen::VectorXd vel_b = Eigen::VectorXd::Zero(clf.bias.size());

  std::vector<Eigen::Index> order(static_cast<std::size_t>(task.size()));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng_data.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                               order.size() - start);
      Batch batch_new;
      batch_new.features.resize(static_cast<Eigen::Index>(count), clf.dim());
      batch_new.labels.resize(count);
      for (std::size_t r = 0; r < count; ++r) {
        batch_new.features.row(static_cast<Eigen::Index>(r)) = task.features.row(order[start + r]);
        batch_new.labels[r] = task.labels[static_cast<std::size_t>(order[start + r])];
      }

      Batch batch_pseudo, batch_mixed;
      if (!bank.empty()) {
        if (cfg.pseudo_per_class > 0) {
          batch_pseudo.features.resize(
              static_cast<Eigen::Index>(old_ids.size()) * cfg.pseudo_per_class, clf.dim());
          Eigen::Index row = 0;
          for (int c : old_ids) {
            const Eigen::MatrixXd draws =
                generate_pseudo(bank.at(c), cfg.pseudo_per_class, rng_replay);
            batch_pseudo.features.middleRows(row, draws.rows()) = draws;
            for (Eigen::Index r = 0; r < draws.rows(); ++r) batch_pseudo.labels.push_back(c);
            row += draws.rows();
          }
        }
        batch_mixed.features.resize(batch_new.size(), clf.dim());
        batch_mixed.labels = batch_new.labels;
        for (Eigen::Index r = 0; r < batch_new.size(); ++r) {
          const int old_class =
              old_ids[static_cast<std::size_t>(rng_replay.uniform_int(old_ids.size()))];
          const Eigen::MatrixXd pseudo = generate_pseudo(bank.at(old_class), 1, rng_replay);
          // Folded to the new-dominant half: the blend carries the hard
          // label of the new class, so the new feature must dominate it.
          const double draw = rng_replay.beta(cfg.beta_alpha, cfg.beta_alpha);
          const double lambda = std::max(draw, 1.0 - draw);
          batch_mixed.features.row(r) =
              mixup_enhance(batch_new.features.row(r).transpose(), pseudo.row(0).transpose(),
                            lambda)
                  .transpose();
        }
      }

      const auto lg = composite_loss_grad(batch_new, batch_pseudo, batch_mixed, clf, cfg.xi);
      vel_w = cfg.momentum * vel_w + lg.grad_weights;
      vel_b = cfg.momentum * vel_b + lg.grad_bias;
      clf.weights -= lr * vel_w;
      clf.bias -= lr * vel_b;
    }
  }
  return clf;
}

// --- DMRC checkpoint ---------------------------------------------------------

inline void save_classifier(const LinearClassifier& clf, std::ostream& out) {
  io::write_magic(out, "DMRC");
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(clf.dim()));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(clf.num_classes()));
  for (int c : clf.class_order) io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c));
  for (Eigen::Index c = 0; c < clf.weights.cols(); ++c) {
    for (Eigen::Index r = 0; r < clf.weights.rows(); ++r) {
      io::write_pod<double>(out, clf.weights(r, c));
    }
  }
  for (Eigen::Index c = 0; c < clf.bias.size(); ++c) io::write_pod<double>(out, clf.bias(c));
}

inline LinearClassifier load_classifier(std::istream& in) {
  io::expect_magic(in, "DMRC");
  const auto d = static_cast<Eigen::Index>(io::read_pod<std::uint32_t>(in, "dim"));
  const auto c = static_cast<Eigen::Index>(io::read_pod<std::uint32_t>(in, "class count"));
  LinearClassifier clf;
  clf.weights.resize(d, c);
  clf.bias.resize(c);
  clf.class_order.resize(static_cast<std::size_t>(c));
  for (auto& id : clf.class_order) {
    id = static_cast<int>(io::read_pod<std::uint32_t>(in, "class id"));
  }
  for (Eigen::Index col = 0; col < c; ++col) {
    for (Eigen::Index r = 0; r < d; ++r) {
      clf.weights(r, col) = io::read_pod<double>(in, "weight");
    }
  }
  for (Eigen::Index col = 0; col < c; ++col) clf.bias(col) = io::read_pod<double>(in, "bias");
  return clf;
}

inline void save_classifier_file(const LinearClassifier& clf, const std::string& path) {
  auto out = io::open_output(path);
  save_classifier(clf, out);
}

inline LinearClassifier load_classifier_file(const std::string& path) {
  auto in = io::open_input(path);
  return load_classifier(in);
}

}  // namespace dmr
