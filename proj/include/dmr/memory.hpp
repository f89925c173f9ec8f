#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmr/errors.hpp"
#include "dmr/gmm.hpp"
#include "dmr/random.hpp"
#include "dmr/serialize.hpp"
#include "dmr/silhouette.hpp"

namespace dmr {

/// Storage fidelities, ordered by information content:
///   prior     - one component, class center + one scalar std
///   dmr-lite  - adaptive components, scalar std each
///   d-std     - per-dimension stds
///   dmr       - full covariance matrices
enum class Fidelity : std::uint8_t { kPrior = 0, kDmrLite = 1, kDStd = 2, kDmr = 3 };

inline int fidelity_rank(Fidelity f) { return static_cast<int>(f); }

inline std::string fidelity_name(Fidelity f) {
  switch (f) {
    case Fidelity::kPrior: return "prior";
    case Fidelity::kDmrLite: return "dmr-lite";
    case Fidelity::kDStd: return "d-std";
    case Fidelity::kDmr: return "dmr";
  }
  return "?";
}

inline Fidelity fidelity_from_name(const std::string& name) {
  if (name == "prior") return Fidelity::kPrior;
  if (name == "dmr-lite") return Fidelity::kDmrLite;
  if (name == "d-std") return Fidelity::kDStd;
  if (name == "dmr") return Fidelity::kDmr;
  throw std::invalid_argument("unknown fidelity: " + name);
}

/// Per-class distribution summary. The spread containers are keyed by
/// fidelity: covariances for dmr, diag_stds for d-std, scalar_stds for
/// dmr-lite and prior.
struct ClassMemory {
  int class_id = -1;
  Fidelity fidelity = Fidelity::kDmr;
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  std::vector<Eigen::VectorXd> diag_stds;
  std::vector<double> scalar_stds;

  int component_count() const { return static_cast<int>(weights.size()); }
  Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }

  void validate() const {
    const auto k = weights.size();
    if (k == 0) throw std::invalid_argument("class memory has no components");
    if (means.size() != k) throw std::invalid_argument("means/weights size mismatch");
    double total = 0.0;
    for (double w : weights) {
      if (w <= 0.0 || w > 1.0) throw std::invalid_argument("component weight outside (0, 1]");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("component weights do not sum to 1");
    }
    switch (fidelity) {
      case Fidelity::kDmr:
        if (covariances.size() != k) throw std::invalid_argument("missing covariances");
        break;
      case Fidelity::kDStd:
        if (diag_stds.size() != k) throw std::invalid_argument("missing per-dimension stds");
        break;
      case Fidelity::kDmrLite:
        if (scalar_stds.size() != k) throw std::invalid_argument("missing scalar stds");
        break;
      case Fidelity::kPrior:
        if (k != 1) throw std::invalid_argument("prior memory stores a single component");
        if (scalar_stds.size() != 1) throw std::invalid_argument("missing scalar std");
        break;
    }
  }
};

namespace detail {

inline double scalar_std_from_cov(const Eigen::MatrixXd& cov) {
  return std::sqrt(cov.trace() / static_cast<double>(cov.rows()));
}

inline double scalar_std_from_diag(const Eigen::VectorXd& stds) {
  return std::sqrt(stds.array().square().mean());
}

}  // namespace detail

/// Reduces a memory to a strictly lower-information fidelity:
///   dmr      -> d-std     per-dimension stds, sqrt of the covariance diagonal
///   dmr      -> dmr-lite  scalar std, sqrt(trace/d) per component
///   d-std    -> dmr-lite  scalar std, root-mean-square of the std vector
///   any      -> prior     single-component memories only
/// Means and weights are carried over untouched; requesting the current
/// fidelity is a no-op and an upgrade is an error.
inline ClassMemory degrade(const ClassMemory& mem, Fidelity target) {
  mem.validate();
  if (target == mem.fidelity) return mem;
  if (fidelity_rank(target) > fidelity_rank(mem.fidelity)) {
    throw std::invalid_argument("degrade: information cannot be restored (" +
                                fidelity_name(mem.fidelity) + " -> " + fidelity_name(target) + ")");
  }
  ClassMemory out;
  out.class_id = mem.class_id;
  out.fidelity = target;
  out.weights = mem.weights;
  out.means = mem.means;
  const int k = mem.component_count();

  if (target == Fidelity::kDStd) {
    for (int c = 0; c < k; ++c) {
      out.diag_stds.push_back(
          mem.covariances[static_cast<std::size_t>(c)].diagonal().array().sqrt().matrix());
    }
    return out;
  }

  auto scalar_of = [&](int c) {
    switch (mem.fidelity) {
      case Fidelity::kDmr:
        return detail::scalar_std_from_cov(mem.covariances[static_cast<std::size_t>(c)]);
      case Fidelity::kDStd:
        return detail::scalar_std_from_diag(mem.diag_stds[static_cast<std::size_t>(c)]);
      default:
        return mem.scalar_stds[static_cast<std::size_t>(c)];
    }
  };

  if (target == Fidelity::kDmrLite) {
    for (int c = 0; c < k; ++c) out.scalar_stds.push_back(scalar_of(c));
    return out;
  }

  // target == kPrior
  if (k != 1) {
    throw std::invalid_argument("degrade: prior fidelity stores a single component");
  }
  out.scalar_stds.push_back(scalar_of(0));
  return out;
}

/// Fits a class memory from raw features. Prior fidelity is the closed
/// form (class center + scalar std); everything else selects K* by
/// silhouette, fits a GMM at K*, and degrades the full-covariance result
/// to the requested fidelity.
inline ClassMemory fit_class_memory(int class_id, const Eigen::MatrixXd& features,
                                    Fidelity fidelity, const KSelectConfig& select_cfg,
                                    const EmConfig& em_cfg) {
  const auto n = features.rows();
  if (n < 2) throw std::invalid_argument("fit_class_memory: need at least 2 samples");

  if (fidelity == Fidelity::kPrior) {
    ClassMemory mem;
    mem.class_id = class_id;
    mem.fidelity = Fidelity::kPrior;
    mem.weights = {1.0};
    const Eigen::RowVectorXd mu = features.colwise().mean();
    mem.means.push_back(mu.transpose());
    const Eigen::MatrixXd centered = features.rowwise() - mu;
    mem.scalar_stds.push_back(std::sqrt(centered.array().square().colwise().mean().mean()));
    return mem;
  }

  int k_star = 1;
  KSelectConfig clamped = select_cfg;
  clamped.k_max = std::min<int>(select_cfg.k_max, static_cast<int>(n / 2));
  if (clamped.k_max >= 2) k_star = select_k(features, clamped);

  const auto fit = fit_em(features, k_star, em_cfg);
  ClassMemory mem;
  mem.class_id = class_id;
  mem.fidelity = Fidelity::kDmr;
  for (const auto& comp : fit.model.components) {
    mem.weights.push_back(comp.weight);
    mem.means.push_back(comp.mean);
    mem.covariances.push_back(comp.covariance);
  }
  return fidelity == Fidelity::kDmr ? mem : degrade(mem, fidelity);
}

/// Draws pseudo features: component by stored weight, then mean plus
/// spread-shaped standard normal noise.
inline Eigen::MatrixXd generate_pseudo(const ClassMemory& mem, Eigen::Index n, Rng& rng) {
  mem.validate();
  if (n < 1) throw std::invalid_argument("generate_pseudo: n must be >= 1");
  const auto d = mem.dim();
  std::vector<Eigen::MatrixXd> factors;
  if (mem.fidelity == Fidelity::kDmr) {
    for (const auto& cov : mem.covariances) {
      GaussianComponent comp{.mean = Eigen::VectorXd::Zero(d), .covariance = cov, .weight = 1.0};
      factors.push_back(detail::factorize(comp).chol_lower);
    }
  }
  Eigen::MatrixXd out(n, d);
  Eigen::VectorXd z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t k = rng.discrete(mem.weights);
    for (Eigen::Index j = 0; j < d; ++j) z(j) = rng.normal();
    switch (mem.fidelity) {
      case Fidelity::kDmr:
        out.row(i) = (mem.means[k] + factors[k] * z).transpose();
        break;
      case Fidelity::kDStd:
        out.row(i) = (mem.means[k].array() + mem.diag_stds[k].array() * z.array()).transpose();
        break;
      default:
        out.row(i) = (mem.means[k].array() + mem.scalar_stds[k] * z.array()).transpose();
        break;
    }
  }
  return out;
}

inline Eigen::MatrixXd generate_pseudo(const ClassMemory& mem, Eigen::Index n,
                                       std::uint64_t seed) {
  Rng rng(seed);
  return generate_pseudo(mem, n, rng);
}

/// Stored-float count per class:
///   prior d+1, d-std K(d+d), dmr-lite K(d+1), dmr K(d+d^2).
/// Component weights are K extra floats, reported separately because the
/// headline accounting folds them into the constants.
inline long long memory_footprint(const ClassMemory& mem, bool include_weights = false) {
  const auto d = static_cast<long long>(mem.dim());
  const auto k = static_cast<long long>(mem.component_count());
  long long floats = 0;
  switch (mem.fidelity) {
    case Fidelity::kPrior: floats = d + 1; break;
    case Fidelity::kDStd: floats = k * (d + d); break;
    case Fidelity::kDmrLite: floats = k * (d + 1); break;
    case Fidelity::kDmr: floats = k * (d + d * d); break;
  }
  return floats + (include_weights ? k : 0);
}

// --- Maximum mean discrepancy -------------------------------------------------

/// Median of the pooled pairwise Euclidean distances; the usual kernel
/// bandwidth heuristic. Falls back to 1 when every point coincides.
inline double median_heuristic_bandwidth(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const auto n = a.rows() + b.rows();
  Eigen::MatrixXd pooled(n, a.cols());
  pooled.topRows(a.rows()) = a;
  pooled.bottomRows(b.rows()) = b;
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      dists.push_back((pooled.row(i) - pooled.row(j)).norm());
    }
  }
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>((dists.size() - 1) / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  return *mid > 0.0 ? *mid : 1.0;
}

/// Unbiased squared MMD with a Gaussian kernel exp(-|x-y|^2 / (2 h^2)):
/// diagonal-excluded within-set terms, full cross term. Can be negative.
inline double mmd_to_truth(const Eigen::MatrixXd& pseudo, const Eigen::MatrixXd& real_features,
                           std::optional<double> bandwidth = std::nullopt) {
  const auto n = pseudo.rows();
  const auto m = real_features.rows();
  if (n < 2 || m < 2) {
    throw std::invalid_argument("mmd: unbiased estimator undefined for fewer than 2 samples");
  }
  if (pseudo.cols() != real_features.cols()) {
    throw std::invalid_argument("mmd: dimension mismatch");
  }
  const double h = bandwidth.value_or(median_heuristic_bandwidth(pseudo, real_features));
  if (h <= 0.0) throw std::invalid_argument("mmd: bandwidth must be positive");
  const double inv = 1.0 / (2.0 * h * h);

  double within_x = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      within_x += std::exp(-(pseudo.row(i) - pseudo.row(j)).squaredNorm() * inv);
    }
  }
  double within_y = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      within_y += std::exp(-(real_features.row(i) - real_features.row(j)).squaredNorm() * inv);
    }
  }
  double cross = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      cross += std::exp(-(pseudo.row(i) - real_features.row(j)).squaredNorm() * inv);
    }
  }
  return 2.0 * within_x / (static_cast<double>(n) * static_cast<double>(n - 1)) +
         2.0 * within_y / (static_cast<double>(m) * static_cast<double>(m - 1)) -
         2.0 * cross / (static_cast<double>(n) * static_cast<double>(m));
}

// --- Memory bank ----------------------------------------------------------------

/// Append-only store of per-class memories for all finished tasks.
struct MemoryBank {
  std::map<int, ClassMemory> entries;
  int dim = 0;

  bool empty() const { return entries.empty(); }
  bool has(int class_id) const { return entries.count(class_id) > 0; }

  const ClassMemory& at(int class_id) const {
    const auto it = entries.find(class_id);
    if (it == entries.end()) {
      throw std::invalid_argument("memory bank has no class " + std::to_string(class_id));
    }
    return it->second;
  }

  void add(ClassMemory mem) {
    mem.validate();
    if (dim == 0) dim = static_cast<int>(mem.dim());
    if (static_cast<int>(mem.dim()) != dim) {
      throw std::invalid_argument("memory dimension does not match bank");
    }
    if (entries.count(mem.class_id)) {
      throw std::invalid_argument("memory bank already holds class " +
                                  std::to_string(mem.class_id));
    }
    entries.emplace(mem.class_id, std::move(mem));
  }

  long long total_footprint(bool include_weights = false) const {
    long long total = 0;
    for (const auto& [id, mem] : entries) total += memory_footprint(mem, include_weights);
    return total;
  }

  double mean_component_count() const {
    if (entries.empty()) return 0.0;
    double total = 0.0;
    for (const auto& [id, mem] : entries) total += mem.component_count();
    return total / static_cast<double>(entries.size());
  }
};

inline Eigen::MatrixXd generate_pseudo(const MemoryBank& bank, int class_id, Eigen::Index n,
                                       std::uint64_t seed) {
  return generate_pseudo(bank.at(class_id), n, seed);
}

// --- DMRB container --------------------------------------------------------------

inline void save_bank(const MemoryBank& bank, std::ostream& out) {
  io::write_magic(out, "DMRB");
  io::write_pod<std::uint32_t>(out, 1);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(bank.dim));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(bank.entries.size()));
  for (const auto& [class_id, mem] : bank.entries) {
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(class_id));
    io::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(mem.fidelity));
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(mem.component_count()));
    for (int k = 0; k < mem.component_count(); ++k) {
      const auto idx = static_cast<std::size_t>(k);
      io::write_pod<double>(out, mem.weights[idx]);
      for (Eigen::Index j = 0; j < mem.dim(); ++j) io::write_pod<double>(out, mem.means[idx](j));
      switch (mem.fidelity) {
        case Fidelity::kDmr:
          for (Eigen::Index r = 0; r < mem.dim(); ++r) {
            for (Eigen::Index c = 0; c < mem.dim(); ++c) {
              io::write_pod<double>(out, mem.covariances[idx](r, c));
            }
          }
          break;
        case Fidelity::kDStd:
          for (Eigen::Index j = 0; j < mem.dim(); ++j) {
            io::write_pod<double>(out, mem.diag_stds[idx](j));
          }
          break;
        default:
          io::write_pod<double>(out, mem.scalar_stds[idx]);
          break;
      }
    }
  }
}

inline MemoryBank load_bank(std::istream& in) {
  io::expect_magic(in, "DMRB");
  const auto version = io::read_pod<std::uint32_t>(in, "version");
  if (version != 1) throw ParseError("unsupported DMRB version " + std::to_string(version));
  MemoryBank bank;
  bank.dim = static_cast<int>(io::read_pod<std::uint32_t>(in, "dim"));
  const auto count = io::read_pod<std::uint32_t>(in, "entry count");
  const auto d = static_cast<Eigen::Index>(bank.dim);
  for (std::uint32_t e = 0; e < count; ++e) {
    ClassMemory mem;
    mem.class_id = static_cast<int>(io::read_pod<std::uint32_t>(in, "class id"));
    const auto fid = io::read_pod<std::uint8_t>(in, "fidelity");
    if (fid > 3) throw ParseError("bad fidelity byte " + std::to_string(fid));
    mem.fidelity = static_cast<Fidelity>(fid);
    const auto k = io::read_pod<std::uint32_t>(in, "component count");
    for (std::uint32_t c = 0; c < k; ++c) {
      mem.weights.push_back(io::read_pod<double>(in, "weight"));
      Eigen::VectorXd mean(d);
      for (Eigen::Index j = 0; j < d; ++j) mean(j) = io::read_pod<double>(in, "mean");
      mem.means.push_back(std::move(mean));
      switch (mem.fidelity) {
        case Fidelity::kDmr: {
          Eigen::MatrixXd cov(d, d);
          for (Eigen::Index r = 0; r < d; ++r) {
            for (Eigen::Index col = 0; col < d; ++col) {
              cov(r, col) = io::read_pod<double>(in, "covariance");
            }
          }
          mem.covariances.push_back(std::move(cov));
          break;
        }
        case Fidelity::kDStd: {
          Eigen::VectorXd stds(d);
          for (Eigen::Index j = 0; j < d; ++j) stds(j) = io::read_pod<double>(in, "std");
          mem.diag_stds.push_back(std::move(stds));
          break;
        }
        default:
          mem.scalar_stds.push_back(io::read_pod<double>(in, "std"));
          break;
      }
    }
    bank.add(std::move(mem));
  }
  return bank;
}

inline void save_bank_file(const MemoryBank& bank, const std::string& path) {
  auto out = io::open_output(path);
  save_bank(bank, out);
}

inline MemoryBank load_bank_file(const std::string& path) {
  auto in = io::open_input(path);
  return load_bank(in);
}

}  // namespace dmr
