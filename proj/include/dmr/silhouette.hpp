#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "dmr/gmm.hpp"
#include "dmr/kmeans.hpp"

// Silhouette scoring over *squared* Euclidean distances, and the adaptive
// component-count selection built on it. Cohesion a(i) is the mean squared
// distance to co-cluster members; separation b(i) is the smallest mean
// squared distance to any other cluster. A singleton cluster has a(i) = 0,
// which makes s(i) = 1 by convention.

namespace dmr {

enum class CandidateClusterer { kKMeans, kGmmMap };

struct KSelectConfig {
  int k_max = 5;
  double threshold = 0.1;
  CandidateClusterer clusterer = CandidateClusterer::kKMeans;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_index(int i, Eigen::Index n) {
  if (i < 0 || static_cast<Eigen::Index>(i) >= n) {
    throw std::invalid_argument("sample index out of range");
  }
}

inline std::map<int, std::vector<Eigen::Index>> cluster_members(
    const std::vector<int>& assignment) {
  std::map<int, std::vector<Eigen::Index>> members;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    members[assignment[i]].push_back(static_cast<Eigen::Index>(i));
  }
  return members;
}

}  // namespace detail

inline double intra_cohesion(int i, const std::vector<int>& assignment,
                             const Eigen::MatrixXd& data) {
  detail::check_index(i, data.rows());
  const int own = assignment[static_cast<std::size_t>(i)];
  double sum = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index j = 0; j < data.rows(); ++j) {
    if (j == i || assignment[static_cast<std::size_t>(j)] != own) continue;
    sum += (data.row(i) - data.row(j)).squaredNorm();
    ++count;
  }
  if (count == 0) return 0.0;  // singleton
  return sum / static_cast<double>(count);
}

inline double inter_separation(int i, const std::vector<int>& assignment,
                               const Eigen::MatrixXd& data) {
  detail::check_index(i, data.rows());
  const int own = assignment[static_cast<std::size_t>(i)];
  const auto members = detail::cluster_members(assignment);
  if (members.size() < 2) throw std::invalid_argument("b undefined: only one cluster");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [cluster, rows] : members) {
    if (cluster == own) continue;
    double sum = 0.0;
    for (Eigen::Index j : rows) sum += (data.row(i) - data.row(j)).squaredNorm();
    best = std::min(best, sum / static_cast<double>(rows.size()));
  }
  return best;
}

inline double sample_silhouette(int i, const std::vector<int>& assignment,
                                const Eigen::MatrixXd& data) {
  const double a = intra_cohesion(i, assignment, data);
  const double b = inter_separation(i, assignment, data);
  const double denom = std::max(a, b);
  if (denom == 0.0) return 0.0;  // all relevant points coincide
  return (b - a) / denom;
}

inline double mean_silhouette(const std::vector<int>& assignment,
                              const Eigen::MatrixXd& data) {
  if (static_cast<Eigen::Index>(assignment.size()) != data.rows()) {
    throw std::invalid_argument("assignment length does not match data");
  }
  if (data.rows() < 2) throw std::invalid_argument("need at least 2 samples");
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    total += sample_silhouette(static_cast<int>(i), assignment, data);
  }
  return total / static_cast<double>(data.rows());
}

namespace detail {

/// Same statistic as mean_silhouette, quadratic in n but with the
/// pairwise squared distances precomputed once for the select_k sweep.
inline double mean_silhouette_precomputed(const std::vector<int>& assignment,
                                          const Eigen::MatrixXd& sq_dist, int k) {
  const auto n = sq_dist.rows();
  std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])];

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      sums[static_cast<std::size_t>(assignment[static_cast<std::size_t>(j)])] += sq_dist(i, j);
    }
    const int own = assignment[static_cast<std::size_t>(i)];
    const auto own_count = counts[static_cast<std::size_t>(own)];
    const double a = own_count > 1
                         ? sums[static_cast<std::size_t>(own)] / static_cast<double>(own_count - 1)
                         : 0.0;
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c == own || counts[static_cast<std::size_t>(c)] == 0) continue;
      b = std::min(b, sums[static_cast<std::size_t>(c)] / static_cast<double>(counts[static_cast<std::size_t>(c)]));
    }
    const double denom = std::max(a, b);
    total += denom == 0.0 ? 0.0 : (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

inline std::vector<int> gmm_map_assignment(const Eigen::MatrixXd& data, int k,
                                           std::uint64_t seed) {
  EmConfig cfg;
  cfg.max_iters = 50;
  cfg.seed = seed;
  const auto fit = fit_em(data, k, cfg);
  const Eigen::MatrixXd resp = e_step(fit.model, data);
  std::vector<int> assignment(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    Eigen::Index arg = 0;
    resp.row(i).maxCoeff(&arg);
    assignment[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return assignment;
}

}  // namespace detail

/// Mean silhouette for each trial K in [2, k_max]. Entry t holds the score
/// of K = t + 2; a NaN marks a skipped K (empty candidate cluster).
inline std::vector<double> select_k_scores(const Eigen::MatrixXd& data,
                                           const KSelectConfig& cfg) {
  if (cfg.k_max < 2) throw std::invalid_argument("select_k: k_max must be >= 2");
  if (cfg.threshold < 0 || cfg.threshold >= 1) {
    throw std::invalid_argument("select_k: threshold must be in [0, 1)");
  }
  const auto n = data.rows();
  if (n < 2 * cfg.k_max) throw std::invalid_argument("select_k: need n >= 2*k_max samples");

  Eigen::MatrixXd sq_dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sq_dist(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double sq = (data.row(i) - data.row(j)).squaredNorm();
      sq_dist(i, j) = sq;
      sq_dist(j, i) = sq;
    }
  }

  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(cfg.k_max - 1));
  for (int k = 2; k <= cfg.k_max; ++k) {
    std::vector<int> assignment;
    try {
      if (cfg.clusterer == CandidateClusterer::kKMeans) {
        assignment = kmeans(data, k, mix_seed(cfg.seed, static_cast<std::uint64_t>(k))).assignment;
      } else {
        assignment = detail::gmm_map_assignment(data, k, mix_seed(cfg.seed, static_cast<std::uint64_t>(k)));
      }
    } catch (const NumericError&) {
      scores.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (int c : assignment) ++counts[static_cast<std::size_t>(c)];
    if (std::find(counts.begin(), counts.end(), 0) != counts.end()) {
      scores.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    scores.push_back(detail::mean_silhouette_precomputed(assignment, sq_dist, k));
  }
  return scores;
}

/// Adaptive component count: the K in [2, k_max] with the best mean
/// silhouette if that best exceeds the threshold, otherwise 1.
inline int select_k(const Eigen::MatrixXd& data, const KSelectConfig& cfg) {
  const auto scores = select_k_scores(data, cfg);
  int best_k = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < scores.size(); ++t) {
    if (std::isnan(scores[t])) continue;
    if (scores[t] > best_score) {
      best_score = scores[t];
      best_k = static_cast<int>(t) + 2;
    }
  }
  if (best_k == 0) return 1;  // every K skipped
  return best_score > cfg.threshold ? best_k : 1;
}

}  // namespace dmr
