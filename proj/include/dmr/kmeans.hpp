#pragma once

#include <Eigen/Dense>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dmr/random.hpp"

namespace dmr {

struct KMeansResult {
  Eigen::MatrixXd centers;      // k x d
  std::vector<int> assignment;  // one cluster id per row of the data
};

namespace detail {

/// Greedy farthest-point seeding: a random first center, then the point
/// maximizing the distance to the nearest chosen center.
inline Eigen::MatrixXd farthest_point_centers(const Eigen::MatrixXd& data, int k, Rng& rng) {
  const auto n = data.rows();
  Eigen::MatrixXd centers(k, data.cols());
  const auto first = static_cast<Eigen::Index>(rng.uniform_int(static_cast<std::uint64_t>(n)));
  centers.row(0) = data.row(first);
  Eigen::VectorXd min_sq = (data.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    Eigen::Index pick = 0;
    min_sq.maxCoeff(&pick);
    centers.row(j) = data.row(pick);
    min_sq = min_sq.cwiseMin((data.rowwise() - centers.row(j)).rowwise().squaredNorm());
  }
  return centers;
}

inline int nearest_center(const Eigen::MatrixXd& centers, const Eigen::RowVectorXd& x) {
  int best = 0;
  double best_sq = std::numeric_limits<double>::infinity();
  for (int c = 0; c < centers.rows(); ++c) {
    const double sq = (x - centers.row(c)).squaredNorm();
    if (sq < best_sq) {
      best_sq = sq;
      best = c;
    }
  }
  return best;
}

}  // namespace detail

/// Lloyd iterations over farthest-point seeds. Deterministic given the seed.
/// An emptied cluster is re-centered on the point farthest from its own
/// center before the next pass.
inline KMeansResult kmeans(const Eigen::MatrixXd& data, int k, std::uint64_t seed,
                           int max_iters = 50) {
  const auto n = data.rows();
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (n < k) throw std::invalid_argument("kmeans: fewer points than clusters");

  Rng rng(seed);
  KMeansResult result;
  result.centers = detail::farthest_point_centers(data, k, rng);
  result.assignment.assign(static_cast<std::size_t>(n), 0);

  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = detail::nearest_center(result.centers, data.row(i));
      if (c != result.assignment[static_cast<std::size_t>(i)]) {
        result.assignment[static_cast<std::size_t>(i)] = c;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, data.cols());
    std::fill(counts.begin(), counts.end(), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(result.assignment[static_cast<std::size_t>(i)]) += data.row(i);
      ++counts[static_cast<std::size_t>(result.assignment[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        result.centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Re-seed on the point farthest from its assigned center.
        double worst = -1.0;
        Eigen::Index pick = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double sq =
              (data.row(i) - result.centers.row(result.assignment[static_cast<std::size_t>(i)]))
                  .squaredNorm();
          if (sq > worst) {
            worst = sq;
            pick = i;
          }
        }
        result.centers.row(c) = data.row(pick);
      }
    }
  }
  // Final assignment consistent with the returned centers.
  for (Eigen::Index i = 0; i < n; ++i) {
    result.assignment[static_cast<std::size_t>(i)] = detail::nearest_center(result.centers, data.row(i));
  }
  return result;
}

}  // namespace dmr
