#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmr/errors.hpp"
#include "dmr/kmeans.hpp"
#include "dmr/random.hpp"
#include "dmr/serialize.hpp"

namespace dmr {

struct GaussianComponent {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  double weight = 1.0;
};

struct GmmModel {
  std::vector<GaussianComponent> components;

  Eigen::Index dim() const {
    return components.empty() ? 0 : components.front().mean.size();
  }
  int component_count() const { return static_cast<int>(components.size()); }
};

enum class EmInit { kKMeansSeeded, kRandomResponsibilities };

struct EmConfig {
  int max_iters = 200;
  double rel_tol = 1e-6;
  /// Diagonal regularizer added to every covariance in every M-step.
  /// Unset means scale-aware: 1e-6 times the mean diagonal of the data
  /// covariance.
  std::optional<double> cov_jitter{};
  EmInit init = EmInit::kKMeansSeeded;
  std::uint64_t seed = 0;
};

struct EmResult {
  GmmModel model;
  /// Total log-likelihood of the data under the model entering each
  /// iteration; the last entry belongs to the returned model.
  std::vector<double> ll_trace;
};

namespace detail {

constexpr double kLn2Pi = 1.8378770664093454835606594728112;

struct ComponentFactor {
  Eigen::MatrixXd chol_lower;
  double half_logdet = 0.0;
};

inline ComponentFactor factorize(const GaussianComponent& comp) {
  const auto d = comp.mean.size();
  if (comp.covariance.rows() != d || comp.covariance.cols() != d) {
    throw std::invalid_argument("covariance shape does not match mean dimension");
  }
  const double scale = comp.covariance.cwiseAbs().maxCoeff();
  if ((comp.covariance - comp.covariance.transpose()).cwiseAbs().maxCoeff() >
      1e-9 * std::max(scale, 1.0)) {
    throw std::invalid_argument("covariance is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(comp.covariance);
  if (llt.info() != Eigen::Success) {
    throw NumericError("covariance is not positive-definite");
  }
  ComponentFactor f;
  f.chol_lower = llt.matrixL();
  f.half_logdet = f.chol_lower.diagonal().array().log().sum();
  return f;
}

inline double logpdf_factored(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                              const ComponentFactor& f) {
  const Eigen::VectorXd z =
      f.chol_lower.triangularView<Eigen::Lower>().solve(x - mean);
  return -0.5 * (static_cast<double>(x.size()) * kLn2Pi + z.squaredNorm()) -
         f.half_logdet;
}

inline std::vector<ComponentFactor> factorize_all(const GmmModel& model) {
  std::vector<ComponentFactor> factors;
  factors.reserve(model.components.size());
  for (const auto& comp : model.components) factors.push_back(factorize(comp));
  return factors;
}

}  // namespace detail

/// Log density of a single Gaussian component, evaluated through the
/// Cholesky factor of the covariance.
inline double gaussian_logpdf(const Eigen::VectorXd& x, const GaussianComponent& comp) {
  if (x.size() != comp.mean.size()) {
    throw std::invalid_argument("point dimension does not match component");
  }
  return detail::logpdf_factored(x, comp.mean, detail::factorize(comp));
}

/// Log of the mixture density, max-shifted for stability.
inline double mixture_logpdf(const Eigen::VectorXd& x, const GmmModel& model) {
  if (model.components.empty()) throw std::invalid_argument("empty mixture");
  const auto factors = detail::factorize_all(model);
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(model.components.size());
  for (std::size_t k = 0; k < model.components.size(); ++k) {
    const auto& comp = model.components[k];
    terms[k] = std::log(comp.weight) + detail::logpdf_factored(x, comp.mean, factors[k]);
    max_term = std::max(max_term, terms[k]);
  }
  if (!std::isfinite(max_term)) throw NumericError("mixture density underflowed");
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - max_term);
  return max_term + std::log(acc);
}

inline double neg_log_likelihood(const GmmModel& model, const Eigen::MatrixXd& data) {
  if (data.rows() < 1) throw std::invalid_argument("empty data");
  const auto factors = detail::factorize_all(model);
  double total = 0.0;
  std::vector<double> terms(model.components.size());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const Eigen::VectorXd x = data.row(i).transpose();
    double max_term = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < model.components.size(); ++k) {
      terms[k] = std::log(model.components[k].weight) +
                 detail::logpdf_factored(x, model.components[k].mean, factors[k]);
      max_term = std::max(max_term, terms[k]);
    }
    if (!std::isfinite(max_term)) throw NumericError("mixture density underflowed");
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - max_term);
    total += max_term + std::log(acc);
  }
  return -total;
}

namespace detail {

struct EStepOutput {
  Eigen::MatrixXd responsibilities;  // n x K, rows sum to 1
  double log_likelihood = 0.0;
};

inline EStepOutput e_step_impl(const GmmModel& model, const Eigen::MatrixXd& data) {
  const auto n = data.rows();
  const auto K = static_cast<Eigen::Index>(model.components.size());
  const auto factors = factorize_all(model);
  EStepOutput out;
  out.responsibilities.resize(n, K);
  Eigen::VectorXd terms(K);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd x = data.row(i).transpose();
    for (Eigen::Index k = 0; k < K; ++k) {
      terms(k) = std::log(model.components[static_cast<std::size_t>(k)].weight) +
                 logpdf_factored(x, model.components[static_cast<std::size_t>(k)].mean,
                                 factors[static_cast<std::size_t>(k)]);
    }
    const double max_term = terms.maxCoeff();
    if (!std::isfinite(max_term)) {
      throw NumericError("responsibility row underflowed at sample " + std::to_string(i));
    }
    const Eigen::VectorXd shifted = (terms.array() - max_term).exp();
    const double row_sum = shifted.sum();
    out.responsibilities.row(i) = (shifted / row_sum).transpose();
    out.log_likelihood += max_term + std::log(row_sum);
  }
  return out;
}

}  // namespace detail

/// Posterior component responsibilities, one row per sample.
inline Eigen::MatrixXd e_step(const GmmModel& model, const Eigen::MatrixXd& data) {
  if (model.components.empty()) throw std::invalid_argument("empty mixture");
  if (data.rows() < 1) throw std::invalid_argument("empty data");
  if (data.cols() != model.dim()) throw std::invalid_argument("dimension mismatch");
  return detail::e_step_impl(model, data).responsibilities;
}

namespace detail {

inline GmmModel m_step(const Eigen::MatrixXd& data, const Eigen::MatrixXd& resp,
                       double jitter) {
  const auto K = resp.cols();
  GmmModel model;
  model.components.resize(static_cast<std::size_t>(K));
  Eigen::VectorXd soft_counts = resp.colwise().sum();
  const double total = soft_counts.sum();
  for (Eigen::Index k = 0; k < K; ++k) {
    auto& comp = model.components[static_cast<std::size_t>(k)];
    const double nk = soft_counts(k);
    comp.weight = nk / total;
    const Eigen::RowVectorXd mu = (resp.col(k).transpose() * data) / nk;
    Eigen::MatrixXd centered = data.rowwise() - mu;
    Eigen::MatrixXd scatter =
        centered.transpose() * (centered.array().colwise() * resp.col(k).array()).matrix();
    comp.covariance = scatter / nk;
    comp.covariance = 0.5 * (comp.covariance + comp.covariance.transpose()).eval();
    comp.covariance.diagonal().array() += jitter;
    comp.mean = mu.transpose();
  }
  return model;
}

inline Eigen::MatrixXd hard_responsibilities(Eigen::Index n, int K,
                                             const std::vector<int>& assignment) {
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, K);
  for (Eigen::Index i = 0; i < n; ++i) resp(i, assignment[static_cast<std::size_t>(i)]) = 1.0;
  return resp;
}

}  // namespace detail

/// Maximum-likelihood fit of a K-component mixture by EM.
///
/// Initialization is farthest-point-seeded k-means (10 refinement passes)
/// or random responsibilities, per config; an explicit n x K
/// responsibility matrix overrides both. Stops when the relative
/// log-likelihood improvement drops below rel_tol or at max_iters. A
/// component whose responsibility mass collapses below 1e-8 is re-seeded
/// on the worst-fit sample once; a second collapse is an error.
inline EmResult fit_em(const Eigen::MatrixXd& data, int K, const EmConfig& cfg,
                       const Eigen::MatrixXd* initial_responsibilities = nullptr) {
  const auto n = data.rows();
  if (K < 1) throw std::invalid_argument("fit_em: K must be >= 1");
  if (n < 2) throw std::invalid_argument("fit_em: need at least 2 samples");
  if (n < K) throw std::invalid_argument("fit_em: more components than samples");
  if (cfg.max_iters < 1) throw std::invalid_argument("fit_em: max_iters must be >= 1");
  if (cfg.rel_tol <= 0) throw std::invalid_argument("fit_em: rel_tol must be positive");

  const Eigen::RowVectorXd data_mean = data.colwise().mean();
  const Eigen::MatrixXd data_centered = data.rowwise() - data_mean;
  const double mean_diag_var =
      data_centered.array().square().colwise().mean().mean();
  double jitter = cfg.cov_jitter.value_or(1e-6 * mean_diag_var);
  if (jitter < 0) throw std::invalid_argument("fit_em: cov_jitter must be >= 0");

  Eigen::MatrixXd resp;
  if (initial_responsibilities != nullptr) {
    if (initial_responsibilities->rows() != n ||
        initial_responsibilities->cols() != static_cast<Eigen::Index>(K)) {
      throw std::invalid_argument("fit_em: initial responsibilities have the wrong shape");
    }
    resp = *initial_responsibilities;
  } else if (cfg.init == EmInit::kKMeansSeeded) {
    const auto km = kmeans(data, K, mix_seed(cfg.seed, 0x6b6dULL), 10);
    resp = detail::hard_responsibilities(n, K, km.assignment);
  } else {
    Rng rng(mix_seed(cfg.seed, 0x7261ULL));
    resp.resize(n, K);
    for (Eigen::Index i = 0; i < n; ++i) {
      double row_sum = 0.0;
      for (Eigen::Index k = 0; k < K; ++k) {
        resp(i, k) = rng.uniform() + 1e-3;
        row_sum += resp(i, k);
      }
      resp.row(i) /= row_sum;
    }
  }
  // Guard the hard init against empty columns (duplicated points).
  for (Eigen::Index k = 0; k < K; ++k) {
    if (resp.col(k).sum() < 1e-8) {
      throw NumericError("fit_em: initialization produced an empty component");
    }
  }

  GmmModel model = detail::m_step(data, resp, jitter);
  EmResult result;
  std::vector<int> reseeds(static_cast<std::size_t>(K), 0);
  const Eigen::MatrixXd global_cov =
      (data_centered.transpose() * data_centered) / static_cast<double>(n);
  double prev_ll = 0.0;
  GmmModel prev_model;

  for (int iter = 0;; ++iter) {
    auto estep = detail::e_step_impl(model, data);
    result.ll_trace.push_back(estep.log_likelihood);
    if (iter > 0) {
      const double improvement = estep.log_likelihood - prev_ll;
      if (improvement < 0) {
        // The jitter keeps the exact M-step fixpoint slightly off the raw
        // likelihood optimum, so the last step can regress at second
        // order. Keep the best iterate.
        result.ll_trace.pop_back();
        model = std::move(prev_model);
        break;
      }
      if (improvement < cfg.rel_tol * std::max(1.0, std::abs(prev_ll))) break;
    }
    if (iter >= cfg.max_iters) break;
    prev_ll = estep.log_likelihood;
    prev_model = model;

    // Degenerate-component guard: re-seed once on the worst-fit sample.
    const Eigen::VectorXd soft_counts = estep.responsibilities.colwise().sum();
    bool reseeded = false;
    for (Eigen::Index k = 0; k < K; ++k) {
      if (soft_counts(k) >= 1e-8) continue;
      if (++reseeds[static_cast<std::size_t>(k)] > 1) {
        throw NumericError("fit_em: component " + std::to_string(k) +
                           " degenerated twice");
      }
      Eigen::Index worst = 0;
      double worst_ll = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double li = mixture_logpdf(data.row(i).transpose(), model);
        if (li < worst_ll) {
          worst_ll = li;
          worst = i;
        }
      }
      auto& comp = model.components[static_cast<std::size_t>(k)];
      comp.mean = data.row(worst).transpose();
      comp.covariance = global_cov;
      comp.covariance.diagonal().array() += jitter;
      comp.weight = 1.0 / static_cast<double>(n);
      double weight_sum = 0.0;
      for (const auto& c : model.components) weight_sum += c.weight;
      for (auto& c : model.components) c.weight /= weight_sum;
      reseeded = true;
    }
    if (reseeded) {
      // A reseed may lower the likelihood on purpose; restart the
      // improvement comparison from scratch.
      prev_ll = -std::numeric_limits<double>::infinity();
      continue;
    }

    model = detail::m_step(data, estep.responsibilities, jitter);
  }
  result.model = std::move(model);
  return result;
}

/// Draws n samples: component picked with probability proportional to its
/// weight, then mean + L*z with L the Cholesky factor. Deterministic
/// given the seed.
inline Eigen::MatrixXd sample(const GmmModel& model, Eigen::Index n, std::uint64_t seed) {
  if (model.components.empty()) throw std::invalid_argument("empty mixture");
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  const auto factors = detail::factorize_all(model);
  std::vector<double> weights;
  weights.reserve(model.components.size());
  for (const auto& comp : model.components) weights.push_back(comp.weight);

  Rng rng(seed);
  const auto d = model.dim();
  Eigen::MatrixXd out(n, d);
  Eigen::VectorXd z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t k = rng.discrete(weights);
    for (Eigen::Index j = 0; j < d; ++j) z(j) = rng.normal();
    out.row(i) =
        (model.components[k].mean + factors[k].chol_lower * z).transpose();
  }
  return out;
}

// --- DMRG container ---------------------------------------------------------

inline void save_gmm(const GmmModel& model, std::ostream& out) {
  io::write_magic(out, "DMRG");
  io::write_pod<std::uint32_t>(out, 1);
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.dim()));
  io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.components.size()));
  for (const auto& comp : model.components) {
    io::write_pod<double>(out, comp.weight);
    for (Eigen::Index j = 0; j < comp.mean.size(); ++j) io::write_pod<double>(out, comp.mean(j));
    for (Eigen::Index r = 0; r < comp.covariance.rows(); ++r) {
      for (Eigen::Index c = 0; c < comp.covariance.cols(); ++c) {
        io::write_pod<double>(out, comp.covariance(r, c));
      }
    }
  }
}

inline GmmModel load_gmm(std::istream& in) {
  io::expect_magic(in, "DMRG");
  const auto version = io::read_pod<std::uint32_t>(in, "version");
  if (version != 1) throw ParseError("unsupported DMRG version " + std::to_string(version));
  const auto d = static_cast<Eigen::Index>(io::read_pod<std::uint32_t>(in, "dim"));
  const auto K = io::read_pod<std::uint32_t>(in, "component count");
  if (K == 0) throw ParseError("DMRG with zero components");
  GmmModel model;
  model.components.resize(K);
  for (auto& comp : model.components) {
    comp.weight = io::read_pod<double>(in, "weight");
    comp.mean.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) comp.mean(j) = io::read_pod<double>(in, "mean");
    comp.covariance.resize(d, d);
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) {
        comp.covariance(r, c) = io::read_pod<double>(in, "covariance");
      }
    }
  }
  return model;
}

inline void save_gmm_file(const GmmModel& model, const std::string& path) {
  auto out = io::open_output(path);
  save_gmm(model, out);
}

inline GmmModel load_gmm_file(const std::string& path) {
  auto in = io::open_input(path);
  return load_gmm(in);
}

}  // namespace dmr
