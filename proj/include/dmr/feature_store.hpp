#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dmr/errors.hpp"
#include "dmr/gmm.hpp"
#include "dmr/random.hpp"
#include "dmr/serialize.hpp"

namespace dmr {

/// One embedding vector with its class label. task_id is -1 until a task
/// stream assigns it.
struct FeatureRecord {
  Eigen::VectorXd vector;
  int class_id = 0;
  int task_id = -1;
};

struct Dataset {
  std::vector<FeatureRecord> records;
  int dim = 0;

  std::map<int, Eigen::Index> class_counts() const {
    std::map<int, Eigen::Index> counts;
    for (const auto& rec : records) ++counts[rec.class_id];
    return counts;
  }

  std::vector<int> class_ids() const {
    std::set<int> ids;
    for (const auto& rec : records) ids.insert(rec.class_id);
    return {ids.begin(), ids.end()};
  }

  Eigen::MatrixXd features_of_class(int class_id) const {
    Eigen::Index n = 0;
    for (const auto& rec : records) n += rec.class_id == class_id ? 1 : 0;
    Eigen::MatrixXd out(n, dim);
    Eigen::Index row = 0;
    for (const auto& rec : records) {
      if (rec.class_id == class_id) out.row(row++) = rec.vector.transpose();
    }
    return out;
  }
};

enum class FeatureFormat { kCsv, kPackedBinary };

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) {
    s.remove_suffix(1);
  }
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc{} && res.ptr == end;
}

inline bool parse_int(std::string_view s, int& out) {
  s = trim(s);
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc{} && res.ptr == end;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open for reading: " + path);
  Dataset dataset;
  std::string line;
  long line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    const auto content = trim(std::string_view(line));
    if (content.empty()) continue;
    const auto fields = split_csv(content);
    if (first_content_line) {
      // Optional header: skip the first line when it does not start with a number.
      double probe;
      first_content_line = false;
      if (!parse_double(fields.front(), probe)) continue;
    }
    if (fields.size() < 2) {
      throw ParseError("row " + std::to_string(line_no) + ": need d features plus a label");
    }
    const int d = static_cast<int>(fields.size()) - 1;
    if (dataset.dim == 0) {
      dataset.dim = d;
    } else if (d != dataset.dim) {
      throw ParseError("row " + std::to_string(line_no) + ": dimension " + std::to_string(d) +
                       " does not match dataset dimension " + std::to_string(dataset.dim));
    }
    FeatureRecord rec;
    rec.vector.resize(d);
    for (int j = 0; j < d; ++j) {
      if (!parse_double(fields[static_cast<std::size_t>(j)], rec.vector(j))) {
        throw ParseError("row " + std::to_string(line_no) + ": field " + std::to_string(j + 1) +
                         " is not a number");
      }
    }
    if (!parse_int(fields.back(), rec.class_id) || rec.class_id < 0) {
      throw ParseError("row " + std::to_string(line_no) + ": label is not a non-negative integer");
    }
    dataset.records.push_back(std::move(rec));
  }
  if (dataset.records.empty()) throw ParseError("no records in " + path);
  return dataset;
}

inline Dataset load_binary(const std::string& path) {
  auto in = io::open_input(path);
  io::expect_magic(in, "DMRF");
  const auto version = io::read_pod<std::uint32_t>(in, "version");
  if (version != 1) throw ParseError("unsupported DMRF version " + std::to_string(version));
  const auto d = io::read_pod<std::uint32_t>(in, "dim");
  const auto n = io::read_pod<std::uint64_t>(in, "record count");
  if (n == 0) throw ParseError("no records in " + path);
  Dataset dataset;
  dataset.dim = static_cast<int>(d);
  dataset.records.resize(n);
  for (auto& rec : dataset.records) {
    rec.vector.resize(static_cast<Eigen::Index>(d));
    for (std::uint32_t j = 0; j < d; ++j) rec.vector(j) = io::read_pod<double>(in, "feature");
    rec.class_id = static_cast<int>(io::read_pod<std::uint32_t>(in, "label"));
  }
  return dataset;
}

}  // namespace detail

inline Dataset load_embeddings(const std::string& path, FeatureFormat format) {
  return format == FeatureFormat::kCsv ? detail::load_csv(path) : detail::load_binary(path);
}

inline void save_embeddings(const Dataset& dataset, const std::string& path,
                            FeatureFormat format) {
  if (format == FeatureFormat::kCsv) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for writing: " + path);
    char buf[64];
    for (const auto& rec : dataset.records) {
      for (Eigen::Index j = 0; j < rec.vector.size(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", rec.vector(j));
        out << buf << ',';
      }
      out << rec.class_id << '\n';
    }
  } else {
    auto out = io::open_output(path);
    io::write_magic(out, "DMRF");
    io::write_pod<std::uint32_t>(out, 1);
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.dim));
    io::write_pod<std::uint64_t>(out, dataset.records.size());
    for (const auto& rec : dataset.records) {
      for (Eigen::Index j = 0; j < rec.vector.size(); ++j) {
        io::write_pod<double>(out, rec.vector(j));
      }
      io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(rec.class_id));
    }
  }
}

// --- Synthetic ground truth --------------------------------------------------

/// Recipe for a synthetic embedding space: per-class Gaussian mixtures with
/// a controlled inter-class center distance (in units of the mean component
/// std) and a controlled covariance eigenvalue spread.
struct SynthSpec {
  int num_classes = 0;
  int dim = 0;
  int components_per_class = 1;  // 1..3
  double separation = 8.0;
  double anisotropy = 1.0;  // largest/smallest covariance eigenvalue
  int samples_per_class = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 1) throw std::invalid_argument("synth: num_classes must be positive");
    if (dim < 1) throw std::invalid_argument("synth: dim must be positive");
    if (components_per_class < 1 || components_per_class > 3) {
      throw std::invalid_argument("synth: components_per_class must be in [1, 3]");
    }
    if (separation <= 0) throw std::invalid_argument("synth: separation must be positive");
    if (anisotropy < 1) throw std::invalid_argument("synth: anisotropy must be >= 1");
    if (samples_per_class < 1) {
      throw std::invalid_argument("synth: samples_per_class must be positive");
    }
  }
};

struct SynthResult {
  Dataset dataset;
  std::map<int, GmmModel> truth;  // the exact generating mixture per class
};

namespace detail {

inline Eigen::MatrixXd random_orthogonal(int d, Rng& rng) {
  Eigen::MatrixXd g(d, d);
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) g(r, c) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < d; ++c) {
    if (r(c, c) < 0) q.col(c) *= -1.0;
  }
  return q;
}

inline Eigen::VectorXd random_unit(int d, Rng& rng) {
  Eigen::VectorXd v(d);
  double norm = 0.0;
  do {
    for (int j = 0; j < d; ++j) v(j) = rng.normal();
    norm = v.norm();
  } while (norm < 1e-12);
  return v / norm;
}

/// Eigenvalues with an exact max/min ratio, log-uniform in between,
/// scaled to unit mean so the component's scalar std is 1.
inline Eigen::VectorXd spread_eigenvalues(int d, double anisotropy, Rng& rng) {
  Eigen::VectorXd lambda(d);
  if (d == 1 || anisotropy == 1.0) {
    lambda.setOnes();
    return lambda;
  }
  const double span = std::log(anisotropy);
  std::vector<double> exponents = {0.0, span};
  for (int j = 2; j < d; ++j) exponents.push_back(rng.uniform() * span);
  rng.shuffle(exponents);
  for (int j = 0; j < d; ++j) lambda(j) = std::exp(exponents[static_cast<std::size_t>(j)]);
  lambda /= lambda.mean();
  return lambda;
}

inline Eigen::MatrixXd class_centers(const SynthSpec& spec, Rng& rng) {
  const int m = spec.num_classes;
  const int d = spec.dim;
  Eigen::MatrixXd centers(m, d);
  const double scale = spec.separation / std::numbers::sqrt2;
  if (m <= d) {
    // Regular simplex on scaled basis vectors: exact pairwise distance.
    centers.setZero();
    for (int c = 0; c < m; ++c) centers(c, c) = scale;
    const Eigen::RowVectorXd centroid = centers.colwise().mean();
    centers.rowwise() -= centroid;
    const Eigen::MatrixXd q = random_orthogonal(d, rng);
    centers = centers * q.transpose();
  } else {
    // Random sphere placement: expected pairwise distance ~= separation.
    for (int c = 0; c < m; ++c) centers.row(c) = (scale * random_unit(d, rng)).transpose();
  }
  return centers;
}

}  // namespace detail

/// Deterministic function of its spec: builds the exact generating mixture
/// for every class, then draws the dataset from it. The returned truth
/// models are the oracle for fidelity measurements.
inline SynthResult synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x73796eULL));
  const int d = spec.dim;
  const int K = spec.components_per_class;
  const Eigen::MatrixXd centers = detail::class_centers(spec, rng);

  SynthResult result;
  result.dataset.dim = d;
  for (int c = 0; c < spec.num_classes; ++c) {
    GmmModel model;
    std::vector<Eigen::VectorXd> offsets;
    if (K == 1) {
      offsets.emplace_back(Eigen::VectorXd::Zero(d));
    } else if (K == 2) {
      const Eigen::VectorXd u = detail::random_unit(d, rng);
      offsets.push_back(0.5 * spec.separation * u);
      offsets.push_back(-0.5 * spec.separation * u);
    } else {
      for (int k = 0; k < K; ++k) {
        offsets.push_back(0.5 * spec.separation * detail::random_unit(d, rng));
      }
    }
    for (int k = 0; k < K; ++k) {
      GaussianComponent comp;
      comp.mean = centers.row(c).transpose() + offsets[static_cast<std::size_t>(k)];
      const Eigen::VectorXd lambda = detail::spread_eigenvalues(d, spec.anisotropy, rng);
      const Eigen::MatrixXd rot = detail::random_orthogonal(d, rng);
      comp.covariance = rot * lambda.asDiagonal() * rot.transpose();
      comp.covariance = 0.5 * (comp.covariance + comp.covariance.transpose()).eval();
      comp.weight = 1.0 / static_cast<double>(K);
      model.components.push_back(std::move(comp));
    }

    const Eigen::MatrixXd draws =
        sample(model, spec.samples_per_class, mix_seed(spec.seed, 0x647261ULL, static_cast<std::uint64_t>(c)));
    for (Eigen::Index i = 0; i < draws.rows(); ++i) {
      FeatureRecord rec;
      rec.vector = draws.row(i).transpose();
      rec.class_id = c;
      result.dataset.records.push_back(std::move(rec));
    }
    result.truth.emplace(c, std::move(model));
  }
  return result;
}

// --- Task stream --------------------------------------------------------------

struct Task {
  int task_id = 0;
  std::vector<int> class_ids;  // ascending
  std::vector<FeatureRecord> records;
};

struct TaskStream {
  std::vector<Task> tasks;
  int base_size = 0;
  int increment_size = 0;
  int dim = 0;

  std::map<int, int> task_of_class() const {
    std::map<int, int> mapping;
    for (const auto& task : tasks) {
      for (int c : task.class_ids) mapping[c] = task.task_id;
    }
    return mapping;
  }
};

/// Seeded class shuffle, then contiguous assignment: the first base_size
/// classes form task 0, every following increment_size classes one more
/// task. Class sets are disjoint by construction.
inline TaskStream split_task_stream(const Dataset& dataset, int base_size, int increment_size,
                                    std::uint64_t seed) {
  std::vector<int> classes = dataset.class_ids();
  const int m = static_cast<int>(classes.size());
  if (base_size < 1 || base_size > m) {
    throw ConfigError("stream.base", "base size must be in [1, num_classes]");
  }
  const int remainder = m - base_size;
  if (remainder > 0 && (increment_size < 1 || remainder % increment_size != 0)) {
    throw ConfigError("stream.increment",
                      "class count " + std::to_string(m) + " is not base + k*increment");
  }

  Rng rng(mix_seed(seed, 0x73706cULL));
  rng.shuffle(classes);

  TaskStream stream;
  stream.base_size = base_size;
  stream.increment_size = increment_size;
  stream.dim = dataset.dim;

  std::map<int, int> task_of;
  int next = 0;
  int task_id = 0;
  while (next < m) {
    Task task;
    task.task_id = task_id;
    const int take = task_id == 0 ? base_size : increment_size;
    for (int j = 0; j < take; ++j) {
      task.class_ids.push_back(classes[static_cast<std::size_t>(next++)]);
    }
    std::sort(task.class_ids.begin(), task.class_ids.end());
    for (int c : task.class_ids) task_of[c] = task_id;
    stream.tasks.push_back(std::move(task));
    ++task_id;
  }
  for (const auto& rec : dataset.records) {
    FeatureRecord copy = rec;
    copy.task_id = task_of.at(rec.class_id);
    stream.tasks[static_cast<std::size_t>(copy.task_id)].records.push_back(std::move(copy));
  }
  return stream;
}

}  // namespace dmr
