#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <set>

#include "dmr/feature_store.hpp"
#include "test_util.hpp"

using dmr::Dataset;
using dmr::FeatureFormat;
using dmr::FeatureRecord;
using dmr::Rng;
using dmr::SynthSpec;

namespace {

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

Dataset random_dataset(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.dim = d;
  for (int i = 0; i < n; ++i) {
    FeatureRecord rec;
    rec.vector = testutil::random_vector(d, rng);
    // Exercise a wide exponent range so the text format has to round-trip.
    rec.vector(0) *= std::pow(10.0, static_cast<double>(rng.uniform_int(20)) - 10.0);
    rec.class_id = static_cast<int>(rng.uniform_int(5));
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

bool datasets_identical(const Dataset& a, const Dataset& b) {
  if (a.dim != b.dim || a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    if (a.records[i].class_id != b.records[i].class_id) return false;
    if (!testutil::bitwise_equal(a.records[i].vector, b.records[i].vector)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("csv loading reads records in file order") {
  testutil::TempDir tmp;
  write_text(tmp.file("small.csv"), "1.5,2.0,0\n0.5,1.0,0\n3.0,4.0,1\n");
  const Dataset ds = dmr::load_embeddings(tmp.file("small.csv"), FeatureFormat::kCsv);
  REQUIRE(ds.records.size() == 3);
  CHECK(ds.dim == 2);
  const auto counts = ds.class_counts();
  CHECK(counts.at(0) == 2);
  CHECK(counts.at(1) == 1);
  CHECK(ds.records[0].vector(0) == 1.5);
  CHECK(ds.records[2].class_id == 1);
}

TEST_CASE("csv loading accepts an optional header and rejects bad rows") {
  testutil::TempDir tmp;
  write_text(tmp.file("header.csv"), "f1,f2,label\n1.0,2.0,0\n");
  CHECK(dmr::load_embeddings(tmp.file("header.csv"), FeatureFormat::kCsv).records.size() == 1);

  write_text(tmp.file("bad.csv"), "1.0,2.0,0\n1.0,oops,1\n");
  CHECK_THROWS_WITH(dmr::load_embeddings(tmp.file("bad.csv"), FeatureFormat::kCsv),
                    Catch::Matchers::ContainsSubstring("row 2"));

  write_text(tmp.file("dim.csv"), "1.0,2.0,0\n1.0,2.0,3.0,1\n");
  CHECK_THROWS_WITH(dmr::load_embeddings(tmp.file("dim.csv"), FeatureFormat::kCsv),
                    Catch::Matchers::ContainsSubstring("dimension"));

  write_text(tmp.file("empty.csv"), "");
  CHECK_THROWS_WITH(dmr::load_embeddings(tmp.file("empty.csv"), FeatureFormat::kCsv),
                    Catch::Matchers::ContainsSubstring("no records"));
}

TEST_CASE("save then load round-trips bit-exactly in both formats") {
  const Dataset ds = random_dataset(100, 4, 71);
  testutil::TempDir tmp;

  dmr::save_embeddings(ds, tmp.file("r.csv"), FeatureFormat::kCsv);
  CHECK(datasets_identical(ds, dmr::load_embeddings(tmp.file("r.csv"), FeatureFormat::kCsv)));

  dmr::save_embeddings(ds, tmp.file("r.bin"), FeatureFormat::kPackedBinary);
  CHECK(datasets_identical(ds,
                           dmr::load_embeddings(tmp.file("r.bin"), FeatureFormat::kPackedBinary)));
}

TEST_CASE("packed binary rejects corruption") {
  const Dataset ds = random_dataset(10, 3, 73);
  testutil::TempDir tmp;
  dmr::save_embeddings(ds, tmp.file("r.bin"), FeatureFormat::kPackedBinary);
  // Truncate mid-record.
  std::ifstream in(tmp.file("r.bin"), std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  write_text(tmp.file("cut.bin"), bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(dmr::load_embeddings(tmp.file("cut.bin"), FeatureFormat::kPackedBinary),
                  dmr::ParseError);
  write_text(tmp.file("magic.bin"), "XXXX" + bytes.substr(4));
  CHECK_THROWS_WITH(dmr::load_embeddings(tmp.file("magic.bin"), FeatureFormat::kPackedBinary),
                    Catch::Matchers::ContainsSubstring("magic"));
}

TEST_CASE("synth with one spherical component matches its moments") {
  SynthSpec spec;
  spec.num_classes = 2;
  spec.dim = 3;
  spec.components_per_class = 1;
  spec.separation = 6.0;
  spec.anisotropy = 1.0;
  spec.samples_per_class = 2000;
  spec.seed = 5;
  const auto result = dmr::synth_generate(spec);
  const double bound = 3.0 / std::sqrt(static_cast<double>(spec.samples_per_class));

  for (int cls = 0; cls < 2; ++cls) {
    const Eigen::MatrixXd x = result.dataset.features_of_class(cls);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows());
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        if (r == c) {
          CHECK(std::abs(cov(r, c) - 1.0) < 2.0 * bound);
        } else {
          CHECK(std::abs(cov(r, c)) < bound);
        }
      }
    }
  }
}

TEST_CASE("synth is a pure function of its spec") {
  SynthSpec spec;
  spec.num_classes = 3;
  spec.dim = 4;
  spec.components_per_class = 2;
  spec.separation = 8.0;
  spec.anisotropy = 4.0;
  spec.samples_per_class = 50;
  spec.seed = 12;
  const auto a = dmr::synth_generate(spec);
  const auto b = dmr::synth_generate(spec);
  CHECK(datasets_identical(a.dataset, b.dataset));

  spec.seed = 13;
  const auto c = dmr::synth_generate(spec);
  CHECK(!datasets_identical(a.dataset, c.dataset));
}

TEST_CASE("synth covariance eigenvalue ratio equals the requested anisotropy") {
  SynthSpec spec;
  spec.num_classes = 1;
  spec.dim = 6;
  spec.components_per_class = 1;
  spec.separation = 5.0;
  spec.anisotropy = 4.0;
  spec.samples_per_class = 10;
  spec.seed = 3;
  const auto result = dmr::synth_generate(spec);
  const Eigen::MatrixXd cov = result.truth.at(0).components[0].covariance;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const auto eigs = solver.eigenvalues();
  CHECK(eigs.maxCoeff() / eigs.minCoeff() == Catch::Approx(4.0).epsilon(1e-9));
  CHECK(eigs.mean() == Catch::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("well-separated classes are nearest-centroid separable") {
  SynthSpec spec;
  spec.num_classes = 2;
  spec.dim = 4;
  spec.components_per_class = 1;
  spec.separation = 10.0;
  spec.anisotropy = 1.0;
  spec.samples_per_class = 500;
  spec.seed = 21;
  const auto result = dmr::synth_generate(spec);

  // Nearest-centroid reference classifier.
  std::map<int, Eigen::VectorXd> centroids;
  std::map<int, int> counts;
  for (const auto& rec : result.dataset.records) {
    if (!centroids.count(rec.class_id)) centroids[rec.class_id] = Eigen::VectorXd::Zero(spec.dim);
    centroids[rec.class_id] += rec.vector;
    ++counts[rec.class_id];
  }
  for (auto& [cls, centroid] : centroids) centroid /= counts[cls];

  int correct = 0;
  for (const auto& rec : result.dataset.records) {
    int best = -1;
    double best_sq = std::numeric_limits<double>::infinity();
    for (const auto& [cls, centroid] : centroids) {
      const double sq = (rec.vector - centroid).squaredNorm();
      if (sq < best_sq) {
        best_sq = sq;
        best = cls;
      }
    }
    correct += best == rec.class_id ? 1 : 0;
  }
  const double accuracy =
      static_cast<double>(correct) / static_cast<double>(result.dataset.records.size());
  CHECK(accuracy >= 0.99);
}

TEST_CASE("synth sample means converge to the oracle") {
  SynthSpec spec;
  spec.num_classes = 1;
  spec.dim = 3;
  spec.components_per_class = 1;
  spec.separation = 5.0;
  spec.anisotropy = 2.0;
  spec.samples_per_class = 10000;
  spec.seed = 8;
  const auto result = dmr::synth_generate(spec);
  const Eigen::MatrixXd x = result.dataset.features_of_class(0);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const auto& truth = result.truth.at(0).components[0];
  for (int j = 0; j < 3; ++j) {
    const double std_j = std::sqrt(truth.covariance(j, j));
    CHECK(std::abs(mean(j) - truth.mean(j)) <
          4.0 * std_j / std::sqrt(static_cast<double>(spec.samples_per_class)));
  }
}

TEST_CASE("task streams follow the base + k * increment layout") {
  auto one_per_class = [](int num_classes) {
    Dataset ds;
    ds.dim = 1;
    for (int c = 0; c < num_classes; ++c) {
      FeatureRecord rec;
      rec.vector = Eigen::VectorXd::Constant(1, static_cast<double>(c));
      rec.class_id = c;
      ds.records.push_back(std::move(rec));
    }
    return ds;
  };

  CHECK(dmr::split_task_stream(one_per_class(100), 50, 10, 1).tasks.size() == 6);
  CHECK(dmr::split_task_stream(one_per_class(32), 8, 8, 1).tasks.size() == 4);

  const auto stream = dmr::split_task_stream(one_per_class(10), 4, 3, 2);
  REQUIRE(stream.tasks.size() == 3);
  CHECK(stream.tasks[0].class_ids.size() == 4);
  CHECK(stream.tasks[1].class_ids.size() == 3);
  CHECK(stream.tasks[2].class_ids.size() == 3);

  // Pairwise-disjoint class sets covering every class.
  std::set<int> all;
  for (const auto& task : stream.tasks) {
    for (int c : task.class_ids) {
      CHECK(!all.count(c));
      all.insert(c);
    }
    for (const auto& rec : task.records) CHECK(rec.task_id == task.task_id);
  }
  CHECK(all.size() == 10);

  CHECK_THROWS_AS(dmr::split_task_stream(one_per_class(10), 4, 4, 2), dmr::ConfigError);
}

TEST_CASE("task stream shuffling is seeded") {
  SynthSpec spec;
  spec.num_classes = 12;
  spec.dim = 2;
  spec.components_per_class = 1;
  spec.separation = 5.0;
  spec.anisotropy = 1.0;
  spec.samples_per_class = 5;
  spec.seed = 4;
  const auto data = dmr::synth_generate(spec).dataset;
  const auto a = dmr::split_task_stream(data, 4, 4, 11);
  const auto b = dmr::split_task_stream(data, 4, 4, 11);
  const auto c = dmr::split_task_stream(data, 4, 4, 12);
  CHECK(a.tasks[0].class_ids == b.tasks[0].class_ids);
  bool any_difference = false;
  for (std::size_t t = 0; t < a.tasks.size(); ++t) {
    if (a.tasks[t].class_ids != c.tasks[t].class_ids) any_difference = true;
  }
  CHECK(any_difference);
}
