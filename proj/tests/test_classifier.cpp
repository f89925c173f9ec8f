#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "dmr/baselines.hpp"
#include "dmr/classifier.hpp"
#include "dmr/metrics.hpp"
#include "test_util.hpp"

using dmr::Batch;
using dmr::LinearClassifier;
using dmr::MemoryBank;
using dmr::Rng;
using dmr::TrainConfig;

namespace {

LinearClassifier random_classifier(int d, const std::vector<int>& classes, std::uint64_t seed) {
  Rng rng(seed);
  LinearClassifier clf = LinearClassifier::make(d);
  clf.expand(classes);
  clf.weights = testutil::random_matrix(d, static_cast<Eigen::Index>(classes.size()), rng);
  clf.bias = testutil::random_vector(static_cast<Eigen::Index>(classes.size()), rng);
  return clf;
}

Batch gaussian_batch(const std::vector<std::pair<Eigen::VectorXd, int>>& specs, int per_class,
                     double std_dev, std::uint64_t seed) {
  Rng rng(seed);
  Batch batch;
  const auto d = specs.front().first.size();
  batch.features.resize(static_cast<Eigen::Index>(specs.size()) * per_class, d);
  Eigen::Index row = 0;
  for (const auto& [center, label] : specs) {
    for (int i = 0; i < per_class; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) {
        batch.features(row, j) = center(j) + std_dev * rng.normal();
      }
      batch.labels.push_back(label);
      ++row;
    }
  }
  return batch;
}

// Scalar-loop softmax cross-entropy, independent of the library path.
double naive_mean_ce(const LinearClassifier& clf, const Batch& batch) {
  if (batch.empty()) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    std::vector<double> logits(static_cast<std::size_t>(clf.num_classes()), 0.0);
    for (int c = 0; c < clf.num_classes(); ++c) {
      double z = clf.bias(c);
      for (Eigen::Index j = 0; j < clf.dim(); ++j) z += clf.weights(j, c) * batch.features(i, j);
      logits[static_cast<std::size_t>(c)] = z;
    }
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z);
    const int col = clf.column_of(batch.labels[static_cast<std::size_t>(i)]);
    total += -std::log(std::exp(logits[static_cast<std::size_t>(col)]) / denom);
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("mixup_enhance blends convexly") {
  const Eigen::Vector2d e(0.0, 0.0);
  const Eigen::Vector2d p(2.0, 4.0);
  CHECK(testutil::bitwise_equal(dmr::mixup_enhance(e, p, 1.0), e));
  CHECK(testutil::bitwise_equal(dmr::mixup_enhance(e, p, 0.0), p));
  const Eigen::VectorXd mid = dmr::mixup_enhance(e, p, 0.5);
  CHECK(mid(0) == 1.0);
  CHECK(mid(1) == 2.0);
  CHECK_THROWS_AS(dmr::mixup_enhance(e, p, 1.2), std::invalid_argument);
  CHECK_THROWS_AS(dmr::mixup_enhance(e, p, -0.1), std::invalid_argument);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd a = testutil::random_vector(4, rng);
    const Eigen::VectorXd b = testutil::random_vector(4, rng);
    const double lambda = rng.uniform();
    const Eigen::VectorXd m = dmr::mixup_enhance(a, b, lambda);
    for (int j = 0; j < 4; ++j) {
      CHECK(m(j) >= std::min(a(j), b(j)) - 1e-12);
      CHECK(m(j) <= std::max(a(j), b(j)) + 1e-12);
    }
  }
}

TEST_CASE("composite_loss closed form under uniform logits") {
  LinearClassifier clf = LinearClassifier::make(3);
  clf.expand({0, 1, 2, 3});  // zero weights: uniform softmax

  Batch one;
  one.features = Eigen::MatrixXd::Random(1, 3);
  one.labels = {0};
  Batch pseudo;
  pseudo.features = Eigen::MatrixXd::Random(1, 3);
  pseudo.labels = {1};
  Batch mixed;
  mixed.features = Eigen::MatrixXd::Random(1, 3);
  mixed.labels = {2};

  const double ln_c = std::log(4.0);
  const double xi = 0.3;
  CHECK(dmr::composite_loss(one, pseudo, mixed, clf, xi) ==
        Catch::Approx(xi * 2.0 * ln_c + (1.0 - xi) * ln_c).epsilon(0).margin(1e-12));
}

TEST_CASE("xi = 1 makes the loss independent of the mixed batch") {
  const LinearClassifier clf = random_classifier(3, {0, 1, 2}, 11);
  Rng rng(13);
  Batch fresh;
  fresh.features = testutil::random_matrix(4, 3, rng);
  fresh.labels = {0, 1, 2, 0};
  Batch pseudo;
  pseudo.features = testutil::random_matrix(3, 3, rng);
  pseudo.labels = {1, 1, 2};
  Batch mixed_a;
  mixed_a.features = testutil::random_matrix(4, 3, rng);
  mixed_a.labels = {0, 0, 1, 2};
  Batch mixed_b = mixed_a;
  mixed_b.features = 100.0 * testutil::random_matrix(4, 3, rng);

  CHECK(dmr::composite_loss(fresh, pseudo, mixed_a, clf, 1.0) ==
        dmr::composite_loss(fresh, pseudo, mixed_b, clf, 1.0));
}

TEST_CASE("composite_loss matches the scalar-loop reference") {
  const LinearClassifier clf = random_classifier(4, {0, 1, 2}, 17);
  Rng rng(19);
  Batch fresh;
  fresh.features = testutil::random_matrix(6, 4, rng);
  fresh.labels = {0, 1, 2, 0, 1, 2};
  Batch pseudo;
  pseudo.features = testutil::random_matrix(5, 4, rng);
  pseudo.labels = {1, 2, 1, 2, 1};
  Batch mixed;
  mixed.features = testutil::random_matrix(6, 4, rng);
  mixed.labels = fresh.labels;

  const double xi = 0.55;
  const double expected = xi * (naive_mean_ce(clf, fresh) + naive_mean_ce(clf, pseudo)) +
                          (1.0 - xi) * naive_mean_ce(clf, mixed);
  CHECK(dmr::composite_loss(fresh, pseudo, mixed, clf, xi) ==
        Catch::Approx(expected).epsilon(1e-8));

  Batch bad = fresh;
  bad.labels[0] = 42;
  CHECK_THROWS_AS(dmr::composite_loss(bad, pseudo, mixed, clf, xi), std::invalid_argument);
}

TEST_CASE("composite_loss gradients match central finite differences") {
  Rng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    LinearClassifier clf = random_classifier(3, {0, 1, 2, 3}, 100 + trial);
    Batch fresh;
    fresh.features = testutil::random_matrix(3, 3, rng);
    fresh.labels = {0, 1, 3};
    Batch pseudo;
    pseudo.features = testutil::random_matrix(2, 3, rng);
    pseudo.labels = {2, 2};
    Batch mixed;
    mixed.features = testutil::random_matrix(3, 3, rng);
    mixed.labels = fresh.labels;
    const double xi = 0.4;

    const auto lg = dmr::composite_loss_grad(fresh, pseudo, mixed, clf, xi);
    const double h = 1e-6;
    for (Eigen::Index r = 0; r < clf.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < clf.weights.cols(); ++c) {
        LinearClassifier plus = clf, minus = clf;
        plus.weights(r, c) += h;
        minus.weights(r, c) -= h;
        const double numeric = (dmr::composite_loss(fresh, pseudo, mixed, plus, xi) -
                                dmr::composite_loss(fresh, pseudo, mixed, minus, xi)) /
                               (2.0 * h);
        CHECK(lg.grad_weights(r, c) ==
              Catch::Approx(numeric).epsilon(1e-5).margin(1e-8));
      }
    }
    for (Eigen::Index c = 0; c < clf.bias.size(); ++c) {
      LinearClassifier plus = clf, minus = clf;
      plus.bias(c) += h;
      minus.bias(c) -= h;
      const double numeric = (dmr::composite_loss(fresh, pseudo, mixed, plus, xi) -
                              dmr::composite_loss(fresh, pseudo, mixed, minus, xi)) /
                             (2.0 * h);
      CHECK(lg.grad_bias(c) == Catch::Approx(numeric).epsilon(1e-5).margin(1e-8));
    }
  }
}

TEST_CASE("predict follows one-hot columns and breaks ties toward lower ids") {
  LinearClassifier clf = LinearClassifier::make(3);
  clf.expand({0, 1, 2});
  clf.weights = Eigen::MatrixXd::Identity(3, 3);
  Eigen::MatrixXd basis = Eigen::MatrixXd::Identity(3, 3);
  CHECK(dmr::predict(clf, basis) == std::vector<int>{0, 1, 2});

  LinearClassifier zeros = LinearClassifier::make(2);
  zeros.expand({0, 1, 2});
  Eigen::MatrixXd any = Eigen::MatrixXd::Random(4, 2);
  CHECK(dmr::predict(zeros, any) == std::vector<int>(4, 0));  // class_order[0]

  LinearClassifier shuffled = LinearClassifier::make(2);
  shuffled.expand({5, 2, 9});
  CHECK(dmr::predict(shuffled, any) == std::vector<int>(4, 2));  // lowest class id
}

TEST_CASE("predict matches a per-class dot-product loop") {
  const LinearClassifier clf = random_classifier(5, {3, 1, 4}, 31);
  Rng rng(37);
  const Eigen::MatrixXd features = testutil::random_matrix(100, 5, rng);
  const auto preds = dmr::predict(clf, features);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    int best = -1;
    double best_logit = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < clf.num_classes(); ++c) {
      double z = clf.bias(c);
      for (Eigen::Index j = 0; j < 5; ++j) z += clf.weights(j, c) * features(i, j);
      if (z > best_logit) {
        best_logit = z;
        best = clf.class_order[static_cast<std::size_t>(c)];
      }
    }
    CHECK(preds[static_cast<std::size_t>(i)] == best);
  }
}

TEST_CASE("argmax is invariant to a shared positive rescaling") {
  const LinearClassifier clf = random_classifier(4, {0, 1, 2}, 41);
  LinearClassifier scaled = clf;
  scaled.weights *= 3.7;
  scaled.bias *= 3.7;
  Rng rng(43);
  const Eigen::MatrixXd features = testutil::random_matrix(50, 4, rng);
  CHECK(dmr::predict(clf, features) == dmr::predict(scaled, features));
}

TEST_CASE("expansion preserves old-class logits bitwise") {
  LinearClassifier clf = random_classifier(3, {0, 1}, 47);
  Rng rng(53);
  const Eigen::VectorXd x = testutil::random_vector(3, rng);
  const Eigen::VectorXd before = clf.logits(x);
  clf.expand({2, 3});
  const Eigen::VectorXd after = clf.logits(x);
  CHECK(after(0) == before(0));
  CHECK(after(1) == before(1));
  CHECK(after(2) == 0.0);
  CHECK_THROWS_AS(clf.expand({1}), std::invalid_argument);
}

TEST_CASE("train_stage fits a separable base task to 100 percent") {
  Eigen::VectorXd c0 = Eigen::VectorXd::Zero(4);
  c0(0) = 3.0;
  const Batch task = gaussian_batch({{c0, 0}, {-c0, 1}}, 50, 0.5, 61);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  cfg.seed = 7;
  MemoryBank empty;
  const LinearClassifier clf = dmr::train_stage(LinearClassifier::make(4), task, empty, cfg);
  CHECK(dmr::stage_accuracy(dmr::predict(clf, task.features), task.labels) == 100.0);
}

TEST_CASE("train_stage is deterministic given its seed") {
  Eigen::VectorXd c0 = Eigen::VectorXd::Zero(3);
  c0(0) = 2.0;
  const Batch task = gaussian_batch({{c0, 0}, {-c0, 1}}, 30, 1.0, 67);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 11;
  MemoryBank bank;
  bank.add(dmr::fit_prior(5, Eigen::MatrixXd::Random(20, 3)));

  const LinearClassifier base = random_classifier(3, {5}, 71);
  const LinearClassifier a = dmr::train_stage(base, task, bank, cfg);
  const LinearClassifier b = dmr::train_stage(base, task, bank, cfg);
  CHECK(testutil::bitwise_equal(a.weights, b.weights));
  CHECK(testutil::bitwise_equal(a.bias, b.bias));

  TrainConfig other = cfg;
  other.seed = 12;
  const LinearClassifier c = dmr::train_stage(base, task, bank, other);
  CHECK(!testutil::bitwise_equal(a.weights, c.weights));
}

TEST_CASE("xi = 1 with no pseudo draws matches plain fine-tuning bitwise") {
  Eigen::VectorXd c0 = Eigen::VectorXd::Zero(3);
  c0(0) = 2.5;
  const Batch task = gaussian_batch({{c0, 2}, {-c0, 3}}, 40, 0.8, 73);
  const LinearClassifier start = random_classifier(3, {0, 1}, 79);

  MemoryBank bank;
  bank.add(dmr::fit_prior(0, Eigen::MatrixXd::Random(30, 3)));
  bank.add(dmr::fit_prior(1, Eigen::MatrixXd::Random(30, 3)));

  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.xi = 1.0;
  cfg.pseudo_per_class = 0;
  cfg.seed = 17;

  const LinearClassifier with_bank = dmr::train_stage(start, task, bank, cfg);
  const LinearClassifier finetuned = dmr::finetune_stage(start, task, cfg);
  CHECK(testutil::bitwise_equal(with_bank.weights, finetuned.weights));
  CHECK(testutil::bitwise_equal(with_bank.bias, finetuned.bias));
}

TEST_CASE("fine-tuning forgets the old task") {
  Eigen::Vector2d a(3.0, 0.0), b(-3.0, 0.0), c(4.0, 1.0), d(-4.0, 1.0);
  const Batch task0 = gaussian_batch({{a, 0}, {b, 1}}, 60, 0.7, 83);
  const Batch task1 = gaussian_batch({{c, 2}, {d, 3}}, 60, 0.7, 89);
  const Batch old_test = gaussian_batch({{a, 0}, {b, 1}}, 60, 0.7, 97);

  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 16;
  cfg.seed = 3;

  const LinearClassifier after_base = dmr::finetune_stage(LinearClassifier::make(2), task0, cfg);
  const double base_acc = dmr::stage_accuracy(dmr::predict(after_base, old_test.features),
                                              old_test.labels);
  const LinearClassifier after_inc = dmr::finetune_stage(after_base, task1, cfg);
  const double old_acc = dmr::stage_accuracy(dmr::predict(after_inc, old_test.features),
                                             old_test.labels);
  CHECK(base_acc > 95.0);
  CHECK(old_acc < 0.3 * base_acc);
}

TEST_CASE("DMRC checkpoints round-trip bitwise") {
  const LinearClassifier clf = random_classifier(4, {7, 3, 11}, 101);
  std::stringstream buffer;
  dmr::save_classifier(clf, buffer);
  const LinearClassifier loaded = dmr::load_classifier(buffer);
  CHECK(loaded.class_order == clf.class_order);
  CHECK(testutil::bitwise_equal(loaded.weights, clf.weights));
  CHECK(testutil::bitwise_equal(loaded.bias, clf.bias));
}
