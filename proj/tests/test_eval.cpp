#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <quadnet/eval.hpp>
#include <quadnet/rng.hpp>

using namespace quadnet;

namespace {

DatasetBundle make_bundle(int classes, int seen, int samples, double test_frac, uint64_t seed,
                          double severity = 0.4) {
  GenerateConfig cfg;
  cfg.num_classes = classes;
  cfg.num_seen = seen;
  cfg.samples_per_class = samples;
  cfg.val_fraction = 0.1;
  cfg.test_fraction = test_frac;
  cfg.severity = severity;
  cfg.seed = seed;
  return generate_dataset(cfg);
}

EmbedderParams<float> zero_embedder(int dim) {
  EmbedderParams<float> p;
  p.embed_dim = dim;
  const auto shapes = embedder_shapes(dim);
  std::vector<Tensor<float>*> slots = {&p.conv1_w, &p.conv1_b, &p.conv2_w, &p.conv2_b, &p.conv3_w,
                                       &p.conv3_b, &p.fc1_w,   &p.fc1_b,   &p.fc2_w,   &p.fc2_b};
  for (size_t i = 0; i < slots.size(); ++i) *slots[i] = Tensor<float>::zeros(shapes[i].second);
  return p;
}

uint64_t params_fingerprint(const EmbedderParams<float>& p) {
  uint64_t h = 1469598103934665603ull;
  p.for_each([&h](const char*, const Tensor<float>& t) {
    for (int i = 0; i < t.size(); ++i) {
      uint32_t bits;
      std::memcpy(&bits, &t.values()[i], 4);
      h = (h ^ bits) * 1099511628211ull;
    }
  });
  return h;
}

}  // namespace

TEST_CASE("nearest anchor picks the argmin and breaks ties low") {
  Eigen::MatrixXf anchors(2, 3);
  anchors << 0, 1, 5, 0, 0, 0;
  const std::vector<int> classes = {2, 5, 9};
  Eigen::VectorXf q(2);
  q << 0.9, 0;
  CHECK(nearest_anchor(q, anchors, classes) == 5);
  q << 0.5, 0;  // exact tie between anchors 0 and 1
  CHECK(nearest_anchor(q, anchors, classes) == 2);
  CHECK_THROWS_AS(nearest_anchor(Eigen::VectorXf::Zero(3), anchors, classes),
                  std::invalid_argument);
}

TEST_CASE("predictions survive a common orthogonal transform") {
  Rng rng(5);
  const int d = 12, c = 7, nq = 40;
  Eigen::MatrixXf anchors(d, c);
  for (int i = 0; i < d * c; ++i) anchors(i % d, i / d) = static_cast<float>(rng.normal());
  std::vector<int> classes;
  for (int i = 0; i < c; ++i) classes.push_back(i);

  Eigen::MatrixXd raw(d, d);
  for (int i = 0; i < d * d; ++i) raw(i / d, i % d) = rng.normal();
  const Eigen::MatrixXd q_full = Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ();
  const Eigen::MatrixXf q_mat = q_full.cast<float>();

  for (int t = 0; t < nq; ++t) {
    Eigen::VectorXf query(d);
    for (int i = 0; i < d; ++i) query[i] = static_cast<float>(rng.normal());
    const int before = nearest_anchor(query, anchors, classes);
    const Eigen::MatrixXf rotated_anchors = q_mat * anchors;
    const int after = nearest_anchor((q_mat * query).eval(), rotated_anchors, classes);
    CHECK(before == after);
  }
}

TEST_CASE("convergence rule on window means") {
  CHECK(convergence_check({1.0, 0.96}));
  CHECK_FALSE(convergence_check({1.0, 0.90}));
  CHECK(convergence_check({1.0, 1.04}));  // absolute-value reading
  CHECK_THROWS_AS(convergence_check({1.0}), std::invalid_argument);

  SUBCASE("non-positive previous mean flags and fails") {
    bool flagged = false;
    CHECK_FALSE(convergence_check({0.0, 0.5}, &flagged));
    CHECK(flagged);
  }

  SUBCASE("scale invariance") {
    Rng rng(8);
    for (int t = 0; t < 50; ++t) {
      const double a = rng.uniform(0.5, 2.0), b = rng.uniform(0.5, 2.0);
      const double c = rng.uniform(0.1, 10.0);
      CHECK(convergence_check({a, b}) == convergence_check({c * a, c * b}));
    }
  }

  SUBCASE("three consecutive window pairs are required") {
    CHECK(run_converged({10.0, 1.0, 1.01, 1.02, 1.03}, 3));
    CHECK_FALSE(run_converged({10.0, 1.0, 1.01, 1.02}, 3));
    CHECK_FALSE(run_converged({1.0, 1.01}, 3));
    CHECK(run_converged({1.0, 1.01}, 1));
  }
}

TEST_CASE("ci95 closed forms and coverage") {
  const Ci flat = ci95({5, 5, 5, 5});
  CHECK(flat.mean == doctest::Approx(5.0));
  CHECK(flat.halfwidth == doctest::Approx(0.0));

  const Ci two = ci95({4, 6});
  CHECK(two.mean == doctest::Approx(5.0));
  CHECK(two.halfwidth == doctest::Approx(1.96));  // s = sqrt(2), n = 2

  CHECK_THROWS_AS(ci95({1.0}), std::invalid_argument);

  SUBCASE("roughly 95 percent coverage over 1000 meta-trials") {
    Rng rng(77);
    int covered = 0;
    const int meta = 1000, n = 100;
    for (int t = 0; t < meta; ++t) {
      std::vector<double> xs;
      for (int i = 0; i < n; ++i) xs.push_back(rng.normal());
      const Ci ci = ci95(xs);
      if (std::abs(ci.mean) <= ci.halfwidth) ++covered;
    }
    CHECK(covered >= 930);
    CHECK(covered <= 970);
  }
}

TEST_CASE("one-shot report aggregates are unweighted class means") {
  const DatasetBundle bundle = make_bundle(4, 3, 10, 0.3, 21);
  // all-zero towers embed everything at the origin: every query ties and
  // resolves to the lowest class id
  const auto zero = zero_embedder(8);
  const EvalReport report = one_shot_nn(zero, zero, bundle, Split::Test);

  REQUIRE(report.per_class_accuracy.size() == 4);
  CHECK(report.per_class_accuracy.at(0) == doctest::Approx(1.0));
  for (int cid = 1; cid < 4; ++cid) CHECK(report.per_class_accuracy.at(cid) == doctest::Approx(0.0));
  CHECK(report.overall_avg == doctest::Approx(0.25));
  CHECK(report.seen_avg == doctest::Approx(1.0 / 3));
  CHECK(report.unseen_avg == doctest::Approx(0.0));
  CHECK(report.n_queries == 4 * 3);
  CHECK(report.sample_avg == doctest::Approx(3.0 / 12));

  SUBCASE("report json carries the aggregates") {
    auto j = report.to_json();
    CHECK(j["overall_avg"].get<double>() == doctest::Approx(0.25));
    CHECK(j["per_class"].size() == 4);
  }
}

TEST_CASE("independently initialized towers sit at chance level") {
  // 6 classes, 90 test queries per class = 540 total
  const DatasetBundle bundle = make_bundle(6, 4, 180, 0.5, 33, 0.5);
  const auto tower_t = init_embedder<float>(1001, 32);
  const auto tower_r = init_embedder<float>(2002, 32);
  const uint64_t before_t = params_fingerprint(tower_t);

  const EvalReport report = one_shot_nn(tower_t, tower_r, bundle, Split::Test);
  CHECK(report.n_queries >= 500);
  const double p = 1.0 / 6;
  const double sigma = std::sqrt(p * (1 - p) / report.n_queries);
  INFO("sample avg " << report.sample_avg << " vs chance " << p << " (sigma " << sigma << ")");
  CHECK(std::abs(report.sample_avg - p) <= 3 * sigma);

  SUBCASE("evaluation does not mutate parameters") {
    CHECK(params_fingerprint(tower_t) == before_t);
  }
}

TEST_CASE("transfer evaluation") {
  const DatasetBundle bundle = make_bundle(4, 3, 12, 0.25, 44);
  const auto tower_t = init_embedder<float>(7, 16);
  const auto tower_r = init_embedder<float>(8, 16);

  SUBCASE("target equal to source reproduces one_shot_nn") {
    const EvalReport direct = one_shot_nn(tower_t, tower_r, bundle, Split::Test);
    const EvalReport via = transfer_eval(tower_t, tower_r, bundle);
    CHECK(via.overall_avg == direct.overall_avg);
    CHECK(via.sample_avg == direct.sample_avg);
    CHECK(via.n_queries == direct.n_queries);
  }

  SUBCASE("permuted class ids relabel the accuracies") {
    DatasetBundle permuted;
    permuted.channel_means = bundle.channel_means;
    permuted.generator_seed = bundle.generator_seed;
    const int c = static_cast<int>(bundle.templates.size());
    auto remap = [c](int cid) { return c - 1 - cid; };
    for (const auto& [cid, img] : bundle.templates) permuted.templates[remap(cid)] = img;
    for (const auto& [cid, imgs] : bundle.reals) permuted.reals[remap(cid)] = imgs;
    for (const auto& [cid, tags] : bundle.splits) permuted.splits[remap(cid)] = tags;
    for (const int cid : bundle.seen_classes) permuted.seen_classes.insert(remap(cid));

    const EvalReport a = transfer_eval(tower_t, tower_r, bundle);
    const EvalReport b = transfer_eval(tower_t, tower_r, permuted);
    for (const auto& [cid, acc] : a.per_class_accuracy)
      CHECK(b.per_class_accuracy.at(remap(cid)) == acc);
    CHECK(a.sample_avg == b.sample_avg);
  }
}

TEST_CASE("ablation sweep shape and determinism") {
  const DatasetBundle bundle = make_bundle(3, 2, 10, 0.2, 55);
  TrainOptions base;
  base.batch_size = 2;
  base.max_iters = 2;
  base.window = 1;
  base.seed = 9;
  base.threads = 1;

  const std::vector<int> dims = {8, 16};
  const std::vector<LossVariant> variants = {LossVariant::HingeM5};
  const auto cells = ablation_sweep(bundle, dims, variants, base);
  REQUIRE(cells.size() == 2);
  CHECK(cells[0].dim == 8);
  CHECK(cells[1].dim == 16);

  for (const auto& cell : cells) {
    double acc = 0;
    for (const auto& [cid, a] : cell.report.per_class_accuracy) acc += a;
    CHECK(cell.report.overall_avg ==
          doctest::Approx(acc / cell.report.per_class_accuracy.size()).epsilon(1e-12));
  }

  SUBCASE("rerun reproduces the table exactly") {
    const auto again = ablation_sweep(bundle, dims, variants, base);
    for (size_t i = 0; i < cells.size(); ++i) {
      CHECK(again[i].report.overall_avg == cells[i].report.overall_avg);
      CHECK(again[i].report.seen_avg == cells[i].report.seen_avg);
      CHECK(again[i].report.unseen_avg == cells[i].report.unseen_avg);
    }
  }
}
