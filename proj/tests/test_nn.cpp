#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <quadnet/nn.hpp>
#include <quadnet/rng.hpp>

using namespace quadnet;

namespace {

template <typename S>
Tensor<S> rand_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t.at(i) = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

std::string temp_path(const char* name) {
  return std::string("qn_test_") + name + ".bin";
}

}  // namespace

TEST_CASE("conv2d output extents follow the padded arithmetic") {
  Rng rng(1);
  auto x1 = rand_tensor<float>(rng, {3, 48, 48});
  auto w1 = rand_tensor<float>(rng, {150, 3, 7, 7}, -0.05, 0.05);
  auto b1 = Tensor<float>::zeros({150});
  auto y1 = conv2d(x1, w1, b1, 2);
  CHECK(y1.shape() == std::vector<int>{150, 46, 46});

  auto x2 = rand_tensor<float>(rng, {150, 23, 23});
  auto w2 = rand_tensor<float>(rng, {200, 150, 4, 4}, -0.02, 0.02);
  auto b2 = Tensor<float>::zeros({200});
  CHECK(conv2d(x2, w2, b2, 2).shape() == std::vector<int>{200, 24, 24});

  CHECK_THROWS_AS(conv2d(x1, w2, b2, 2), std::invalid_argument);  // channel mismatch
}

TEST_CASE("1x1 identity kernel reproduces the input") {
  Rng rng(2);
  auto x = rand_tensor<float>(rng, {2, 5, 5});
  auto w = Tensor<float>::zeros({2, 2, 1, 1});
  w.at(0 * 2 + 0) = 1.0f;  // out0 <- in0
  w.at(1 * 2 + 1) = 1.0f;  // out1 <- in1
  auto b = Tensor<float>::zeros({2});
  auto y = conv2d(x, w, b, 0);
  REQUIRE(y.shape() == x.shape());
  for (int i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv2d gradients match central differences") {
  Rng rng(3);
  auto x = rand_tensor<double>(rng, {2, 6, 6});
  auto w = rand_tensor<double>(rng, {3, 2, 3, 3}, -0.5, 0.5);
  auto b = rand_tensor<double>(rng, {3}, -0.2, 0.2);
  Rng prng(4);
  auto proj = rand_tensor<double>(prng, {3, 6, 6}, 0.2, 1.0);
  const double err = grad_check<double>(
      [&](const std::vector<Tensor<double>>& in) {
        return sum(mul(conv2d(in[0], in[1], in[2], 1), proj));
      },
      {x, w, b});
  CHECK(err < 1e-4);
}

TEST_CASE("maxpool2 halves extents and drops the odd tail") {
  auto a = Tensor<float>::zeros({150, 46, 46});
  CHECK(maxpool2(a).shape() == std::vector<int>{150, 23, 23});
  auto c = Tensor<float>::zeros({300, 13, 13});
  CHECK(maxpool2(c).shape() == std::vector<int>{300, 6, 6});
}

TEST_CASE("maxpool2 ties route the gradient to the first window cell") {
  Tape<float> tape;
  Tape<float>::Scope scope(tape);
  auto x = Tensor<float>::full({1, 4, 4}, 2.5f).set_requires_grad(true);
  auto y = maxpool2(x);
  for (int i = 0; i < y.size(); ++i) CHECK(y[i] == 2.5f);
  backward(sum(y), tape);
  for (int oy = 0; oy < 2; ++oy)
    for (int ox = 0; ox < 2; ++ox) {
      CHECK(x.grad()[(2 * oy) * 4 + 2 * ox] == 1.0f);
      CHECK(x.grad()[(2 * oy) * 4 + 2 * ox + 1] == 0.0f);
      CHECK(x.grad()[(2 * oy + 1) * 4 + 2 * ox] == 0.0f);
      CHECK(x.grad()[(2 * oy + 1) * 4 + 2 * ox + 1] == 0.0f);
    }
}

TEST_CASE("maxpool2 gradients match central differences") {
  Rng rng(5);
  auto x = rand_tensor<double>(rng, {2, 6, 6});
  Rng prng(6);
  auto proj = rand_tensor<double>(prng, {2, 3, 3}, 0.2, 1.0);
  const double err = grad_check<double>(
      [&](const std::vector<Tensor<double>>& in) { return sum(mul(maxpool2(in[0]), proj)); }, {x});
  CHECK(err < 1e-4);
}

TEST_CASE("lcn preserves shape and zeroes a constant map") {
  Rng rng(7);
  auto x = rand_tensor<float>(rng, {150, 23, 23});
  CHECK(lcn(x, 7).shape() == std::vector<int>{150, 23, 23});

  auto flat = Tensor<float>::full({4, 9, 9}, 0.37f);
  auto y = lcn(flat, 7);
  for (int i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.0f).epsilon(1e-5));
}

TEST_CASE("lcn and smooth2d gradients match central differences") {
  Rng rng(8);
  auto x = rand_tensor<double>(rng, {2, 8, 8});
  Rng prng(9);
  auto proj = rand_tensor<double>(prng, {2, 8, 8}, 0.2, 1.0);
  double err = grad_check<double>(
      [&](const std::vector<Tensor<double>>& in) { return sum(mul(smooth2d(in[0], 7), proj)); },
      {x});
  CHECK(err < 1e-4);
  err = grad_check<double>(
      [&](const std::vector<Tensor<double>>& in) { return sum(mul(lcn(in[0], 7), proj)); }, {x});
  CHECK(err < 1e-4);
  err = grad_check<double>(
      [&](const std::vector<Tensor<double>>& in) { return sum(mul(lcn(in[0], 6), proj)); }, {x});
  CHECK(err < 1e-4);
}

TEST_CASE("embedder forward trace matches the layer table") {
  auto p = init_embedder<float>(123, 100);
  Rng rng(10);
  auto img = rand_tensor<float>(rng, {3, 48, 48}, 0.0, 1.0);
  std::vector<std::vector<int>> trace;
  auto r = embed(p, img, &trace);
  const std::vector<std::vector<int>> expected = {
      {3, 48, 48},  {150, 46, 46}, {150, 23, 23}, {200, 24, 24}, {200, 12, 12},
      {300, 13, 13}, {300, 6, 6},  {350},         {100},
  };
  CHECK(trace == expected);
  CHECK(r.embedding.shape() == std::vector<int>{100});
  CHECK(r.fc1.shape() == std::vector<int>{350});

  SUBCASE("deterministic forward") {
    auto r2 = embed(p, img);
    for (int i = 0; i < r.embedding.size(); ++i) CHECK(r.embedding[i] == r2.embedding[i]);
  }

  SUBCASE("wrong input shape is rejected") {
    CHECK_THROWS_AS(embed(p, Tensor<float>::zeros({3, 32, 32})), std::invalid_argument);
  }
}

TEST_CASE("zero-weight embedder returns the fc2 bias") {
  EmbedderParams<float> p;
  p.embed_dim = 8;
  p.conv1_w = Tensor<float>::zeros({150, 3, 7, 7});
  p.conv1_b = Tensor<float>::zeros({150});
  p.conv2_w = Tensor<float>::zeros({200, 150, 4, 4});
  p.conv2_b = Tensor<float>::zeros({200});
  p.conv3_w = Tensor<float>::zeros({300, 200, 4, 4});
  p.conv3_b = Tensor<float>::zeros({300});
  p.fc1_w = Tensor<float>::zeros({350, 10800});
  p.fc1_b = Tensor<float>::zeros({350});
  p.fc2_w = Tensor<float>::zeros({8, 350});
  Rng rng(11);
  p.fc2_b = rand_tensor<float>(rng, {8});
  auto img = rand_tensor<float>(rng, {3, 48, 48}, 0.0, 1.0);
  auto r = embed(p, img);
  for (int i = 0; i < 8; ++i) CHECK(r.embedding[i] == doctest::Approx(p.fc2_b[i]));
}

TEST_CASE("init_embedder is seed-deterministic with fan-in uniform stats") {
  auto a = init_embedder<float>(7, 50);
  auto b = init_embedder<float>(7, 50);
  bool identical = true;
  a.for_each([&](const char* name, const Tensor<float>& t) {
    const Tensor<float>* other = nullptr;
    b.for_each([&](const char* n2, const Tensor<float>& t2) {
      if (std::string(name) == n2) other = &t2;
    });
    for (int i = 0; i < t.size() && identical; ++i) identical = (t[i] == (*other)[i]);
  });
  CHECK(identical);

  auto c = init_embedder<float>(8, 50);
  CHECK(a.conv1_w[0] != c.conv1_w[0]);

  // uniform(-s, s) has stddev s / sqrt(3)
  const double s = std::sqrt(1.0 / (3 * 7 * 7));
  double mean = 0.0, sq = 0.0;
  const int n = a.conv1_w.size();
  for (int i = 0; i < n; ++i) {
    mean += a.conv1_w[i];
    sq += static_cast<double>(a.conv1_w[i]) * a.conv1_w[i];
  }
  mean /= n;
  const double stddev = std::sqrt(sq / n - mean * mean);
  CHECK(stddev == doctest::Approx(s / std::sqrt(3.0)).epsilon(0.05));

  bool biases_zero = true;
  a.for_each([&](const char* name, const Tensor<float>& t) {
    if (std::string(name).ends_with(".b"))
      for (int i = 0; i < t.size(); ++i) biases_zero = biases_zero && t[i] == 0.0f;
  });
  CHECK(biases_zero);
}

namespace {

struct OneParam {
  Tensor<float> p;
  template <typename F>
  void for_each(F&& f) {
    f("p", p);
  }
};

}  // namespace

TEST_CASE("sgd_step follows the momentum recurrence") {
  SUBCASE("single plain step") {
    OneParam m{Tensor<float>::scalar(1.0f)};
    auto st = OptimizerState<float>::for_params(m, 1e-3f, 0.0f, 0.0f);
    std::vector<ArrayX<float>> g = {ArrayX<float>::Constant(1, 0.1f)};
    sgd_step(m, g, st);
    CHECK(m.p.item() == doctest::Approx(0.9999f));
  }

  SUBCASE("velocity decays geometrically when gradients stop") {
    OneParam m{Tensor<float>::scalar(0.0f)};
    auto st = OptimizerState<float>::for_params(m, 1e-3f, 0.9f, 0.0f);
    std::vector<ArrayX<float>> g = {ArrayX<float>::Constant(1, 1.0f)};
    sgd_step(m, g, st);
    const float v1 = st.velocity[0][0];
    std::vector<ArrayX<float>> zero = {ArrayX<float>::Constant(1, 0.0f)};
    sgd_step(m, zero, st);
    CHECK(st.velocity[0][0] == doctest::Approx(0.9f * v1));
    sgd_step(m, zero, st);
    CHECK(st.velocity[0][0] == doctest::Approx(0.81f * v1));
  }

  SUBCASE("two steps with constant gradient match the hand-unrolled recurrence") {
    const float lr = 0.01f, mom = 0.9f, wd = 0.1f, g0 = 0.5f;
    float p = 2.0f, v = 0.0f;
    for (int i = 0; i < 2; ++i) {
      const float gp = g0 + wd * p;
      v = mom * v + gp;
      p = p - lr * v;
    }
    OneParam m{Tensor<float>::scalar(2.0f)};
    auto st = OptimizerState<float>::for_params(m, lr, mom, wd);
    std::vector<ArrayX<float>> g = {ArrayX<float>::Constant(1, g0)};
    sgd_step(m, g, st);
    sgd_step(m, g, st);
    CHECK(m.p.item() == doctest::Approx(p).epsilon(1e-6));
  }

  SUBCASE("weight decay alone strictly shrinks parameter norms") {
    Rng rng(12);
    OneParam m{rand_tensor<float>(rng, {32})};
    auto st = OptimizerState<float>::for_params(m, 1e-2f, 0.9f, 1e-2f);
    std::vector<ArrayX<float>> zero = {ArrayX<float>::Zero(32)};
    double prev = m.p.values().matrix().norm();
    for (int i = 0; i < 3; ++i) {
      sgd_step(m, zero, st);
      const double cur = m.p.values().matrix().norm();
      CHECK(cur < prev);
      prev = cur;
    }
  }

  SUBCASE("non-finite gradient halts") {
    OneParam m{Tensor<float>::scalar(1.0f)};
    auto st = OptimizerState<float>::for_params(m);
    std::vector<ArrayX<float>> g = {ArrayX<float>::Constant(1, std::nanf(""))};
    CHECK_THROWS_AS(sgd_step(m, g, st), std::runtime_error);
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  auto t = init_embedder<float>(100, 32);
  auto r = init_embedder<float>(101, 32);
  const std::string path = temp_path("ckpt");
  save_checkpoint(t, r, path);
  auto ck = load_checkpoint<float>(path);
  CHECK(ck.embed_dim == 32);
  bool identical = true;
  int checked = 0;
  const EmbedderParams<float>* towers[2] = {&t, &r};
  const EmbedderParams<float>* loaded[2] = {&ck.tower_t, &ck.tower_r};
  for (int k = 0; k < 2; ++k) {
    std::vector<const Tensor<float>*> orig, got;
    towers[k]->for_each([&](const char*, const Tensor<float>& x) { orig.push_back(&x); });
    loaded[k]->for_each([&](const char*, const Tensor<float>& x) { got.push_back(&x); });
    for (size_t i = 0; i < orig.size(); ++i) {
      REQUIRE(orig[i]->shape() == got[i]->shape());
      for (int j = 0; j < orig[i]->size(); ++j, ++checked)
        identical = identical && ((*orig[i])[j] == (*got[i])[j]);
    }
  }
  CHECK(identical);
  CHECK(checked > 0);

  SUBCASE("truncated file fails to load") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string tpath = temp_path("ckpt_trunc");
    std::ofstream out(tpath, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_checkpoint<float>(tpath), std::runtime_error);
    std::remove(tpath.c_str());
  }

  SUBCASE("dimension mismatch against the requested configuration") {
    CHECK_THROWS_WITH_AS(load_checkpoint<float>(path, 100),
                         doctest::Contains("shape mismatch"), std::runtime_error);
  }

  SUBCASE("bad magic is rejected") {
    const std::string bpath = temp_path("ckpt_magic");
    std::ofstream out(bpath, std::ios::binary);
    out << "NOTQN" << std::string(64, '\0');
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint<float>(bpath), doctest::Contains("magic"),
                         std::runtime_error);
    std::remove(bpath.c_str());
  }

  std::remove(path.c_str());
}
