#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <quadnet/nn.hpp>
#include <quadnet/rng.hpp>
#include <quadnet/tensor.hpp>

using namespace quadnet;

namespace {

Tensor<double> rand_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(lo, hi);
  return t;
}

// fixed random projection so vector-valued ops reduce to a scalar
Tensor<double> project(const Tensor<double>& x, Rng& rng) {
  Tensor<double> p = rand_tensor(rng, x.shape(), 0.2, 1.0);
  return sum(mul(x, p));
}

}  // namespace

TEST_CASE("elementwise arithmetic") {
  auto a = Tensor<float>::from({2}, std::vector<float>{1, 2});
  auto b = Tensor<float>::from({2}, std::vector<float>{3, 4});
  auto s = add(a, b);
  CHECK(s[0] == 4.0f);
  CHECK(s[1] == 6.0f);

  auto z = scale(a, 0.0f);
  CHECK(z[0] == 0.0f);
  CHECK(z[1] == 0.0f);

  auto m = mul(a, b);
  CHECK(m[0] == 3.0f);
  CHECK(m[1] == 8.0f);
}

TEST_CASE("shape mismatch names both shapes") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({3, 2});
  try {
    add(a, b);
    FAIL("expected shape mismatch");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
}

TEST_CASE("sub of a tensor from itself is zero and its gradient cancels") {
  Tape<float> tape;
  Tape<float>::Scope scope(tape);
  auto x = Tensor<float>::from({3}, std::vector<float>{1, -2, 5});
  x.set_requires_grad(true);
  auto d = sub(x, x);
  for (int i = 0; i < 3; ++i) CHECK(d[i] == 0.0f);
  backward(sum(d), tape);
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 0.0f);
}

TEST_CASE("matmul basics") {
  auto eye = Tensor<float>::from({2, 2}, std::vector<float>{1, 0, 0, 1});
  auto m = Tensor<float>::from({2, 2}, std::vector<float>{1, 2, 3, 4});
  auto r = matmul(eye, m);
  for (int i = 0; i < 4; ++i) CHECK(r[i] == m[i]);

  auto row = Tensor<float>::from({1, 2}, std::vector<float>{1, 0});
  auto col = Tensor<float>::from({2, 1}, std::vector<float>{2, 5});
  CHECK(matmul(row, col).item() == 2.0f);

  CHECK_THROWS_AS(matmul(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({2, 3})),
                  std::invalid_argument);
}

TEST_CASE("matmul gradients match central differences") {
  Rng rng(11);
  auto a = rand_tensor(rng, {3, 4});
  auto b = rand_tensor(rng, {4, 2});
  Rng prng(12);
  auto proj = rand_tensor(prng, {3, 2}, 0.2, 1.0);
  const double err = grad_check<double>(
      [&](const std::vector<Tensor<double>>& in) { return sum(mul(matmul(in[0], in[1]), proj)); },
      {a, b});
  CHECK(err < 1e-4);
}

TEST_CASE("euclidean distance") {
  auto a = Tensor<float>::from({2}, std::vector<float>{0, 0});
  auto b = Tensor<float>::from({2}, std::vector<float>{3, 4});
  CHECK(euclidean_distance(a, b).item() == doctest::Approx(5.0));
  CHECK(euclidean_distance(a, a).item() == 0.0f);

  SUBCASE("coincident points get the zero subgradient") {
    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    auto x = Tensor<float>::from({3}, std::vector<float>{1, 2, 3}).set_requires_grad(true);
    auto y = x.clone().set_requires_grad(true);
    backward(euclidean_distance(x, y), tape);
    for (int i = 0; i < 3; ++i) {
      CHECK(x.grad()[i] == 0.0f);
      CHECK(y.grad()[i] == 0.0f);
    }
  }

  SUBCASE("gradient matches finite differences on a random 100-d pair") {
    Rng rng(21);
    auto x = rand_tensor(rng, {100});
    auto y = rand_tensor(rng, {100});
    const double err = grad_check<double>(
        [](const std::vector<Tensor<double>>& in) { return euclidean_distance(in[0], in[1]); },
        {x, y});
    CHECK(err < 1e-4);
  }

  SUBCASE("grad w.r.t. a is the negation of grad w.r.t. b") {
    Rng rng(22);
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    auto x = rand_tensor(rng, {16});
    auto y = rand_tensor(rng, {16});
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    backward(euclidean_distance(x, y), tape);
    for (int i = 0; i < 16; ++i) CHECK(x.grad()[i] == doctest::Approx(-y.grad()[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum seeds ones") {
    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    auto x = Tensor<float>::from({3}, std::vector<float>{7, 8, 9}).set_requires_grad(true);
    backward(sum(x), tape);
    for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 1.0f);
  }

  SUBCASE("zero-scaled graph has zero gradient") {
    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    auto x = Tensor<float>::from({4}, std::vector<float>{1, 2, 3, 4}).set_requires_grad(true);
    backward(scale(sum(mul(x, x)), 0.0f), tape);
    for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == 0.0f);
  }

  SUBCASE("repeated backward accumulates") {
    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    auto x = Tensor<float>::from({2}, std::vector<float>{1, 2}).set_requires_grad(true);
    auto loss = sum(x);
    backward(loss, tape);
    backward(loss, tape);
    CHECK(x.grad()[0] == 2.0f);
  }

  SUBCASE("non-scalar loss is rejected") {
    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    auto x = Tensor<float>::from({2}, std::vector<float>{1, 2}).set_requires_grad(true);
    auto y = scale(x, 2.0f);
    CHECK_THROWS_AS(backward(y, tape), std::invalid_argument);
  }

  SUBCASE("adjoint of a sum equals the sum of adjoints") {
    Rng rng(31);
    auto base = rand_tensor(rng, {8});

    auto part_a = [](const Tensor<double>& t) { return sum(mul(t, t)); };
    auto part_b = [](const Tensor<double>& t) { return scale(sum(t), 3.0); };

    Tape<double> t1;
    auto x1 = base.clone().set_requires_grad(true);
    {
      Tape<double>::Scope scope(t1);
      backward(add(part_a(x1), part_b(x1)), t1);
    }

    auto x2 = base.clone().set_requires_grad(true);
    Tape<double> t2;
    {
      Tape<double>::Scope scope(t2);
      backward(part_a(x2), t2);
    }
    Tape<double> t3;
    {
      Tape<double>::Scope scope(t3);
      backward(part_b(x2), t3);
    }

    for (int i = 0; i < 8; ++i) CHECK(x1.grad()[i] == doctest::Approx(x2.grad()[i]).epsilon(1e-12));
  }
}

TEST_CASE("grad_check reference points") {
  Rng rng(41);

  SUBCASE("linear layer") {
    auto x = rand_tensor(rng, {6});
    auto w = rand_tensor(rng, {4, 6});
    auto b = rand_tensor(rng, {4});
    Rng prng(42);
    auto proj = rand_tensor(prng, {4}, 0.2, 1.0);
    const double err = grad_check<double>(
        [&](const std::vector<Tensor<double>>& in) {
          return sum(mul(linear(in[0], in[1], in[2]), proj));
        },
        {x, w, b});
    CHECK(err < 1e-6);
  }

  SUBCASE("relu probed away from the kink") {
    auto x = Tensor<double>::zeros({32});
    for (int i = 0; i < 32; ++i) {
      const double mag = rng.uniform(0.1, 1.0);
      x.at(i) = rng.bernoulli(0.5) ? mag : -mag;
    }
    Rng prng(43);
    auto proj = rand_tensor(prng, {32}, 0.2, 1.0);
    const double err = grad_check<double>(
        [&](const std::vector<Tensor<double>>& in) { return sum(mul(relu(in[0]), proj)); }, {x});
    CHECK(err < 1e-6);
  }

  SUBCASE("constant function reports zero error") {
    auto x = rand_tensor(rng, {5});
    const double err = grad_check<double>(
        [](const std::vector<Tensor<double>>&) { return Tensor<double>::scalar(2.5); }, {x});
    CHECK(err == 0.0);
  }
}

TEST_CASE("every elementwise op passes grad_check at smooth points") {
  Rng rng(51);
  Rng prng(52);

  auto a = rand_tensor(rng, {3, 5});
  auto shifted = a.clone();
  for (int i = 0; i < shifted.size(); ++i) {
    const double s = rng.uniform(0.1, 0.6);
    shifted.at(i) += rng.bernoulli(0.5) ? s : -s;
  }
  auto proj = rand_tensor(prng, {3, 5}, 0.2, 1.0);

  auto check2 = [&](const char* name, auto op, Tensor<double> x, Tensor<double> y) {
    const double err = grad_check<double>(
        [&](const std::vector<Tensor<double>>& in) { return sum(mul(op(in[0], in[1]), proj)); },
        {x, y});
    INFO(name);
    CHECK(err < 1e-5);
  };

  check2("add", [](auto& x, auto& y) { return add(x, y); }, a, shifted);
  check2("sub", [](auto& x, auto& y) { return sub(x, y); }, a, shifted);
  check2("mul", [](auto& x, auto& y) { return mul(x, y); }, a, shifted);
  check2("maximum", [](auto& x, auto& y) { return maximum(x, y); }, a, shifted);

  Rng rng2(53);
  auto pos = rand_tensor(rng2, {3, 5}, 0.5, 1.5);
  check2("div", [](auto& x, auto& y) { return div(x, y); }, a, pos);

  SUBCASE("scale, add-scalar, rsub, sqrt, maximum-scalar") {
    auto x = rand_tensor(rng2, {3, 5}, 0.4, 2.0);
    auto one_arg = [&](const char* name, auto op) {
      const double err = grad_check<double>(
          [&](const std::vector<Tensor<double>>& in) { return sum(mul(op(in[0]), proj)); }, {x});
      INFO(name);
      CHECK(err < 1e-5);
    };
    one_arg("scale", [](auto& t) { return scale(t, -1.7); });
    one_arg("add_scalar", [](auto& t) { return add(t, 0.4); });
    one_arg("rsub_scalar", [](auto& t) { return sub(2.0, t); });
    one_arg("sqrt", [](auto& t) { return sqrt_elem(t); });
    one_arg("maximum_scalar", [](auto& t) { return maximum(t, 1.0); });
  }

  SUBCASE("reductions and shape ops") {
    auto x = rand_tensor(rng2, {2, 3, 4});
    Rng prng2(54);
    auto projc = rand_tensor(prng2, {2}, 0.2, 1.0);
    double err = grad_check<double>(
        [&](const std::vector<Tensor<double>>& in) {
          return sum(mul(channel_mean(in[0]), projc));
        },
        {x});
    CHECK(err < 1e-5);

    auto v = rand_tensor(rng2, {3});
    auto projs = rand_tensor(prng2, {3, 2, 2}, 0.2, 1.0);
    err = grad_check<double>(
        [&](const std::vector<Tensor<double>>& in) {
          return sum(mul(expand_spatial(in[0], 2, 2), projs));
        },
        {v});
    CHECK(err < 1e-5);

    auto flatp = rand_tensor(prng2, {24}, 0.2, 1.0);
    err = grad_check<double>(
        [&](const std::vector<Tensor<double>>& in) {
          return sum(mul(reshape(in[0], {24}), flatp));
        },
        {x});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("composite conv-relu-pool-fc graph matches finite differences") {
  Rng rng(61);
  auto x = rand_tensor(rng, {2, 8, 8});
  auto w1 = rand_tensor(rng, {3, 2, 3, 3}, -0.4, 0.4);
  auto b1 = rand_tensor(rng, {3}, -0.1, 0.1);
  auto w2 = rand_tensor(rng, {4, 48}, -0.3, 0.3);
  auto b2 = rand_tensor(rng, {4}, -0.1, 0.1);
  Rng prng(62);
  auto proj = rand_tensor(prng, {4}, 0.2, 1.0);

  const double err = grad_check<double>(
      [&](const std::vector<Tensor<double>>& in) {
        auto h = maxpool2(relu(conv2d(in[0], in[1], in[2], 1)));
        auto y = linear(reshape(h, {48}), in[3], in[4]);
        return sum(mul(y, proj));
      },
      {x, w1, b1, w2, b2});
  CHECK(err < 1e-3);
}

TEST_CASE("finite inputs produce finite gradients") {
  Rng rng(71);
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  auto x = rand_tensor(rng, {6, 6}).set_requires_grad(true);
  auto y = rand_tensor(rng, {6, 6}, 0.5, 2.0).set_requires_grad(true);
  auto z = div(mul(add(x, y), sub(x, y)), maximum(y, 0.25));
  backward(sum(sqrt_elem(maximum(z, 0.01))), tape);
  CHECK(x.grad().allFinite());
  CHECK(y.grad().allFinite());
}
