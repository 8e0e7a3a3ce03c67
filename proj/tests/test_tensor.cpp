#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "ipart/errors.hpp"
#include "ipart/io.hpp"
#include "support.hpp"

using namespace ipart;
using support::probe;
using support::random_tensor;

namespace {

// Direct cross-correlation, written independently of the im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& k, Index stride, bool same) {
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2), o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const Index ph = same ? kh / 2 : 0, pw = same ? kw / 2 : 0;
  const Index oh = (h + 2 * ph - kh) / stride + 1, ow = (w + 2 * pw - kw) / stride + 1;
  Tensor out(Shape{o, oh, ow});
  for (Index f = 0; f < o; ++f) {
    for (Index y = 0; y < oh; ++y) {
      for (Index xx = 0; xx < ow; ++xx) {
        double s = 0.0;
        for (Index ch = 0; ch < c; ++ch) {
          for (Index i = 0; i < kh; ++i) {
            for (Index j = 0; j < kw; ++j) {
              const Index sy = y * stride + i - ph, sx = xx * stride + j - pw;
              if (sy >= 0 && sy < h && sx >= 0 && sx < w) s += x(ch, sy, sx) * k(f, ch, i, j);
            }
          }
        }
        out(f, y, xx) = s;
      }
    }
  }
  return out;
}

Tensor run(const std::function<Var(Graph&)>& f) {
  Graph g;
  return f(g).value();
}

void check_grad(const ScalarFunction& f, const Tensor& point, double tol = 1e-4) {
  const GradCheckReport r = grad_check(f, point, 1e-6, tol);
  INFO("max relative error " << r.max_relative_error << " at " << r.worst_index);
  CHECK(r.pass);
}

}  // namespace

TEST_CASE("tensor shape and indexing contracts") {
  Tensor t(Shape{2, 3, 4}, 1.5);
  CHECK(t.size() == 24);
  CHECK(t(1, 2, 3) == 1.5);
  t(1, 2, 3) = 2.0;
  CHECK(t[23] == 2.0);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(t(2, 0, 0), std::out_of_range);
  CHECK_THROWS_AS(t(0, 0), std::out_of_range);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  CHECK(Tensor::scalar(3.0).rank() == 0);
  CHECK(Tensor::scalar(3.0).size() == 1);
}

TEST_CASE("conv2d examples") {
  SUBCASE("identity 1x1 kernel") {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({1, 3, 3}, rng);
    const Tensor y = run([&](Graph& g) { return ops::conv2d(g.constant(x), g.constant(Tensor(Shape{1, 1, 1, 1}, 1.0))); });
    CHECK(y == x);
  }
  SUBCASE("2x2 valid") {
    const Tensor y = run([](Graph& g) {
      return ops::conv2d(g.constant(Tensor(Shape{1, 2, 2}, {1, 2, 3, 4})),
                         g.constant(Tensor(Shape{1, 1, 2, 2}, {1, 0, 0, 1})));
    });
    CHECK(y.shape() == Shape{1, 1, 1});
    CHECK(y[0] == 5.0);
  }
  SUBCASE("zero kernel") {
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({2, 5, 5}, rng);
    const Tensor y = run([&](Graph& g) {
      return ops::conv2d(g.constant(x), g.constant(Tensor(Shape{3, 2, 3, 3})), 1, Padding::same);
    });
    CHECK(y.vec().isZero(0.0));
  }
  SUBCASE("shape mismatch names both shapes") {
    Graph g;
    try {
      ops::conv2d(g.constant(Tensor(Shape{2, 4, 4})), g.constant(Tensor(Shape{1, 3, 3, 3})));
      FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x4x4]") != std::string::npos);
      CHECK(msg.find("[1x3x3x3]") != std::string::npos);
    }
  }
  SUBCASE("kernel larger than input is rejected") {
    Graph g;
    CHECK_THROWS_AS(ops::conv2d(g.constant(Tensor(Shape{1, 2, 2})), g.constant(Tensor(Shape{1, 1, 3, 3}))),
                    std::invalid_argument);
  }
}

TEST_CASE("conv2d matches direct evaluation") {
  std::mt19937_64 rng(3);
  for (Index stride : {1, 2}) {
    for (bool same : {false, true}) {
      const Tensor x = random_tensor({3, 7, 6}, rng);
      const Tensor k = random_tensor({4, 3, 3, 3}, rng);
      const Tensor y = run([&](Graph& g) {
        return ops::conv2d(g.constant(x), g.constant(k), stride, same ? Padding::same : Padding::valid);
      });
      const Tensor ref = naive_conv(x, k, stride, same);
      REQUIRE(y.shape() == ref.shape());
      CHECK((y.vec() - ref.vec()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("conv2d is linear in the input") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({2, 6, 6}, rng), z = random_tensor({2, 6, 6}, rng);
  const Tensor k = random_tensor({3, 2, 3, 3}, rng);
  const double a = 0.7, b = -1.3;
  auto conv = [&](const Tensor& in) {
    return run([&](Graph& g) { return ops::conv2d(g.constant(in), g.constant(k), 2, Padding::same); });
  };
  Tensor mix = x;
  mix.vec() = a * x.vec() + b * z.vec();
  const Tensor lhs = conv(mix);
  CHECK((lhs.vec() - (a * conv(x).vec() + b * conv(z).vec())).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("softmax examples and simplex property") {
  const Tensor u = run([](Graph& g) { return ops::softmax_axis(g.constant(Tensor(Shape{3}, 0.0)), 0); });
  for (Index i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const Tensor p = run([](Graph& g) { return ops::softmax_axis(g.constant(Tensor(Shape{2}, {0.0, std::log(3.0)})), 0); });
  CHECK(std::abs(p[0] - 0.25) < 1e-15);
  CHECK(std::abs(p[1] - 0.75) < 1e-15);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({4, 6}, rng, -50.0, 50.0);
    Tensor shifted = x;
    shifted.vec().array() += 123.0;
    for (Index axis : {0, 1}) {
      const Tensor y = run([&](Graph& g) { return ops::softmax_axis(g.constant(x), axis); });
      const Tensor ys = run([&](Graph& g) { return ops::softmax_axis(g.constant(shifted), axis); });
      CHECK((y.vec() - ys.vec()).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(y.vec().minCoeff() > 0.0);
      const auto m = y.matrix(4, 6);
      const Eigen::VectorXd sums = axis == 0 ? Eigen::VectorXd(m.colwise().sum().transpose()) : Eigen::VectorXd(m.rowwise().sum());
      CHECK((sums.array() - 1.0).abs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("batch_norm examples") {
  SUBCASE("standardized channel passes through") {
    BatchNormState st(1);
    const Tensor x(Shape{4, 1}, {-1.0, 1.0, -1.0, 1.0});
    const Tensor y = run([&](Graph& g) {
      return ops::batch_norm(g.constant(x), g.constant(Tensor(Shape{1}, 1.0)), g.constant(Tensor(Shape{1}, 0.0)), st,
                             Mode::train);
    });
    CHECK((y.vec() - x.vec()).cwiseAbs().maxCoeff() < 1e-5);
  }
  SUBCASE("constant channel collapses to the shift") {
    BatchNormState st(1);
    const Tensor y = run([&](Graph& g) {
      return ops::batch_norm(g.constant(Tensor(Shape{3, 1, 2, 2}, 4.0)), g.constant(Tensor(Shape{1}, 1.0)),
                             g.constant(Tensor(Shape{1}, 5.0)), st, Mode::train);
    });
    for (double v : y.values()) CHECK(v == 5.0);
  }
  SUBCASE("[0,2] with eps 0 becomes [-1,1]") {
    BatchNormState st(1);
    const Tensor y = run([&](Graph& g) {
      return ops::batch_norm(g.constant(Tensor(Shape{2, 1}, {0.0, 2.0})), g.constant(Tensor(Shape{1}, 1.0)),
                             g.constant(Tensor(Shape{1}, 0.0)), st, Mode::train, 0.0);
    });
    CHECK(y[0] == -1.0);
    CHECK(y[1] == 1.0);
  }
  SUBCASE("eval before training is rejected") {
    BatchNormState st(2);
    Graph g;
    CHECK_THROWS(ops::batch_norm(g.constant(Tensor(Shape{2, 2}, 1.0)), g.constant(Tensor(Shape{2}, 1.0)),
                                 g.constant(Tensor(Shape{2}, 0.0)), st, Mode::eval));
  }
  SUBCASE("running statistics follow momentum 0.1") {
    BatchNormState st(1);
    run([&](Graph& g) {
      return ops::batch_norm(g.constant(Tensor(Shape{2, 1}, {1.0, 3.0})), g.constant(Tensor(Shape{1}, 1.0)),
                             g.constant(Tensor(Shape{1}, 0.0)), st, Mode::train);
    });
    CHECK(st.initialized);
    CHECK(st.running_mean[0] == doctest::Approx(0.1 * 2.0));
    CHECK(st.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 2.0));  // unbiased batch variance
    const Tensor y = run([&](Graph& g) {
      return ops::batch_norm(g.constant(Tensor(Shape{1, 1}, {0.2})), g.constant(Tensor(Shape{1}, 1.0)),
                             g.constant(Tensor(Shape{1}, 0.0)), st, Mode::eval);
    });
    CHECK(y[0] == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("grad_check examples") {
  std::mt19937_64 rng(6);
  const GradCheckReport lin = grad_check([](Graph&, Var x) { return ops::sum(ops::scale(x, 3.0)); },
                                         random_tensor({5}, rng));
  CHECK(lin.pass);
  const GradCheckReport sq = grad_check([](Graph&, Var x) { return ops::sum(ops::mul(x, x)); },
                                        Tensor(Shape{2}, {1.0, 2.0}));
  CHECK(sq.pass);
  CHECK(sq.max_relative_error < 1e-9);

  Graph g;
  Var x = g.leaf(Tensor(Shape{2}, {1.0, 2.0}));
  g.backward(ops::sum(ops::mul(x, x)));
  CHECK(g.grad(x)[0] == 2.0);
  CHECK(g.grad(x)[1] == 4.0);

  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(grad_check([inf](Graph&, Var v) { return ops::sum(ops::scale(v, inf)); }, Tensor(Shape{1}, 1.0)),
                  NumericalError);
}

TEST_CASE("graph accumulation and participation") {
  Graph g;
  Var x = g.leaf(Tensor(Shape{1}, 3.0));
  Var unused = g.leaf(Tensor(Shape{2}, 1.0));
  Var y = ops::add(x, x);
  g.backward(y);
  CHECK(g.grad(x)[0] == 2.0);
  CHECK(g.grad(unused).vec().isZero(0.0));
  CHECK(g.visited() <= g.size());

  Graph r;
  Var v = r.leaf(Tensor(Shape{3}, {-1.0, 0.0, 2.0}));
  r.backward(ops::sum(ops::relu(v)));
  CHECK(r.grad(v)[0] == 0.0);
  CHECK(r.grad(v)[1] == 0.0);  // subgradient at 0
  CHECK(r.grad(v)[2] == 1.0);
}

TEST_CASE("every differentiable op passes grad_check at random points") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    check_grad([&](Graph& g, Var x) { return probe(ops::add(x, g.constant(b))); }, a);
    check_grad([&](Graph& g, Var x) { return probe(ops::sub(g.constant(b), x)); }, a);
    check_grad([&](Graph& g, Var x) { return probe(ops::mul(x, ops::add(x, g.constant(b)))); }, a);
    check_grad([&](Graph&, Var x) { return ops::mean(ops::mul(x, x)); }, a);
    check_grad([&](Graph&, Var x) { return probe(ops::relu(x)); }, a);
    check_grad([&](Graph&, Var x) { return probe(ops::transpose(ops::reshape(x, Shape{4, 3}))); }, a);
    check_grad([&](Graph&, Var x) { return probe(ops::softmax_axis(x, 0)); }, a);
    check_grad([&](Graph&, Var x) { return probe(ops::softmax_axis(x, 1)); }, a);
    check_grad([&](Graph&, Var x) { return ops::cross_entropy(x, {0, 3, 1}); }, a);
    check_grad([&](Graph&, Var x) {
      return ops::binary_cross_entropy_with_logits(x, Tensor(Shape{3, 4}, {1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0, 0}));
    }, a);

    const Tensor w = random_tensor({5, 4}, rng), bias = random_tensor({5}, rng);
    check_grad([&](Graph& g, Var x) { return probe(ops::linear(x, g.constant(w), g.constant(bias))); }, a);
    check_grad([&](Graph& g, Var x) { return probe(ops::linear(g.constant(a), x, g.constant(bias))); }, w);
    check_grad([&](Graph& g, Var x) { return probe(ops::linear(g.constant(a), g.constant(w), x)); }, bias);

    const Tensor regions = random_tensor({2, 3, 4}, rng), weights = random_tensor({2, 4}, rng);
    check_grad([&](Graph& g, Var x) { return probe(ops::region_weighted_sum(x, g.constant(weights))); }, regions);
    check_grad([&](Graph& g, Var x) { return probe(ops::region_weighted_sum(g.constant(regions), x)); }, weights);
  }
}

TEST_CASE("conv2d and batch_norm pass grad_check") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({2, 2, 5, 5}, rng), k = random_tensor({3, 2, 3, 3}, rng);
    const Tensor bias = random_tensor({3}, rng);
    for (Index stride : {1, 2}) {
      for (Padding pad : {Padding::same, Padding::valid}) {
        check_grad([&](Graph& g, Var v) { return probe(ops::conv2d(v, g.constant(k), g.constant(bias), stride, pad)); }, x);
        check_grad([&](Graph& g, Var v) { return probe(ops::conv2d(g.constant(x), v, g.constant(bias), stride, pad)); }, k);
        check_grad([&](Graph& g, Var v) { return probe(ops::conv2d(g.constant(x), g.constant(k), v, stride, pad)); }, bias);
      }
    }
    const Tensor in = random_tensor({4, 3, 2, 2}, rng), gamma = random_tensor({3}, rng, 0.5, 1.5),
                 beta = random_tensor({3}, rng);
    auto bn = [&](Graph& g, Var xv, Var gv, Var bv) {
      BatchNormState st(3);
      return probe(ops::batch_norm(xv, gv, bv, st, Mode::train));
    };
    check_grad([&](Graph& g, Var v) { return bn(g, v, g.constant(gamma), g.constant(beta)); }, in);
    check_grad([&](Graph& g, Var v) { return bn(g, g.constant(in), v, g.constant(beta)); }, gamma);
    check_grad([&](Graph& g, Var v) { return bn(g, g.constant(in), g.constant(gamma), v); }, beta);

    BatchNormState trained(3);
    trained.running_mean = random_tensor({3}, rng);
    trained.running_var = random_tensor({3}, rng, 0.5, 2.0);
    trained.initialized = true;
    check_grad([&](Graph& g, Var v) {
      return probe(ops::batch_norm(v, g.constant(gamma), g.constant(beta), trained, Mode::eval));
    }, in);
  }
}

TEST_CASE("tensor dump layout and round trip") {
  const NamedTensors in{{"w", Tensor(Shape{2, 1}, {1.5, -2.0})}, {"s", Tensor::scalar(3.0)}};
  const std::string bytes = encode_tensor_dump(in);
  REQUIRE(bytes.size() == 4 + 4 + (2 + 1 + 1 + 8 + 16) + (2 + 1 + 1 + 8));
  CHECK(bytes.substr(0, 4) == "RGT1");
  std::uint32_t count = 0;
  std::memcpy(&count, bytes.data() + 4, 4);
  CHECK(count == 2);
  std::uint16_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 2);
  CHECK(len == 1);
  CHECK(bytes[10] == 'w');
  CHECK(static_cast<int>(bytes[11]) == 2);
  double first = 0.0;
  std::memcpy(&first, bytes.data() + 20, 8);
  CHECK(first == 1.5);

  const NamedTensors out = decode_tensor_dump(bytes);
  REQUIRE(out.size() == 2);
  CHECK(out[0].first == "w");
  CHECK(out[0].second == in[0].second);
  CHECK(out[1].second == in[1].second);
  CHECK_THROWS_AS(decode_tensor_dump(bytes.substr(0, bytes.size() - 3)), IoError);
  CHECK_THROWS_AS(decode_tensor_dump("XXXX"), IoError);
}
