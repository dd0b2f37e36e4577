#include "issl/autodiff.hpp"

#include <cmath>

#include "doctest.h"
#include "issl/random.hpp"
#include "issl/warp.hpp"
#include "oracles.hpp"

using namespace issl;
using ad::GradCheckInput;
using ad::Tape;
using ad::Tensor;

namespace {

std::vector<double> random_values(std::int64_t n, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Runs grad_check and asserts it passes; failure output names the op.
template <typename Build>
void expect_gradients(const char* name, Build build,
                      const std::vector<GradCheckInput<double>>& inputs,
                      const std::function<bool(int, std::int64_t)>& skip = {}) {
  const ad::GradCheckResult r = ad::grad_check<double>(build, inputs, {}, skip);
  INFO(name, ": worst input ", r.worst_input, " coord ", r.worst_coord, " analytic ",
       r.worst_analytic, " numeric ", r.worst_numeric);
  CHECK(r.max_rel_err < 1e-4);
  CHECK(r.checked > 0);
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("sum of a leaf backpropagates ones") {
  Tape<double> tape;
  auto x = tape.variable({4}, {1.0, -2.0, 0.5, 3.0});
  tape.backward(ad::reduce_sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("product rule on scalars") {
  Tape<double> tape;
  auto x = tape.variable({1}, {2.0});
  auto y = tape.variable({1}, {3.0});
  tape.backward(x * y);
  CHECK(x.grad()[0] == 3.0);
  CHECK(y.grad()[0] == 2.0);
}

TEST_CASE("reduce_mean spreads 1/N") {
  Tape<double> tape;
  auto x = tape.variable({5}, std::vector<double>(5, 7.0));
  tape.backward(ad::reduce_mean(x));
  for (double g : x.grad()) CHECK(g == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("sigmoid slope at zero is a quarter") {
  Tape<double> tape;
  auto x = tape.variable({1}, {0.0});
  tape.backward(ad::sigmoid(x));
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar roots and double invocation") {
  Tape<double> tape;
  auto x = tape.variable({2}, {1.0, 2.0});
  CHECK_THROWS_AS(tape.backward(x), ValidationError);

  Tape<double> tape2;
  auto y = tape2.variable({2}, {1.0, 2.0});
  auto root = ad::reduce_sum(y);
  tape2.backward(root);
  CHECK_THROWS_AS(tape2.backward(root), ValidationError);
}

TEST_CASE("bilinear center of the 2x2 ramp") {
  Tape<double> tape;
  auto img = tape.variable({1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
  auto u = tape.variable({1}, {0.5});
  auto v = tape.variable({1}, {0.5});
  auto out = ad::bilinear_sample_diff(img, u, v);
  CHECK(out.values()[0] == doctest::Approx(1.5).epsilon(1e-15));
  tape.backward(ad::reduce_sum(out));
  // d/du: horizontal slope is 1 everywhere; d/dv: vertical slope is 2.
  CHECK(u.grad()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(v.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("bilinear forward matches the pure warp kernel") {
  Rng rng = stream_rng(21, Stream::kTest, {0});
  Image img(9, 7, 3);
  for (double& x : img.values) x = rng.uniform(0.0, 1.0);
  SampleGrid grid(6, 5);
  for (size_t i = 0; i < grid.u.size(); ++i) {
    grid.u[i] = rng.uniform(-1.0, 9.5);
    grid.v[i] = rng.uniform(-1.0, 7.5);
  }
  const Image pure = warp::bilinear_sample(img, grid);

  Tape<double> tape;
  auto timg = tape.constant({3, 7, 9}, img.values);
  auto tu = tape.constant({5, 6}, grid.u);
  auto tv = tape.constant({5, 6}, grid.v);
  auto out = ad::bilinear_sample_diff(timg, tu, tv);
  for (size_t i = 0; i < pure.values.size(); ++i) {
    CHECK(out.values()[i] == doctest::Approx(pure.values[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d forward matches the scalar oracle") {
  Rng rng = stream_rng(21, Stream::kTest, {1});
  const int ci = 3, h = 6, w = 8, co = 4, k = 3;
  const auto in = random_values(ci * h * w, rng);
  const auto wt = random_values(co * ci * k * k, rng, -0.5, 0.5);
  const auto bs = random_values(co, rng, -0.1, 0.1);

  for (int stride : {1, 2}) {
    for (bool reflect : {false, true}) {
      Tape<double> tape;
      auto t_in = tape.constant({ci, h, w}, in);
      auto t_wt = tape.constant({co, ci, k, k}, wt);
      auto t_bs = tape.constant({co}, bs);
      auto out = ad::conv2d(t_in, t_wt, t_bs, stride,
                            reflect ? ad::Padding::kReflect : ad::Padding::kZero);
      const auto want = oracles::conv2d(in, ci, h, w, wt, co, k, bs, stride, reflect);
      REQUIRE(out.values().size() == want.size());
      for (size_t i = 0; i < want.size(); ++i) {
        CHECK(out.values()[i] == doctest::Approx(want[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("elementwise and reduction gradients pass finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = stream_rng(seed, Stream::kTest, {2});
    const ad::Shape shape{2, 3, 4};
    GradCheckInput<double> a{shape, random_values(24, rng)};
    GradCheckInput<double> b{shape, random_values(24, rng)};
    // Keep divisors and sqrt arguments away from zero.
    GradCheckInput<double> pos{shape, random_values(24, rng, 0.5, 3.0)};
    GradCheckInput<double> s{{1}, {rng.uniform(0.5, 2.0)}};

    expect_gradients("add", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(v[0] + v[1]);
    }, {a, b});
    expect_gradients("sub_scalar_broadcast", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(v[0] - v[1]);
    }, {a, s});
    expect_gradients("mul", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(v[0] * v[1]);
    }, {a, b});
    expect_gradients("div", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(v[0] / v[1]);
    }, {a, pos});
    expect_gradients("div_by_scalar", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(v[0] / v[1]);
    }, {a, s});
    expect_gradients("exp", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(ad::exp(v[0]));
    }, {a});
    expect_gradients("sqrt", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(ad::sqrt(v[0]));
    }, {pos});
    expect_gradients("sin", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(ad::sin(v[0]));
    }, {a});
    expect_gradients("cos", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(ad::cos(v[0]));
    }, {a});
    expect_gradients("sigmoid", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(ad::sigmoid(v[0]));
    }, {a});
    expect_gradients("softplus", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(ad::softplus(v[0]));
    }, {a});
    expect_gradients("reduce_mean", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_mean(ad::mul(v[0], v[0]));
    }, {a});

    // Kinked ops: skip coordinates near the kink.
    const auto& av = a.values;
    const auto& bv = b.values;
    expect_gradients("abs", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(ad::abs(v[0]));
    }, {a}, [&](int, std::int64_t j) { return std::abs(av[j]) < 1e-4; });
    expect_gradients("min_elementwise", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(ad::min_elementwise(v[0], v[1]));
    }, {a, b}, [&](int, std::int64_t j) { return std::abs(av[j] - bv[j]) < 1e-4; });
    expect_gradients("clamp", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(ad::clamp(v[0], -1.0, 1.0));
    }, {a}, [&](int, std::int64_t j) {
      return std::abs(std::abs(av[j]) - 1.0) < 1e-4;
    });

    // Masked reduction, both modes; mask fixed inside the builder.
    std::vector<double> mask(24, 0.0);
    for (size_t i = 0; i < mask.size(); i += 2) mask[i] = 1.0;
    expect_gradients("masked_sum", [mask](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::masked_reduce(v[0], t.constant({2, 3, 4}, mask), ad::MaskedReduce::kSum);
    }, {a});
    expect_gradients("masked_mean", [mask](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::masked_reduce(v[0], t.constant({2, 3, 4}, mask), ad::MaskedReduce::kMean);
    }, {a});
  }
}

TEST_CASE("structural op gradients pass finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = stream_rng(seed, Stream::kTest, {3});
    GradCheckInput<double> x{{2, 4, 6}, random_values(48, rng)};
    GradCheckInput<double> m1{{3, 2}, random_values(6, rng)};
    GradCheckInput<double> m2{{2, 4}, random_values(8, rng)};
    std::vector<GradCheckInput<double>> scalars;
    for (int i = 0; i < 4; ++i) scalars.push_back({{1}, {rng.normal()}});

    expect_gradients("slice", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      auto part = ad::slice(v[0], {1, 1, 2}, {1, 2, 3});
      return ad::reduce_sum(ad::mul(part, part));
    }, {x});
    expect_gradients("reshape", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(ad::mul(ad::reshape(v[0], {48}), ad::reshape(v[0], {48})));
    }, {x});
    expect_gradients("matmul_small", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      return ad::reduce_sum(ad::matmul_small(v[0], v[1]));
    }, {m1, m2});
    expect_gradients("stack_scalars", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      auto packed = ad::stack_scalars(t, {v[0], v[1], v[2], v[3]}, {2, 2});
      return ad::reduce_sum(ad::mul(packed, packed));
    }, scalars);
    expect_gradients("upsample_nearest2x", [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
      auto up = ad::upsample_nearest2x(v[0]);
      return ad::reduce_sum(ad::mul(up, up));
    }, {x});
  }
}

TEST_CASE("conv2d gradients pass finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = stream_rng(seed, Stream::kTest, {4});
    GradCheckInput<double> in{{2, 4, 6}, random_values(48, rng)};
    GradCheckInput<double> wt{{3, 2, 3, 3}, random_values(54, rng, -0.5, 0.5)};
    GradCheckInput<double> bs{{3}, random_values(3, rng, -0.2, 0.2)};
    for (int stride : {1, 2}) {
      for (auto padding : {ad::Padding::kZero, ad::Padding::kReflect}) {
        expect_gradients("conv2d",
                         [stride, padding](Tape<double>& t, const std::vector<Tensor<double>>& v) {
                           auto out = ad::conv2d(v[0], v[1], v[2], stride, padding);
                           return ad::reduce_sum(ad::mul(out, out));
                         },
                         {in, wt, bs});
      }
    }
  }
}

TEST_CASE("bilinear gradients pass finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = stream_rng(seed, Stream::kTest, {5});
    GradCheckInput<double> img{{2, 5, 7}, random_values(70, rng, 0.0, 1.0)};
    // Coordinates stay clear of integers so the finite-difference step
    // never crosses a cell boundary (where the derivative is one-sided).
    GradCheckInput<double> u{{6}, {}};
    GradCheckInput<double> v{{6}, {}};
    for (int i = 0; i < 6; ++i) {
      u.values.push_back(rng.uniform(0.0, 5.0) + rng.uniform(0.1, 0.9));
      v.values.push_back(rng.uniform(0.0, 3.0) + rng.uniform(0.1, 0.9));
    }
    expect_gradients("bilinear_sample_diff",
                     [](Tape<double>& t, const std::vector<Tensor<double>>& vars) {
                       auto out = ad::bilinear_sample_diff(vars[0], vars[1], vars[2]);
                       return ad::reduce_sum(ad::mul(out, out));
                     },
                     {img, u, v});
  }
}

TEST_CASE("grad_check flags a broken backward rule") {
  auto result = ad::grad_check<double>(
      [](Tape<double>& t, const std::vector<Tensor<double>>& v) {
        // y = x^2 with a deliberately wrong backward (3x instead of 2x).
        const auto& xv = v[0].values();
        std::vector<double> out(xv.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
        auto y = t.emit({static_cast<int>(out.size())}, std::move(out), true,
                        [xid = v[0].id()](Tape<double>& tt, int self) {
                          const auto& g = tt.node(self).grad;
                          const auto& x = tt.node(xid).values;
                          auto& gx = tt.grad_buf(xid);
                          for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * 3.0 * x[i];
                        });
        return ad::reduce_sum(y);
      },
      {{{3}, {1.0, -2.0, 0.7}}});
  CHECK(result.max_rel_err > 1e-2);
}

TEST_CASE("gradients are bitwise identical across thread counts") {
  // Tensors sized past the serial cutoff so the splits genuinely differ
  // between thread counts.
  auto run = [](int threads) {
    set_num_threads(threads);
    Rng rng = stream_rng(99, Stream::kTest, {6});
    Tape<double> tape;
    auto img = tape.variable({3, 64, 72}, random_values(3 * 64 * 72, rng, 0.0, 1.0));
    auto wt = tape.variable({4, 3, 3, 3}, random_values(108, rng, -0.3, 0.3));
    auto bs = tape.variable({4}, random_values(4, rng, -0.1, 0.1));
    auto u = tape.variable({4, 5}, random_values(20, rng, 0.3, 70.4));
    auto v = tape.variable({4, 5}, random_values(20, rng, 0.3, 62.4));

    auto features = ad::conv2d(img, wt, bs, 2, ad::Padding::kReflect);
    auto up = ad::upsample_nearest2x(features);
    auto sampled = ad::bilinear_sample_diff(ad::sigmoid(up), u, v);
    auto root = ad::reduce_mean(ad::mul(sampled, sampled));
    tape.backward(root);

    std::vector<std::vector<double>> grads{img.grad(), wt.grad(), bs.grad(), u.grad(), v.grad()};
    grads.push_back({root.value()});
    return grads;
  };
  const auto base = run(1);
  for (int threads : {2, 3, 8}) {
    const auto other = run(threads);
    REQUIRE(other.size() == base.size());
    for (size_t i = 0; i < base.size(); ++i) {
      CHECK(other[i] == base[i]);  // bitwise
    }
  }
  set_num_threads(4);
}

TEST_SUITE_END();
