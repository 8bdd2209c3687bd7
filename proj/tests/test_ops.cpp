#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "smallobj/ops.hpp"
#include "smallobj/rng.hpp"
#include "smallobj/tensor.hpp"

using namespace smallobj;

namespace {

Tensor random_tensor(Rng& rng, int c, int h, int w, double lo = -2.0, double hi = 2.0) {
    Tensor t(c, h, w);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// single output element computed directly from the definition
double conv_ref_at(const Tensor& x, const ConvSpec& s, int oc, int oy, int ox) {
    double acc = s.bias[oc];
    for (int ic = 0; ic < s.in_channels; ++ic) {
        for (int ky = 0; ky < s.kernel; ++ky) {
            for (int kx = 0; kx < s.kernel; ++kx) {
                const int iy = oy * s.stride - s.padding + ky * s.dilation;
                const int ix = ox * s.stride - s.padding + kx * s.dilation;
                if (iy < 0 || iy >= x.height() || ix < 0 || ix >= x.width()) continue;
                const std::size_t wi =
                    ((static_cast<std::size_t>(oc) * s.in_channels + ic) * s.kernel + ky) *
                        s.kernel + kx;
                acc += s.weights[wi] * x.at(ic, iy, ix);
            }
        }
    }
    return acc;
}

}  // namespace

TEST_CASE("conv2d output shape follows the dilated formula") {
    Rng rng(101);
    for (int trial = 0; trial < 40; ++trial) {
        const int in_c = rng.uniform_int(1, 4);
        const int out_c = rng.uniform_int(1, 4);
        const int k = 2 * rng.uniform_int(0, 2) + 1;  // 1, 3, 5
        const int stride = rng.uniform_int(1, 3);
        const int dilation = rng.uniform_int(1, 3);
        const int padding = rng.uniform_int(0, 4);
        const int h = rng.uniform_int(1, 16);
        const int w = rng.uniform_int(1, 16);
        const int eff = dilation * (k - 1) + 1;
        if (h + 2 * padding < eff || w + 2 * padding < eff) continue;

        ConvSpec spec = make_conv(in_c, out_c, k, stride, padding, dilation, rng);
        const Tensor x = random_tensor(rng, in_c, h, w);
        const Tensor y = conv2d(x, spec);
        CHECK(y.channels() == out_c);
        CHECK(y.height() == (h + 2 * padding - dilation * (k - 1) - 1) / stride + 1);
        CHECK(y.width() == (w + 2 * padding - dilation * (k - 1) - 1) / stride + 1);
    }
}

TEST_CASE("conv2d matches the direct definition elementwise") {
    Rng rng(102);
    for (int trial = 0; trial < 20; ++trial) {
        const int k = 2 * rng.uniform_int(0, 1) + 1;
        ConvSpec spec = make_conv(rng.uniform_int(1, 3), rng.uniform_int(1, 3), k,
                                  rng.uniform_int(1, 2), rng.uniform_int(0, 2),
                                  rng.uniform_int(1, 2), rng);
        const int side = rng.uniform_int(6, 12);
        const Tensor x = random_tensor(rng, spec.in_channels, side, side);
        const Tensor y = conv2d(x, spec);
        for (int oc = 0; oc < y.channels(); ++oc) {
            for (int oy = 0; oy < y.height(); ++oy) {
                for (int ox = 0; ox < y.width(); ++ox) {
                    CHECK(y.at(oc, oy, ox) ==
                          doctest::Approx(conv_ref_at(x, spec, oc, oy, ox)).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("conv2d is linear in its input") {
    Rng rng(103);
    ConvSpec spec = make_conv(2, 3, 3, 1, 1, 1, rng);
    const Tensor a = random_tensor(rng, 2, 9, 9);
    const Tensor b = random_tensor(rng, 2, 9, 9);
    const double alpha = 0.7, beta = -1.3;

    Tensor mix(2, 9, 9);
    for (std::size_t i = 0; i < mix.size(); ++i)
        mix.data()[i] = alpha * a.data()[i] + beta * b.data()[i];

    // subtract the bias response so the comparison is purely linear
    const Tensor zero_in(2, 9, 9);
    const Tensor bias_map = conv2d(zero_in, spec);
    const Tensor ya = conv2d(a, spec);
    const Tensor yb = conv2d(b, spec);
    const Tensor ym = conv2d(mix, spec);
    for (std::size_t i = 0; i < ym.size(); ++i) {
        const double lhs = ym.data()[i] - bias_map.data()[i];
        const double rhs = alpha * (ya.data()[i] - bias_map.data()[i]) +
                           beta * (yb.data()[i] - bias_map.data()[i]);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
    }
}

TEST_CASE("conv2d is pure: same input, same bits") {
    Rng rng(104);
    ConvSpec spec = make_conv(3, 2, 3, 2, 1, 1, rng);
    const Tensor x = random_tensor(rng, 3, 10, 10);
    const Tensor y1 = conv2d(x, spec);
    const Tensor y2 = conv2d(x, spec);
    CHECK(y1.data() == y2.data());
}

TEST_CASE("conv2d validates channel agreement") {
    Rng rng(105);
    ConvSpec spec = make_conv(3, 2, 3, 1, 1, 1, rng);
    const Tensor x = random_tensor(rng, 2, 8, 8);
    CHECK_THROWS_AS(conv2d(x, spec), std::invalid_argument);
}

TEST_CASE("conv spec validation rejects bad geometry") {
    Rng rng(106);
    CHECK_THROWS_AS(make_conv(1, 1, 2, 1, 0, 1, rng), std::invalid_argument);  // even k
    CHECK_THROWS_AS(make_conv(1, 1, 3, 0, 0, 1, rng), std::invalid_argument);  // stride 0
    CHECK_THROWS_AS(make_conv(0, 1, 3, 1, 0, 1, rng), std::invalid_argument);
    CHECK_THROWS_AS(make_conv(1, 1, 3, 1, 0, 0, rng), std::invalid_argument);  // dilation 0
    CHECK_THROWS_AS(make_conv(1, 1, 3, 1, -1, 1, rng), std::invalid_argument);
}

TEST_CASE("pool2d max and avg on a known grid") {
    Tensor x(1, 4, 4);
    for (int i = 0; i < 16; ++i) x.data()[i] = static_cast<double>(i);
    const Tensor mx = pool2d(x, PoolKind::Max, 2, 2);
    const Tensor av = pool2d(x, PoolKind::Avg, 2, 2);
    REQUIRE(mx.height() == 2);
    REQUIRE(mx.width() == 2);
    CHECK(mx.at(0, 0, 0) == 5.0);
    CHECK(mx.at(0, 0, 1) == 7.0);
    CHECK(mx.at(0, 1, 0) == 13.0);
    CHECK(mx.at(0, 1, 1) == 15.0);
    CHECK(av.at(0, 0, 0) == doctest::Approx(2.5));
    CHECK(av.at(0, 1, 1) == doctest::Approx(12.5));
}

TEST_CASE("global_pool reduces each channel independently") {
    Tensor x(2, 2, 2);
    x.at(0, 0, 0) = 1.0; x.at(0, 0, 1) = 2.0; x.at(0, 1, 0) = 3.0; x.at(0, 1, 1) = 4.0;
    x.at(1, 0, 0) = -1.0; x.at(1, 0, 1) = -2.0; x.at(1, 1, 0) = -3.0; x.at(1, 1, 1) = -4.0;
    const auto mx = global_pool(x, PoolKind::Max);
    const auto av = global_pool(x, PoolKind::Avg);
    REQUIRE(mx.size() == 2);
    CHECK(mx[0] == 4.0);
    CHECK(mx[1] == -1.0);
    CHECK(av[0] == doctest::Approx(2.5));
    CHECK(av[1] == doctest::Approx(-2.5));
}

TEST_CASE("activation scalar values") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(2.0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
    CHECK(sigmoid(-800.0) == doctest::Approx(0.0));   // no overflow
    CHECK(sigmoid(800.0) == doctest::Approx(1.0));
    CHECK(mish(0.0) == 0.0);
    CHECK(mish(1.0) == doctest::Approx(0.8650983882673103).epsilon(1e-15));
    CHECK(std::isfinite(mish(710.0)));                // softplus overflow guard
    CHECK(mish(710.0) == doctest::Approx(710.0));
    CHECK(apply_activation(-3.0, Activation::Relu) == 0.0);
    CHECK(apply_activation(-3.0, Activation::LeakyRelu01) == doctest::Approx(-0.3));
    CHECK(apply_activation(5.0, Activation::LeakyRelu01) == 5.0);
}

TEST_CASE("mish is monotone on a coarse grid") {
    double prev = mish(-6.0);
    for (double x = -5.75; x <= 6.0; x += 0.25) {
        // mish dips below zero near -1 but never decreases after its minimum;
        // check monotonicity only right of it
        if (x >= 0.0) {
            CHECK(mish(x) > prev);
        }
        prev = mish(x);
    }
}

TEST_CASE("activation applies elementwise over the tensor") {
    Rng rng(107);
    const Tensor x = random_tensor(rng, 2, 3, 3);
    const Tensor y = activation(x, Activation::Mish);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(y.data()[i] == mish(x.data()[i]));
}

TEST_CASE("upsample_nearest repeats pixels") {
    Tensor x(1, 2, 2);
    x.at(0, 0, 0) = 1.0; x.at(0, 0, 1) = 2.0; x.at(0, 1, 0) = 3.0; x.at(0, 1, 1) = 4.0;
    const Tensor y = upsample_nearest(x, 2);
    REQUIRE(y.height() == 4);
    REQUIRE(y.width() == 4);
    CHECK(y.at(0, 0, 0) == 1.0);
    CHECK(y.at(0, 0, 1) == 1.0);
    CHECK(y.at(0, 1, 1) == 1.0);
    CHECK(y.at(0, 0, 2) == 2.0);
    CHECK(y.at(0, 2, 0) == 3.0);
    CHECK(y.at(0, 3, 3) == 4.0);
}

TEST_CASE("concat_channels stacks in argument order") {
    Tensor a(1, 2, 2), b(2, 2, 2);
    a.data().assign({1, 2, 3, 4});
    b.data().assign({5, 6, 7, 8, 9, 10, 11, 12});
    const Tensor y = concat_channels({a, b});
    REQUIRE(y.channels() == 3);
    CHECK(y.at(0, 0, 0) == 1.0);
    CHECK(y.at(1, 0, 0) == 5.0);
    CHECK(y.at(2, 1, 1) == 12.0);
    Tensor c(1, 3, 2);
    CHECK_THROWS_AS(concat_channels({a, c}), std::invalid_argument);
}

TEST_CASE("l2_normalize produces unit columns under unit scales") {
    Rng rng(108);
    const Tensor x = random_tensor(rng, 4, 5, 5, 0.1, 3.0);
    const std::vector<double> unit(4, 1.0);
    const Tensor y = l2_normalize(x, unit);
    for (int yy = 0; yy < 5; ++yy) {
        for (int xx = 0; xx < 5; ++xx) {
            double sq = 0.0;
            for (int c = 0; c < 4; ++c) sq += y.at(c, yy, xx) * y.at(c, yy, xx);
            CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    // idempotent once normalized
    const Tensor z = l2_normalize(y, unit);
    for (std::size_t i = 0; i < z.size(); ++i)
        CHECK(z.data()[i] == doctest::Approx(y.data()[i]).epsilon(1e-12));
}

TEST_CASE("l2_normalize applies per-channel scales and guards zero columns") {
    Tensor x(2, 1, 1);
    x.at(0, 0, 0) = 3.0;
    x.at(1, 0, 0) = 4.0;
    const Tensor y = l2_normalize(x, {10.0, 20.0});
    CHECK(y.at(0, 0, 0) == doctest::Approx(6.0));   // 3/5 * 10
    CHECK(y.at(1, 0, 0) == doctest::Approx(16.0));  // 4/5 * 20
    const Tensor zero(2, 1, 1);
    const Tensor z = l2_normalize(zero, {10.0, 20.0});
    CHECK(z.at(0, 0, 0) == 0.0);  // eps guard, no NaN
    CHECK(z.at(1, 0, 0) == 0.0);
}

TEST_CASE("linear computes an affine map") {
    LinearSpec spec;
    spec.in_dim = 2;
    spec.out_dim = 2;
    spec.weights = {1.0, 2.0,   // row 0
                    3.0, 4.0};  // row 1
    spec.bias = {0.5, -0.5};
    const auto y = linear({10.0, 20.0}, spec);
    REQUIRE(y.size() == 2);
    CHECK(y[0] == doctest::Approx(50.5));
    CHECK(y[1] == doctest::Approx(109.5));
    CHECK_THROWS_AS(linear({1.0}, spec), std::invalid_argument);
}

TEST_CASE("make_conv init is He-bounded and f32-exact") {
    Rng rng(109);
    ConvSpec spec = make_conv(8, 4, 3, 1, 1, 1, rng);
    const double bound = std::sqrt(6.0 / (8 * 3 * 3));
    for (double w : spec.weights) {
        CHECK(std::abs(w) <= bound + 1e-7);  // f32 rounding slack
        CHECK(static_cast<double>(static_cast<float>(w)) == w);
    }
    for (double b : spec.bias) CHECK(b == 0.0);
}

TEST_CASE("zero factories give all-zero parameters") {
    const ConvSpec c = make_conv_zero(3, 2, 3, 1, 1, 1);
    for (double w : c.weights) CHECK(w == 0.0);
    const LinearSpec l = make_linear_zero(4, 2);
    for (double w : l.weights) CHECK(w == 0.0);
    for (double b : l.bias) CHECK(b == 0.0);
}
