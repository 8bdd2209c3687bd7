#include "doctest.h"

#include <limits>
#include <stdexcept>
#include <vector>

#include "smallobj/rng.hpp"
#include "smallobj/tensor.hpp"

using namespace smallobj;

TEST_CASE("tensor zero-filled construction") {
    Tensor t(2, 3, 4);
    CHECK(t.channels() == 2);
    CHECK(t.height() == 3);
    CHECK(t.width() == 4);
    CHECK(t.size() == 24);
    for (double v : t.data()) CHECK(v == 0.0);
}

TEST_CASE("tensor rejects non-positive dims") {
    CHECK_THROWS_AS(Tensor(0, 3, 4), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(2, -1, 4), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(2, 3, 0), std::invalid_argument);
}

TEST_CASE("tensor rejects mismatched data length") {
    CHECK_THROWS_AS(Tensor(2, 2, 2, std::vector<double>(7, 0.0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(Tensor(2, 2, 2, std::vector<double>(9, 0.0)),
                    std::invalid_argument);
    CHECK_NOTHROW(Tensor(2, 2, 2, std::vector<double>(8, 0.0)));
}

TEST_CASE("tensor rejects non-finite data") {
    std::vector<double> bad(8, 0.0);
    bad[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(Tensor(2, 2, 2, bad), std::invalid_argument);
    bad[3] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(Tensor(2, 2, 2, bad), std::invalid_argument);
}

TEST_CASE("at() follows the channel-major layout") {
    // fill via the raw vector, read back through at(): index = (c*h + y)*w + x
    Rng rng(41);
    Tensor t(3, 5, 7);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<double>(i);
    for (int trial = 0; trial < 50; ++trial) {
        const int c = rng.uniform_int(0, 2);
        const int y = rng.uniform_int(0, 4);
        const int x = rng.uniform_int(0, 6);
        CHECK(t.at(c, y, x) == static_cast<double>((c * 5 + y) * 7 + x));
    }
}

TEST_CASE("at() is writable and round-trips") {
    Tensor t(1, 2, 2);
    t.at(0, 1, 1) = 2.5;
    CHECK(t.at(0, 1, 1) == 2.5);
    CHECK(t.data()[3] == 2.5);
}

TEST_CASE("same_shape compares all three dims") {
    Tensor a(2, 3, 4), b(2, 3, 4), c(2, 4, 3), d(1, 3, 4);
    CHECK(a.same_shape(b));
    CHECK(!a.same_shape(c));
    CHECK(!a.same_shape(d));
}

TEST_CASE("require_finite names the offender") {
    CHECK_NOTHROW(require_finite({1.0, -2.0, 0.0}, "ok"));
    std::vector<double> bad{1.0, std::numeric_limits<double>::quiet_NaN()};
    CHECK_THROWS_WITH_AS(require_finite(bad, "weights"),
                         "weights: non-finite value", std::invalid_argument);
}
