// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fpq/format.hpp"
#include "oracle.hpp"

using fpq::FpFormat;
using fpq::QuantScheme;

namespace {

// Number of representable doubles strictly between a and b.
std::int64_t ulps_apart(double a, double b) {
    std::int64_t n = 0;
    double lo = std::fmin(a, b);
    const double hi = std::fmax(a, b);
    while (lo < hi && n <= 64) {
        lo = std::nextafter(lo, std::numeric_limits<double>::infinity());
        ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("format names parse and print") {
    CHECK(fpq::format_name({2, 1}) == "E2M1");
    CHECK(fpq::format_name({4, 3}) == "E4M3");
    CHECK(fpq::parse_format("E2M1") == FpFormat{2, 1});
    CHECK(fpq::parse_format("e5m2") == FpFormat{5, 2});
    CHECK(fpq::parse_format("E10M0") == FpFormat{10, 0});
    CHECK_THROWS_AS(fpq::parse_format("E0M3"), std::invalid_argument);
    CHECK_THROWS_AS(fpq::parse_format("EM1"), std::invalid_argument);
    CHECK_THROWS_AS(fpq::parse_format("E2M"), std::invalid_argument);
    CHECK_THROWS_AS(fpq::parse_format("FP4"), std::invalid_argument);
    CHECK_THROWS_AS(fpq::parse_format("E2M-1"), std::invalid_argument);
    CHECK(FpFormat{2, 1}.bit_width() == 4);
    CHECK(FpFormat{1, 0}.bit_width() == 2);
}

TEST_CASE("clip_max evaluates the signed range top") {
    CHECK(fpq::clip_max({2, 1}, 1.0) == 6.0);
    CHECK(fpq::clip_max({4, 3}, 7.0) == 480.0);
    CHECK(fpq::clip_max({1, 2}, 0.0) == 3.5);
    CHECK(fpq::clip_max({2, 1}, 0.0) == 12.0);
    // Real-valued biases shift the range continuously.
    CHECK(fpq::clip_max({2, 1}, 2.0) == 3.0);
    CHECK(fpq::clip_max({2, 1}, -1.0) == 24.0);
}

TEST_CASE("bias_from_clip_max inverts clip_max") {
    CHECK(fpq::bias_from_clip_max({2, 1}, 6.0) == 1.0);
    CHECK(fpq::bias_from_clip_max({4, 3}, 480.0) == 7.0);
    CHECK(fpq::bias_from_clip_max({2, 1}, 12.0) == 0.0);
    CHECK_THROWS_AS(fpq::bias_from_clip_max({2, 1}, 0.0), std::domain_error);
    CHECK_THROWS_AS(fpq::bias_from_clip_max({2, 1}, -3.0), std::domain_error);
}

TEST_CASE("clip_max and bias_from_clip_max round-trip tightly") {
    std::mt19937_64 rng(11);
    for (const FpFormat& fmt : testutil::oracle_formats()) {
        for (int i = 0; i < 200; ++i) {
            // The inversion runs through exp2 and log2, so its error is
            // absolute at the scale of the exponent range, not a fixed ulp
            // count of the (possibly tiny) bias.
            const double bias = testutil::uniform_signed(rng, 8.0);
            const double tol =
                (std::exp2(static_cast<double>(fmt.exponent_bits)) + std::fabs(bias)) *
                0x1.0p-50;
            const double qmax = fpq::clip_max(fmt, bias);
            const double back = fpq::bias_from_clip_max(fmt, qmax);
            CAPTURE(fpq::format_name(fmt));
            CAPTURE(bias);
            CHECK(std::fabs(back - bias) <= tol);

            const double q = std::exp(testutil::uniform_signed(rng, 4.0));
            const double b2 = fpq::bias_from_clip_max(fmt, q);
            CHECK(ulps_apart(q, fpq::clip_max(fmt, b2)) <= 16);
        }
    }
}

TEST_CASE("unit_grid enumerates the representable magnitudes") {
    CHECK(fpq::unit_grid({2, 1}) == std::vector<double>{0, 1, 2, 3, 4, 6, 8, 12});
    CHECK(fpq::unit_grid({1, 2}) == std::vector<double>{0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5});
    CHECK(fpq::unit_grid({3, 0}) == std::vector<double>{0, 2, 4, 8, 16, 32, 64, 128});

    for (const FpFormat& fmt : testutil::oracle_formats()) {
        const auto grid = fpq::unit_grid(fmt);
        CHECK(grid == testutil::decode_grid(fmt));
        CHECK(grid.front() == 0.0);
        CHECK(grid.back() == fpq::clip_max(fmt, 0.0));
        CHECK(std::is_sorted(grid.begin(), grid.end()));
        CHECK(std::adjacent_find(grid.begin(), grid.end()) == grid.end());
    }
}

TEST_CASE("format_space lists candidates widest exponent first") {
    using V = std::vector<FpFormat>;
    CHECK(fpq::format_space(4) == V{{3, 0}, {2, 1}, {1, 2}});
    CHECK(fpq::format_space(6) == V{{4, 1}, {3, 2}, {2, 3}, {1, 4}});
    CHECK(fpq::format_space(8) == V{{6, 1}, {5, 2}, {4, 3}, {3, 4}, {2, 5}, {1, 6}});
    CHECK(fpq::format_space(3) == V{{2, 0}, {1, 1}});
    CHECK_THROWS_AS(fpq::format_space(2), std::domain_error);
    CHECK_THROWS_AS(fpq::format_space(0), std::domain_error);
}

TEST_CASE("step_size follows the binade of the scaled input") {
    CHECK(fpq::step_size(5.0, {2, 2}, 0.0) == 1.0);
    CHECK(fpq::step_size(1.1, {2, 2}, 0.0) == 0.5);
    CHECK(fpq::step_size(0.0, {2, 2}, 0.0) == 0.5);
    CHECK(fpq::step_size(0.0, {3, 1}, 2.5) == 1.0);
    // The bias moves the binade: at bias -1 the scaled magnitude is 2.5.
    CHECK(fpq::step_size(5.0, {2, 2}, -1.0) == 0.5);
}

TEST_CASE("quantize_value frozen scalar cases") {
    const QuantScheme e2m1{{2, 1}, 0.0};
    CHECK(fpq::quantize_value(2.4, e2m1) == 2.0);
    CHECK(fpq::quantize_value(-13.0, e2m1) == -12.0);
    CHECK(fpq::quantize_value(0.0, e2m1) == 0.0);
    CHECK(fpq::quantize_value(2.5, e2m1) == 2.0);   // tie, even mantissa
    CHECK(fpq::quantize_value(3.5, e2m1) == 4.0);   // tie, even again
    CHECK(fpq::quantize_value(5.0, e2m1) == 4.0);   // tie between 4 and 6
    CHECK(fpq::quantize_value(0.49, e2m1) == 0.0);
    CHECK(fpq::quantize_value(0.51, e2m1) == 1.0);
    CHECK_THROWS_AS(fpq::quantize_value(std::nan(""), e2m1), std::domain_error);
    CHECK_THROWS_AS(fpq::quantize_value(std::numeric_limits<double>::infinity(), e2m1),
                    std::domain_error);
}

TEST_CASE("grid-oracle equivalence across formats and biases") {
    std::mt19937_64 rng(2024);
    for (const FpFormat& fmt : testutil::oracle_formats()) {
        const auto grid = testutil::decode_grid(fmt);
        for (double bias : testutil::oracle_biases()) {
            const QuantScheme scheme{fmt, bias};
            const double span = 1.25 * fpq::clip_max(fmt, bias);
            int mismatches = 0;
            for (int i = 0; i < 2000; ++i) {
                const double x = testutil::uniform_signed(rng, span);
                const double got = fpq::quantize_value(x, scheme);
                const double want = testutil::quantize_oracle(x, scheme, grid);
                if (got != want) ++mismatches;
            }
            CAPTURE(fpq::format_name(fmt));
            CAPTURE(bias);
            CHECK(mismatches == 0);
        }
    }
}

TEST_CASE("shipped reference quantizer agrees with quantize_value") {
    std::mt19937_64 rng(77);
    for (const FpFormat& fmt : testutil::oracle_formats()) {
        for (double bias : {-1.0, 0.0, 3.25}) {
            const QuantScheme scheme{fmt, bias};
            const double span = 1.25 * fpq::clip_max(fmt, bias);
            for (int i = 0; i < 500; ++i) {
                const double x = testutil::uniform_signed(rng, span);
                CHECK(fpq::quantize_value(x, scheme) == fpq::quantize_value_reference(x, scheme));
            }
        }
    }
}

TEST_CASE("every grid point quantizes to itself") {
    for (const FpFormat& fmt : testutil::oracle_formats()) {
        for (double bias : testutil::oracle_biases()) {
            const QuantScheme scheme{fmt, bias};
            const double alpha = std::exp2(-bias);
            for (double g : fpq::unit_grid(fmt)) {
                const double point = alpha * g;
                CAPTURE(fpq::format_name(fmt));
                CAPTURE(bias);
                CAPTURE(point);
                CHECK(fpq::quantize_value(point, scheme) == point);
                CHECK(fpq::quantize_value(-point, scheme) == -point);
            }
        }
    }
}

TEST_CASE("quantization is odd-symmetric") {
    std::mt19937_64 rng(5);
    for (const FpFormat& fmt : testutil::oracle_formats()) {
        const QuantScheme scheme{fmt, 0.75};
        const double span = 1.25 * fpq::clip_max(fmt, scheme.bias);
        for (int i = 0; i < 1000; ++i) {
            const double x = testutil::uniform_signed(rng, span);
            CHECK(fpq::quantize_value(-x, scheme) == -fpq::quantize_value(x, scheme));
        }
    }
}

TEST_CASE("quantization is monotone") {
    std::mt19937_64 rng(6);
    for (const FpFormat& fmt : testutil::oracle_formats()) {
        const QuantScheme scheme{fmt, -0.5};
        const double span = 1.25 * fpq::clip_max(fmt, scheme.bias);
        std::vector<double> xs(512);
        for (double& x : xs) x = testutil::uniform_signed(rng, span);
        std::sort(xs.begin(), xs.end());
        double prev = -std::numeric_limits<double>::infinity();
        for (double x : xs) {
            const double q = fpq::quantize_value(x, scheme);
            CHECK(q >= prev);
            prev = q;
        }
    }
}

TEST_CASE("e=1 formats quantize on a uniform grid") {
    for (int m = 0; m <= 3; ++m) {
        const auto grid = fpq::unit_grid({1, m});
        const double step = std::exp2(1 - m);
        for (std::size_t i = 0; i < grid.size(); ++i)
            CHECK(grid[i] == static_cast<double>(i) * step);
    }
}
