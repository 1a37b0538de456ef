// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <stdexcept>

#include "doctest.h"
#include "fpq/metrics.hpp"
#include "oracle.hpp"

using fpq::Tensor;

TEST_CASE("metric names round-trip") {
    CHECK(fpq::metric_name(fpq::MetricKind::Mse) == "mse");
    CHECK(fpq::metric_name(fpq::MetricKind::Fisher) == "fisher");
    CHECK(fpq::parse_metric("mse") == fpq::MetricKind::Mse);
    CHECK(fpq::parse_metric("fisher") == fpq::MetricKind::Fisher);
    CHECK_THROWS_AS(fpq::parse_metric("l1"), std::invalid_argument);
}

TEST_CASE("mse_metric is the mean squared difference") {
    Tensor a(1, 2, {1.0, 2.0});
    Tensor b(1, 2, {0.0, 2.0});
    CHECK(fpq::mse_metric(a, b) == 0.5);
    CHECK(fpq::mse_metric(b, b) == 0.0);

    // Quadratic homogeneity.
    Tensor a3(1, 2, {3.0, 6.0});
    Tensor b3(1, 2, {0.0, 6.0});
    CHECK(fpq::mse_metric(a3, b3) == 9.0 * fpq::mse_metric(a, b));

    CHECK_THROWS_AS(fpq::mse_metric(a, Tensor(2, 1, {0.0, 2.0})), std::invalid_argument);
}

TEST_CASE("fisher_metric weights errors by squared gradients") {
    Tensor o_hat(1, 1, {2.0});
    Tensor o_ref(1, 1, {0.0});
    Tensor grad(1, 1, {3.0});
    CHECK(fpq::fisher_metric(o_hat, o_ref, grad) == 36.0);

    Tensor zeros(1, 1, {0.0});
    CHECK(fpq::fisher_metric(o_hat, o_ref, zeros) == 0.0);

    CHECK_THROWS_AS(fpq::fisher_metric(o_hat, o_ref, Tensor(1, 2, {1.0, 1.0})),
                    std::invalid_argument);
}

TEST_CASE("unit gradients reduce fisher to mse times the column count") {
    std::mt19937_64 rng(9);
    for (auto [rows, cols] : {std::pair<std::size_t, std::size_t>{4, 7}, {1, 1}, {16, 3}}) {
        Tensor o_hat(rows, cols);
        Tensor o_ref(rows, cols);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                o_hat.at(r, c) = testutil::uniform_signed(rng, 5.0);
                o_ref.at(r, c) = testutil::uniform_signed(rng, 5.0);
            }
        }
        const Tensor ones(rows, cols, 1.0);
        const double fisher = fpq::fisher_metric(o_hat, o_ref, ones);
        const double mse = fpq::mse_metric(o_hat, o_ref);
        CHECK(fisher == doctest::Approx(mse * static_cast<double>(cols)).epsilon(1e-12));
    }
}

TEST_CASE("metrics are zero only at equality") {
    Tensor a(2, 2, {1.0, 2.0, 3.0, 4.0});
    Tensor b = a;
    b.at(1, 1) += 1e-3;
    CHECK(fpq::mse_metric(a, b) > 0.0);
    const Tensor g(2, 2, 1.0);
    CHECK(fpq::fisher_metric(a, b, g) > 0.0);
}
