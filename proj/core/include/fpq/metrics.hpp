// SPDX-License-Identifier: Apache-2.0
//
// Reconstruction objectives for the layer search: plain mean-squared error
// and a Fisher-diagonal (squared-gradient-weighted) variant. Both are used
// only to rank candidate schemes within one layer, so each fixes its own
// normalization: MSE averages over all elements, the Fisher metric sums over
// output features and averages over samples (rows). With unit gradients
// fisher_metric therefore equals mse_metric times the column count.

#pragma once

#include <stdexcept>
#include <string>

#include "fpq/tensor.hpp"

namespace fpq {

enum class MetricKind {
    Mse,
    Fisher,
};

std::string metric_name(MetricKind kind);
MetricKind parse_metric(const std::string& name);

// Raised when a metric's inputs are not available (Fisher without a stored
// gradient); callers decide whether to fall back to MSE.
class MetricUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Mean of squared elementwise differences.
double mse_metric(const Tensor& o_hat, const Tensor& o_ref);

// Mean over rows of the gradient-weighted squared error
// sum_j grad[i,j]^2 * (o_hat[i,j] - o_ref[i,j])^2.
double fisher_metric(const Tensor& o_hat, const Tensor& o_ref, const Tensor& grad);

}  // namespace fpq
