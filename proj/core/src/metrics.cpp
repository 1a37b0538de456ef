// SPDX-License-Identifier: Apache-2.0

#include "fpq/metrics.hpp"

#include <stdexcept>

namespace fpq {

std::string metric_name(MetricKind kind) {
    switch (kind) {
        case MetricKind::Mse: return "mse";
        case MetricKind::Fisher: return "fisher";
    }
    throw std::invalid_argument("unknown metric kind");
}

MetricKind parse_metric(const std::string& name) {
    if (name == "mse") return MetricKind::Mse;
    if (name == "fisher") return MetricKind::Fisher;
    throw std::invalid_argument("unknown metric '" + name + "' (expected mse or fisher)");
}

double mse_metric(const Tensor& o_hat, const Tensor& o_ref) {
    if (!o_hat.same_shape(o_ref)) throw std::invalid_argument("mse_metric: shape mismatch");
    if (o_hat.empty()) return 0.0;
    double sum = 0.0;
    auto a = o_hat.values();
    auto b = o_ref.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

double fisher_metric(const Tensor& o_hat, const Tensor& o_ref, const Tensor& grad) {
    if (!o_hat.same_shape(o_ref) || !o_hat.same_shape(grad))
        throw std::invalid_argument("fisher_metric: shape mismatch");
    if (o_hat.empty()) return 0.0;
    double sum = 0.0;
    auto a = o_hat.values();
    auto b = o_ref.values();
    auto g = grad.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += g[i] * g[i] * d * d;
    }
    return sum / static_cast<double>(o_hat.rows());
}

}  // namespace fpq
