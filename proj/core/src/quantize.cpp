// SPDX-License-Identifier: Apache-2.0

#include "fpq/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fpq {

std::string granularity_name(Granularity g) {
    switch (g) {
        case Granularity::PerTensor: return "per-tensor";
        case Granularity::PerToken: return "per-token";
        case Granularity::PerChannel: return "per-channel";
    }
    throw std::invalid_argument("unknown granularity");
}

std::size_t group_count(Granularity g, const Tensor& t) {
    switch (g) {
        case Granularity::PerTensor: return 1;
        case Granularity::PerToken: return t.rows();
        case Granularity::PerChannel: return t.cols();
    }
    throw std::invalid_argument("unknown granularity");
}

std::vector<double> group_abs_max(const Tensor& t, Granularity g) {
    if (t.empty()) throw std::domain_error("group_abs_max: empty tensor");
    std::vector<double> maxima(group_count(g, t), 0.0);
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) {
            const double a = std::fabs(t.at(r, c));
            std::size_t k = 0;
            if (g == Granularity::PerToken) k = r;
            else if (g == Granularity::PerChannel) k = c;
            maxima[k] = std::fmax(maxima[k], a);
        }
    }
    return maxima;
}

namespace {

void check_bias_arity(const Tensor& t, const std::vector<double>& bias, Granularity g) {
    if (bias.size() != group_count(g, t))
        throw std::invalid_argument("bias count " + std::to_string(bias.size()) +
                                    " does not match " + granularity_name(g) + " group count " +
                                    std::to_string(group_count(g, t)));
}

}  // namespace

std::vector<double> minmax_bias(const Tensor& t, const FpFormat& fmt, Granularity g) {
    if (t.empty()) throw std::domain_error("minmax_bias: empty tensor");
    validate_format(fmt);
    std::vector<double> bias = group_abs_max(t, g);
    for (double& b : bias) b = b > 0.0 ? bias_from_clip_max(fmt, b) : 0.0;
    return bias;
}

Tensor quantize_tensor(const Tensor& t, const FpFormat& fmt, const std::vector<double>& bias,
                       Granularity g) {
    check_bias_arity(t, bias, g);
    Tensor out(t.rows(), t.cols());
    QuantScheme scheme{fmt, bias[0]};
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (g == Granularity::PerToken) scheme.bias = bias[r];
        for (std::size_t c = 0; c < t.cols(); ++c) {
            if (g == Granularity::PerChannel) scheme.bias = bias[c];
            out.at(r, c) = quantize_value(t.at(r, c), scheme);
        }
    }
    return out;
}

Tensor quantize_tensor(const Tensor& t, const TensorScheme& scheme) {
    return quantize_tensor(t, scheme.format, scheme.bias, scheme.granularity);
}

Tensor quantize_tensor(const Tensor& t, const ChannelShiftedScheme& scheme) {
    if (scheme.channel_bias.size() != t.cols())
        throw std::invalid_argument("channel bias count " +
                                    std::to_string(scheme.channel_bias.size()) +
                                    " does not match channel count " + std::to_string(t.cols()));
    std::vector<double> bias(t.cols());
    for (std::size_t c = 0; c < t.cols(); ++c) bias[c] = scheme.effective_bias(c);
    return quantize_tensor(t, scheme.format, bias, Granularity::PerChannel);
}

double quantize_value_int(double x, double scale, int levels) {
    if (!std::isfinite(x)) throw std::domain_error("quantize_value_int: non-finite input");
    if (!(scale > 0.0)) throw std::domain_error("quantize_value_int: scale must be positive");
    const double lo = static_cast<double>(-levels);
    const double hi = static_cast<double>(levels);
    return scale * std::nearbyint(std::fmin(std::fmax(x / scale, lo), hi));
}

Tensor quantize_tensor_int(const Tensor& t, int bits, Granularity g) {
    if (bits < 2) throw std::invalid_argument("INT quantization requires at least 2 bits");
    if (t.empty()) throw std::domain_error("quantize_tensor_int: empty tensor");
    const int levels = (1 << (bits - 1)) - 1;
    std::vector<double> scale = group_abs_max(t, g);
    // An all-zero group carries no information; any positive scale maps it
    // back to zeros.
    for (double& s : scale) s = s > 0.0 ? s / levels : 1.0;
    Tensor out(t.rows(), t.cols());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) {
            std::size_t k = 0;
            if (g == Granularity::PerToken) k = r;
            else if (g == Granularity::PerChannel) k = c;
            out.at(r, c) = quantize_value_int(t.at(r, c), scale[k], levels);
        }
    }
    return out;
}

std::vector<double> per_channel_bias(const Tensor& activations, const FpFormat& fmt) {
    return minmax_bias(activations, fmt, Granularity::PerChannel);
}

ChannelShiftedScheme split_channel_bias(const std::vector<double>& biases, double rho,
                                        const FpFormat& fmt) {
    validate_format(fmt);
    const double top = std::exp2(static_cast<double>(fmt.exponent_bits)) - 1.0;
    ChannelShiftedScheme scheme{fmt, rho, {}};
    scheme.channel_bias.reserve(biases.size());
    for (double b : biases) {
        const double offset = std::fmin(std::fmax(std::nearbyint(b - rho), 0.0), top);
        scheme.channel_bias.push_back(static_cast<int>(offset));
    }
    return scheme;
}

Tensor reparam_weight_rows(const Tensor& weight, const ChannelShiftedScheme& scheme) {
    if (scheme.channel_bias.size() != weight.rows())
        throw std::invalid_argument("channel bias count " +
                                    std::to_string(scheme.channel_bias.size()) +
                                    " does not match weight row count " +
                                    std::to_string(weight.rows()));
    Tensor out(weight.rows(), weight.cols());
    for (std::size_t r = 0; r < weight.rows(); ++r) {
        const int shift = scheme.channel_bias[r];
        for (std::size_t c = 0; c < weight.cols(); ++c)
            out.at(r, c) = std::ldexp(weight.at(r, c), -shift);
    }
    return out;
}

namespace {

double mean_squared_error(const Tensor& a, const Tensor& b) {
    double sum = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        sum += d * d;
    }
    return sum / static_cast<double>(av.size());
}

}  // namespace

std::map<std::string, double> error_scan(const Tensor& t, int bit_width) {
    std::map<std::string, double> errors;
    for (const FpFormat& fmt : format_space(bit_width)) {
        const auto bias = minmax_bias(t, fmt, Granularity::PerTensor);
        errors[format_name(fmt)] = mean_squared_error(quantize_tensor(t, fmt, bias,
                                                                      Granularity::PerTensor),
                                                      t);
    }
    errors["INT" + std::to_string(bit_width)] =
        mean_squared_error(quantize_tensor_int(t, bit_width, Granularity::PerTensor), t);
    return errors;
}

}  // namespace fpq
