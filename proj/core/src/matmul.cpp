// SPDX-License-Identifier: Apache-2.0

#include "fpq/matmul.hpp"

#include <cmath>
#include <stdexcept>

namespace fpq {

std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::WeightMatmul: return "weight-matmul";
        case LayerKind::ActActMatmul: return "activation-activation";
    }
    throw std::invalid_argument("unknown layer kind");
}

LayerKind parse_layer_kind(const std::string& name) {
    if (name == "weight-matmul") return LayerKind::WeightMatmul;
    if (name == "activation-activation") return LayerKind::ActActMatmul;
    throw std::invalid_argument("unknown layer kind '" + name + "'");
}

namespace {

void check_operand_scheme(const TensorScheme& scheme, const Tensor& t, bool is_activation,
                          const char* side) {
    const bool allowed = scheme.granularity == Granularity::PerTensor ||
                         (is_activation ? scheme.granularity == Granularity::PerToken
                                        : scheme.granularity == Granularity::PerChannel);
    if (!allowed)
        throw std::invalid_argument(std::string(side) + " operand cannot use " +
                                    granularity_name(scheme.granularity) +
                                    " granularity: its scale must be constant along the "
                                    "reduction dimension");
    if (scheme.bias.size() != group_count(scheme.granularity, t))
        throw std::invalid_argument(std::string(side) + " scheme bias arity does not match "
                                                        "operand shape");
}

}  // namespace

void validate_plan(const MatmulPlan& plan, const Tensor& x, const Tensor& y) {
    if (x.cols() != y.rows())
        throw std::invalid_argument("matmul plan: inner dimensions disagree");
    if (const auto* shifted = std::get_if<ChannelShiftedScheme>(&plan.activation)) {
        if (plan.kind != LayerKind::WeightMatmul)
            throw std::invalid_argument("channel-shifted activations apply only to "
                                        "weight-matmul layers");
        if (shifted->channel_bias.size() != x.cols())
            throw std::invalid_argument("channel-shifted scheme arity does not match "
                                        "activation channel count");
    } else {
        check_operand_scheme(std::get<TensorScheme>(plan.activation), x, true, "activation");
    }
    check_operand_scheme(plan.weight, y, false, "y");
}

Tensor matmul_quantized(const Tensor& x, const Tensor& y, const MatmulPlan& plan) {
    validate_plan(plan, x, y);
    Tensor x_hat = std::holds_alternative<ChannelShiftedScheme>(plan.activation)
                       ? quantize_tensor(x, std::get<ChannelShiftedScheme>(plan.activation))
                       : quantize_tensor(x, std::get<TensorScheme>(plan.activation));
    Tensor y_hat = quantize_tensor(y, plan.weight);
    return matmul(x_hat, y_hat);
}

Tensor precompute_preshifted_weights(const Tensor& w, const TensorScheme& weight_scheme,
                                     const ChannelShiftedScheme& shifted) {
    return reparam_weight_rows(quantize_tensor(w, weight_scheme), shifted);
}

Tensor matmul_preshifted(const Tensor& x, const Tensor& w_pre,
                         const ChannelShiftedScheme& shifted,
                         const TensorScheme& weight_scheme) {
    if (shifted.channel_bias.empty() && x.cols() != 0)
        throw std::invalid_argument("matmul_preshifted: scheme carries no channel offsets");
    if (shifted.channel_bias.size() != x.cols())
        throw std::invalid_argument("matmul_preshifted: scheme arity does not match "
                                    "activation channel count");
    if (x.cols() != w_pre.rows())
        throw std::invalid_argument("matmul_preshifted: inner dimensions disagree");
    if (weight_scheme.bias.size() != group_count(weight_scheme.granularity, w_pre))
        throw std::invalid_argument("matmul_preshifted: weight scheme arity does not match "
                                    "pre-shifted weight shape");

    // Codes at the shared scale 2^(-rho): quantize channel j at its effective
    // bias, then re-apply 2^(channel_bias[j]) exactly. The matching inverse
    // factor sits in w_pre's row j, so every product term equals the
    // per-channel path's term exactly.
    Tensor x_shifted(x.rows(), x.cols());
    QuantScheme scheme{shifted.format, 0.0};
    for (std::size_t c = 0; c < x.cols(); ++c) {
        scheme.bias = shifted.effective_bias(c);
        const int shift = shifted.channel_bias[c];
        for (std::size_t r = 0; r < x.rows(); ++r)
            x_shifted.at(r, c) = std::ldexp(quantize_value(x.at(r, c), scheme), shift);
    }
    return matmul(x_shifted, w_pre);
}

}  // namespace fpq
