// SPDX-License-Identifier: Apache-2.0
//
// Quantized matrix multiplication in both execution forms: scale-extracted
// per-tensor/per-token/per-channel fake-quant products, and the pre-shifted
// path where per-channel activation biases have been folded into weight
// rows. Products are computed in double precision over dequantized values.

#pragma once

#include <string>
#include <variant>

#include "fpq/quantize.hpp"
#include "fpq/tensor.hpp"

namespace fpq {

enum class LayerKind {
    WeightMatmul,  // activation times trained weight (fully-connected)
    ActActMatmul,  // activation times activation (attention products)
};

std::string layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

// Quantization recipe for one matmul. The activation side may carry a
// channel-shifted scheme only for weight layers; the y side is per-tensor or
// per-channel so its scale is shared along the reduction dimension.
struct MatmulPlan {
    std::variant<TensorScheme, ChannelShiftedScheme> activation;
    TensorScheme weight;
    LayerKind kind = LayerKind::WeightMatmul;
};

// Enforces the granularity and arity rules of `plan` against concrete
// operand shapes; throws std::invalid_argument on violation.
void validate_plan(const MatmulPlan& plan, const Tensor& x, const Tensor& y);

// Quantizes both operands per `plan` and returns their double-precision
// product. Bit-identical to quantize-then-multiply by construction.
Tensor matmul_quantized(const Tensor& x, const Tensor& y, const MatmulPlan& plan);

// Quantizes `w`, then folds the activation channel offsets into its rows.
// The result is the weight operand consumed by matmul_preshifted.
Tensor precompute_preshifted_weights(const Tensor& w, const TensorScheme& weight_scheme,
                                     const ChannelShiftedScheme& shifted);

// Pre-shifted inference path: activations are quantized per channel under
// `shifted` but carried at the shared tensor-wise scale 2^(-rho), with the
// per-channel factor 2^(channel_bias[j]) re-applied exactly; the offsets'
// inverses already live in `w_pre`'s rows. Matches the per-channel
// activation product of matmul_quantized bit for bit.
Tensor matmul_preshifted(const Tensor& x, const Tensor& w_pre,
                         const ChannelShiftedScheme& shifted,
                         const TensorScheme& weight_scheme);

}  // namespace fpq
