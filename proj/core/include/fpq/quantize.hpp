// SPDX-License-Identifier: Apache-2.0
//
// Whole-tensor quantization: granularities compatible with efficient matrix
// multiplication, MinMax range initialization, the symmetric INT baseline,
// per-channel activation biases and the pre-shifted exponent-bias split.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "fpq/format.hpp"
#include "fpq/tensor.hpp"

namespace fpq {

// Scale-sharing group for one matmul operand. Only granularities whose
// scaling factor is constant along the reduction dimension are usable in a
// quantized matmul: per-tensor or per-token (row) for activations,
// per-tensor or per-channel (output column) for weights. Per-channel
// *activation* scales are reachable only through ChannelShiftedScheme.
enum class Granularity {
    PerTensor,
    PerToken,    // one bias per row
    PerChannel,  // one bias per column
};

std::string granularity_name(Granularity g);

// One operand's quantization recipe: a format plus one bias per group.
struct TensorScheme {
    FpFormat format;
    Granularity granularity = Granularity::PerTensor;
    std::vector<double> bias;  // size 1, rows or cols depending on granularity
};

// Per-channel activation quantization expressed as a shared tensor-wise real
// bias rho plus one small integer offset per channel; the effective bias of
// channel j is rho + channel_bias[j]. The integer offsets are what gets
// folded into the weight rows ahead of inference.
struct ChannelShiftedScheme {
    FpFormat format;
    double rho = 0.0;
    std::vector<int> channel_bias;

    double effective_bias(std::size_t channel) const {
        return rho + static_cast<double>(channel_bias[channel]);
    }
};

// Number of bias entries `g` requires for a tensor of the given shape.
std::size_t group_count(Granularity g, const Tensor& t);

// Largest absolute value per group, in group order (one entry for PerTensor,
// rows entries for PerToken, cols for PerChannel). Throws std::domain_error
// on an empty tensor.
std::vector<double> group_abs_max(const Tensor& t, Granularity g);

// MinMax bias per group: bias_from_clip_max(fmt, max|group|). All-zero
// groups take the sentinel bias 0 (scale 1) and quantize to zeros.
// Throws std::domain_error on an empty tensor.
std::vector<double> minmax_bias(const Tensor& t, const FpFormat& fmt, Granularity g);

// Elementwise quantization with one bias per group. The bias arity must
// match the granularity (std::invalid_argument otherwise).
Tensor quantize_tensor(const Tensor& t, const FpFormat& fmt, const std::vector<double>& bias,
                       Granularity g);
Tensor quantize_tensor(const Tensor& t, const TensorScheme& scheme);

// Per-channel activation quantization under a channel-shifted scheme; equal,
// element for element, to quantizing channel j with scalar bias
// rho + channel_bias[j].
Tensor quantize_tensor(const Tensor& t, const ChannelShiftedScheme& scheme);

// Symmetric signed uniform quantizer with the given scale and
// levels = 2^(bits-1) - 1: scale * round(clip(x / scale, -levels, +levels)).
double quantize_value_int(double x, double scale, int levels);

// MinMax INT baseline: scale = max|group| / (2^(bits-1) - 1) per group.
// All-zero groups quantize to zeros. Requires bits >= 2.
Tensor quantize_tensor_int(const Tensor& t, int bits, Granularity g);

// Initial per-channel activation bias from each channel's absolute maximum;
// the per-column analogue of minmax_bias. Zero channels take the sentinel.
std::vector<double> per_channel_bias(const Tensor& activations, const FpFormat& fmt);

// Splits per-channel biases into a shared real bias rho plus integer
// offsets: channel_bias[j] = clip(round(bias[j] - rho), 0, 2^e - 1), ties to
// even. Offsets hitting the clip bounds no longer reproduce bias[j] exactly.
ChannelShiftedScheme split_channel_bias(const std::vector<double>& biases, double rho,
                                        const FpFormat& fmt);

// Scales weight row j by 2^(-channel_bias[j]), folding the per-channel
// activation offsets into the weight operand. One-time calibration cost;
// row count must equal the channel count.
Tensor reparam_weight_rows(const Tensor& weight, const ChannelShiftedScheme& scheme);

// Mean-squared quantization error of every format of the given width (plus
// the INT baseline, keyed "INT<bits>") under per-tensor MinMax ranges.
std::map<std::string, double> error_scan(const Tensor& t, int bit_width);

}  // namespace fpq
