// SPDX-License-Identifier: Apache-2.0
//
// Joint format + clipping-bias search per layer: greedy coordinate descent
// over candidate formats and gamma-scaled bias grids, in the plain
// (tensor/token-scaled) form and the pre-shifted per-channel form, plus the
// bundle-level pipeline that searches all layers independently against their
// stored full-precision outputs.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fpq/bundle.hpp"
#include "fpq/matmul.hpp"
#include "fpq/metrics.hpp"
#include "fpq/quantize.hpp"
#include "fpq/tensor.hpp"

namespace fpq {

struct SearchConfig {
    double gamma1 = 0.01;  // lower grid factor
    double gamma2 = 1.2;   // upper grid factor
    int intervals = 100;   // grid candidates per sweep = intervals + 1
    int rounds = 3;
    int weight_bits = 8;
    int act_bits = 8;
    MetricKind metric = MetricKind::Mse;
    bool preshift = false;
    Granularity act_granularity = Granularity::PerTensor;  // PerTensor or PerToken
};

// Throws std::invalid_argument unless 0 < gamma1 < gamma2, intervals >= 1,
// rounds >= 1, both bit widths >= 3 and the activation granularity is
// per-tensor or per-token.
void validate_config(const SearchConfig& config);

// One reconstruction unit: operands, stored full-precision output, optional
// output gradient and the layer kind.
struct LayerTask {
    std::string name;
    Tensor x;
    Tensor y;
    Tensor o_ref;
    std::optional<Tensor> grad;
    LayerKind kind = LayerKind::WeightMatmul;
};

// Materializes one bundle layer as a task (copies the tensors).
LayerTask make_layer_task(const CalibrationBundle& bundle, const BundleLayer& layer);

struct SearchResult {
    std::variant<TensorScheme, ChannelShiftedScheme> act_scheme;
    TensorScheme weight_scheme;
    MetricKind metric_used = MetricKind::Mse;
    bool metric_fallback = false;  // Fisher requested but no gradient stored
    double metric_init = 0.0;
    double metric_final = 0.0;
    // Incumbent metric after the initial evaluation and after each accepted
    // coordinate step; non-increasing by construction.
    std::vector<double> trace;
    std::vector<std::string> act_formats;
    std::vector<std::string> weight_formats;
    // Relative Frobenius error of the reconstructed output against o_ref.
    double output_rel_error = 0.0;
    // Pre-shifted runs only: relative error between the folded-weight
    // execution path and the per-channel reference path (expected 0).
    std::optional<double> preshift_equiv_rel_error;
};

// k+1 evenly spaced bias candidates spanning [gamma1*init, gamma2*init],
// endpoints included, sorted ascending. An init of zero degenerates to a
// constant grid.
std::vector<double> bias_grid(double init_bias, const SearchConfig& config);

// Vector form for per-channel/per-token biases: candidate i scales every
// entry of `init_bias` by the same factor gamma1 + i*(gamma2 - gamma1)/k,
// factors ascending, so one grid index moves all groups together.
std::vector<std::vector<double>> bias_grid(const std::vector<double>& init_bias,
                                           const SearchConfig& config);

// Greedy joint search over activation/weight formats and bias grids. Biases
// start at their MinMax initialization per format; each round sweeps the
// activation bias per activation format, picks the activation format, then
// does the same on the weight side. A sweep accepts a candidate only when it
// does not worsen the metric; ties prefer fewer exponent bits, then the
// smaller bias. Throws MetricUnavailable when the Fisher metric is requested
// without a stored gradient.
SearchResult search_layer(const LayerTask& task, const SearchConfig& config);

// Pre-shifted variant for weight-matmul layers: per-channel activation
// biases are fixed from each channel's maximum, and the shared real bias
// rho (initialized to the smallest channel bias) is grid-searched with the
// integer channel offsets re-split at every candidate. The weight side is
// searched as in search_layer. Throws std::invalid_argument for
// activation-activation layers.
SearchResult search_layer_preshifted(const LayerTask& task, const SearchConfig& config);

// Searches every bundle layer independently against its stored raw output
// (no error propagation between layers). With config.preshift set,
// weight-matmul layers use search_layer_preshifted and
// activation-activation layers fall back to search_layer. Layers whose
// gradient is absent fall back to the MSE metric with the fallback flag set.
// `threads` <= 0 means one worker per hardware thread; results are identical
// for any thread count.
std::map<std::string, SearchResult> run_pipeline(const CalibrationBundle& bundle,
                                                 const SearchConfig& config, int threads = 0);

}  // namespace fpq
