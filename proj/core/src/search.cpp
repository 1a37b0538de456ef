// SPDX-License-Identifier: Apache-2.0

#include "fpq/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace fpq {

void validate_config(const SearchConfig& config) {
    if (!(config.gamma1 > 0.0) || !(config.gamma1 < config.gamma2))
        throw std::invalid_argument("search config requires 0 < gamma1 < gamma2");
    if (config.intervals < 1)
        throw std::invalid_argument("search config requires at least 1 grid interval");
    if (config.rounds < 1)
        throw std::invalid_argument("search config requires at least 1 round");
    if (config.weight_bits < 3 || config.act_bits < 3)
        throw std::invalid_argument("search config requires bit widths of at least 3");
    if (config.act_granularity == Granularity::PerChannel)
        throw std::invalid_argument("per-channel activation scales require the pre-shifted "
                                    "search path");
}

LayerTask make_layer_task(const CalibrationBundle& bundle, const BundleLayer& layer) {
    LayerTask task;
    task.name = layer.name;
    task.x = bundle.tensor(layer.x);
    task.y = bundle.tensor(layer.y);
    task.o_ref = bundle.tensor(layer.o_ref);
    if (layer.grad) task.grad = bundle.tensor(*layer.grad);
    task.kind = layer.kind;
    return task;
}

std::vector<double> bias_grid(double init_bias, const SearchConfig& config) {
    const int k = config.intervals;
    const double a = config.gamma1 * init_bias;
    const double b = config.gamma2 * init_bias;
    const double lo = std::fmin(a, b);
    const double hi = std::fmax(a, b);
    std::vector<double> grid(static_cast<std::size_t>(k) + 1);
    for (int i = 0; i <= k; ++i)
        grid[i] = (lo * (k - i) + hi * i) / k;
    return grid;
}

std::vector<std::vector<double>> bias_grid(const std::vector<double>& init_bias,
                                           const SearchConfig& config) {
    const int k = config.intervals;
    std::vector<std::vector<double>> grid(static_cast<std::size_t>(k) + 1);
    for (int i = 0; i <= k; ++i) {
        const double factor = (config.gamma1 * (k - i) + config.gamma2 * i) / k;
        grid[i].reserve(init_bias.size());
        for (double b : init_bias) grid[i].push_back(factor * b);
    }
    return grid;
}

namespace {

// Metric evaluation of one quantized operand pair against the stored output.
struct Evaluator {
    const LayerTask* task;
    MetricKind metric;

    double operator()(const Tensor& x_hat, const Tensor& y_hat) const {
        const Tensor o = matmul(x_hat, y_hat);
        return metric == MetricKind::Mse ? mse_metric(o, task->o_ref)
                                         : fisher_metric(o, task->o_ref, *task->grad);
    }
};

// One operand side of the coordinate descent. Bias state is a vector (one
// entry per granularity group); on a pre-shifted activation side it is the
// single shared bias rho, with the fixed per-channel biases kept aside.
struct SideState {
    const Tensor* tensor = nullptr;
    Granularity granularity = Granularity::PerTensor;
    bool shifted = false;
    std::vector<FpFormat> formats;
    std::vector<std::vector<double>> init;                // per format
    std::vector<std::vector<std::vector<double>>> grid;   // per format, per candidate
    std::vector<std::vector<double>> current;             // per format
    std::vector<std::vector<double>> channel_bias;        // per format (shifted only)
    std::vector<double> metric;                           // per format, last sweep
    std::size_t chosen = 0;

    Tensor quantize(std::size_t fmt, const std::vector<double>& bias) const {
        if (shifted)
            return quantize_tensor(*tensor,
                                   split_channel_bias(channel_bias[fmt], bias[0], formats[fmt]));
        return quantize_tensor(*tensor, formats[fmt], bias, granularity);
    }

    Tensor quantize_current() const { return quantize(chosen, current[chosen]); }
};

SideState make_side(const Tensor& t, int bits, Granularity granularity, bool shifted,
                    const SearchConfig& config) {
    SideState side;
    side.tensor = &t;
    side.granularity = shifted ? Granularity::PerChannel : granularity;
    side.shifted = shifted;
    side.formats = format_space(bits);
    const std::size_t n = side.formats.size();
    side.init.resize(n);
    side.grid.resize(n);
    side.current.resize(n);
    side.metric.assign(n, std::numeric_limits<double>::infinity());
    if (shifted) side.channel_bias.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (shifted) {
            side.channel_bias[i] = per_channel_bias(t, side.formats[i]);
            const double rho = *std::min_element(side.channel_bias[i].begin(),
                                                 side.channel_bias[i].end());
            side.init[i] = {rho};
            for (double candidate : bias_grid(rho, config)) side.grid[i].push_back({candidate});
        } else {
            side.init[i] = minmax_bias(t, side.formats[i], granularity);
            side.grid[i] = bias_grid(side.init[i], config);
        }
        side.current[i] = side.init[i];
    }
    return side;
}

// Sweeps one format's bias candidates against a fixed partner, keeping the
// incumbent bias unless a candidate improves the metric (ties prefer the
// smaller bias). The format's MinMax initialization is always among the
// candidates, so the accepted metric never exceeds the initialization's.
void sweep_bias(SideState& side, std::size_t fmt, const Tensor& partner_hat, bool side_is_x,
                const Evaluator& eval) {
    const auto evaluate = [&](const std::vector<double>& bias) {
        const Tensor q = side.quantize(fmt, bias);
        return side_is_x ? eval(q, partner_hat) : eval(partner_hat, q);
    };
    const std::vector<double>* best_bias = &side.current[fmt];
    double best = evaluate(*best_bias);
    const auto consider = [&](const std::vector<double>& bias) {
        const double m = evaluate(bias);
        if (m < best || (m == best && bias < *best_bias)) {
            best = m;
            best_bias = &bias;
        }
    };
    consider(side.init[fmt]);
    for (const auto& bias : side.grid[fmt]) consider(bias);
    if (best_bias != &side.current[fmt]) side.current[fmt] = *best_bias;
    side.metric[fmt] = best;
}

// Picks the best format by freshly swept metric; ties prefer fewer exponent
// bits, then the smaller bias.
std::size_t pick_format(const SideState& side) {
    std::size_t best = side.chosen;
    for (std::size_t i = 0; i < side.formats.size(); ++i) {
        if (i == best) continue;
        const bool better =
            side.metric[i] < side.metric[best] ||
            (side.metric[i] == side.metric[best] &&
             (side.formats[i].exponent_bits < side.formats[best].exponent_bits ||
              (side.formats[i].exponent_bits == side.formats[best].exponent_bits &&
               side.current[i] < side.current[best])));
        if (better) best = i;
    }
    return best;
}

SearchResult run_search(const LayerTask& task, const SearchConfig& config, bool preshift_act) {
    validate_config(config);
    if (config.metric == MetricKind::Fisher && !task.grad)
        throw MetricUnavailable("fisher metric requires a stored gradient (layer '" + task.name +
                                "')");

    const Granularity y_granularity = task.kind == LayerKind::WeightMatmul
                                          ? Granularity::PerChannel
                                          : Granularity::PerTensor;
    SideState xs = make_side(task.x, config.act_bits, config.act_granularity, preshift_act,
                             config);
    SideState ys = make_side(task.y, config.weight_bits, y_granularity, false, config);
    const Evaluator eval{&task, config.metric};

    Tensor x_hat = xs.quantize_current();
    Tensor y_hat = ys.quantize_current();

    SearchResult result;
    result.metric_used = config.metric;
    result.trace.push_back(eval(x_hat, y_hat));
    for (int round = 0; round < config.rounds; ++round) {
        for (std::size_t i = 0; i < xs.formats.size(); ++i) sweep_bias(xs, i, y_hat, true, eval);
        result.trace.push_back(xs.metric[xs.chosen]);
        xs.chosen = pick_format(xs);
        result.trace.push_back(xs.metric[xs.chosen]);
        x_hat = xs.quantize_current();

        for (std::size_t i = 0; i < ys.formats.size(); ++i) sweep_bias(ys, i, x_hat, false, eval);
        result.trace.push_back(ys.metric[ys.chosen]);
        ys.chosen = pick_format(ys);
        result.trace.push_back(ys.metric[ys.chosen]);
        y_hat = ys.quantize_current();
    }

    result.metric_init = result.trace.front();
    result.metric_final = result.trace.back();
    for (const FpFormat& f : xs.formats) result.act_formats.push_back(format_name(f));
    for (const FpFormat& f : ys.formats) result.weight_formats.push_back(format_name(f));
    result.weight_scheme = TensorScheme{ys.formats[ys.chosen], y_granularity,
                                        ys.current[ys.chosen]};
    if (preshift_act) {
        ChannelShiftedScheme shifted = split_channel_bias(xs.channel_bias[xs.chosen],
                                                          xs.current[xs.chosen][0],
                                                          xs.formats[xs.chosen]);
        const Tensor w_pre = precompute_preshifted_weights(task.y, result.weight_scheme,
                                                           shifted);
        const Tensor o_pre = matmul_preshifted(task.x, w_pre, shifted, result.weight_scheme);
        result.preshift_equiv_rel_error = relative_error(o_pre, matmul(x_hat, y_hat));
        result.act_scheme = std::move(shifted);
    } else {
        result.act_scheme = TensorScheme{xs.formats[xs.chosen], xs.granularity,
                                         xs.current[xs.chosen]};
    }
    result.output_rel_error = relative_error(matmul(x_hat, y_hat), task.o_ref);
    return result;
}

}  // namespace

SearchResult search_layer(const LayerTask& task, const SearchConfig& config) {
    return run_search(task, config, false);
}

SearchResult search_layer_preshifted(const LayerTask& task, const SearchConfig& config) {
    if (task.kind != LayerKind::WeightMatmul)
        throw std::invalid_argument("pre-shifted search applies only to weight-matmul layers "
                                    "(layer '" + task.name + "')");
    return run_search(task, config, true);
}

std::map<std::string, SearchResult> run_pipeline(const CalibrationBundle& bundle,
                                                 const SearchConfig& config, int threads) {
    validate_config(config);
    std::vector<LayerTask> tasks;
    tasks.reserve(bundle.layers.size());
    for (const BundleLayer& layer : bundle.layers) tasks.push_back(make_layer_task(bundle, layer));

    std::vector<SearchResult> results(tasks.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    const auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            try {
                SearchConfig layer_config = config;
                const bool fallback = config.metric == MetricKind::Fisher && !tasks[i].grad;
                if (fallback) layer_config.metric = MetricKind::Mse;
                const bool shifted =
                    config.preshift && tasks[i].kind == LayerKind::WeightMatmul;
                results[i] = shifted ? search_layer_preshifted(tasks[i], layer_config)
                                     : search_layer(tasks[i], layer_config);
                results[i].metric_fallback = fallback;
            } catch (...) {
                const std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    int n = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    n = std::max(1, std::min<int>(n, static_cast<int>(std::max<std::size_t>(tasks.size(), 1))));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n));
        for (int t = 0; t < n; ++t) pool.emplace_back(worker);
        for (std::thread& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::map<std::string, SearchResult> out;
    for (std::size_t i = 0; i < tasks.size(); ++i)
        out.emplace(tasks[i].name, std::move(results[i]));
    return out;
}

}  // namespace fpq
