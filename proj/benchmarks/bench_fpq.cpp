// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the hot paths: scalar quantization, whole-tensor
// quantization, the two quantized matmul forms and a full layer search.

#include <benchmark/benchmark.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "fpq/format.hpp"
#include "fpq/matmul.hpp"
#include "fpq/quantize.hpp"
#include "fpq/search.hpp"
#include "fpq/tensor.hpp"

namespace {

fpq::Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed, double span) {
    std::mt19937_64 rng(seed);
    fpq::Tensor t(rows, cols);
    for (double& v : t.values()) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = (2.0 * u - 1.0) * span;
    }
    return t;
}

void BM_quantize_value(benchmark::State& state) {
    const fpq::QuantScheme scheme{{2, 1}, 0.5};
    const fpq::Tensor input = random_tensor(64, 64, 1, 10.0);
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(fpq::quantize_value(input.values()[i], scheme));
        i = (i + 1) % input.size();
    }
}
BENCHMARK(BM_quantize_value);

void BM_quantize_tensor(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const fpq::Tensor input = random_tensor(n, n, 2, 10.0);
    const fpq::FpFormat fmt{2, 1};
    const fpq::TensorScheme scheme{fmt, fpq::Granularity::PerTensor,
                                   fpq::minmax_bias(input, fmt, fpq::Granularity::PerTensor)};
    for (auto _ : state) benchmark::DoNotOptimize(fpq::quantize_tensor(input, scheme));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(input.size()));
}
BENCHMARK(BM_quantize_tensor)->Arg(64)->Arg(256);

void BM_matmul_quantized(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const fpq::Tensor x = random_tensor(n, n, 3, 4.0);
    const fpq::Tensor y = random_tensor(n, n, 4, 1.0);
    const fpq::FpFormat fmt{2, 1};
    fpq::MatmulPlan plan;
    plan.activation = fpq::TensorScheme{fmt, fpq::Granularity::PerTensor,
                                        fpq::minmax_bias(x, fmt, fpq::Granularity::PerTensor)};
    plan.weight = fpq::TensorScheme{fmt, fpq::Granularity::PerChannel,
                                    fpq::minmax_bias(y, fmt, fpq::Granularity::PerChannel)};
    for (auto _ : state) benchmark::DoNotOptimize(fpq::matmul_quantized(x, y, plan));
}
BENCHMARK(BM_matmul_quantized)->Arg(64)->Arg(128);

void BM_matmul_preshifted(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    fpq::Tensor x = random_tensor(n, n, 5, 2.0);
    for (std::size_t c = 0; c < x.cols(); ++c)
        for (std::size_t r = 0; r < x.rows(); ++r)
            x.at(r, c) *= std::exp2(static_cast<double>(c % 3));
    const fpq::Tensor w = random_tensor(n, n, 6, 1.0);
    const fpq::FpFormat fmt{2, 1};
    const std::vector<double> biases = fpq::per_channel_bias(x, fmt);
    const double rho = *std::min_element(biases.begin(), biases.end());
    const fpq::ChannelShiftedScheme shifted = fpq::split_channel_bias(biases, rho, fmt);
    const fpq::TensorScheme weight_scheme{
        fmt, fpq::Granularity::PerChannel,
        fpq::minmax_bias(w, fmt, fpq::Granularity::PerChannel)};
    const fpq::Tensor w_pre = fpq::precompute_preshifted_weights(w, weight_scheme, shifted);
    for (auto _ : state)
        benchmark::DoNotOptimize(fpq::matmul_preshifted(x, w_pre, shifted, weight_scheme));
}
BENCHMARK(BM_matmul_preshifted)->Arg(64)->Arg(128);

void BM_search_layer(benchmark::State& state) {
    fpq::LayerTask task;
    task.name = "bench";
    task.x = random_tensor(32, 16, 7, 4.0);
    task.y = random_tensor(16, 16, 8, 1.0);
    task.o_ref = fpq::matmul(task.x, task.y);
    fpq::SearchConfig config;
    config.weight_bits = 4;
    config.act_bits = 4;
    config.intervals = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(fpq::search_layer(task, config));
}
BENCHMARK(BM_search_layer)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
