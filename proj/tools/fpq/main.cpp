// SPDX-License-Identifier: Apache-2.0
//
// fpq: calibration-bundle quantization driver.
//
//   fpq search <bundle>      joint format/bias search, writes report.json
//   fpq stats <bundle>       per-channel activation statistics as CSV
//   fpq error-scan <bundle>  per-format quantization MSE as CSV
//   fpq synth <dir>          deterministic synthetic calibration bundle
//   fpq verify               scalar quantizer vs. brute-force grid reference
//
// Exit codes: 0 success, 1 algorithmic failure (verify mismatch),
// 2 usage or IO error.

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fpq/bundle.hpp"
#include "fpq/format.hpp"
#include "fpq/matmul.hpp"
#include "fpq/metrics.hpp"
#include "fpq/quantize.hpp"
#include "fpq/search.hpp"
#include "fpq/tensor.hpp"

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr int kExitSuccess = 0;
constexpr int kExitAlgorithmic = 1;
constexpr int kExitUsage = 2;

enum class Mode { MinMaxInt, MinMaxFp, FpqBaseline, Fpq };

Mode parse_mode(const std::string& name) {
    if (name == "minmax-int") return Mode::MinMaxInt;
    if (name == "minmax-fp") return Mode::MinMaxFp;
    if (name == "fpq-baseline") return Mode::FpqBaseline;
    if (name == "fpq") return Mode::Fpq;
    throw CLI::ValidationError("--mode", "unknown mode '" + name + "'");
}

// Shortest round-trip decimal form, identical on every run.
std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string hex_digest(std::uint64_t digest) {
    static const char* hex = "0123456789abcdef";
    std::string out = "fnv1a64:";
    for (int shift = 60; shift >= 0; shift -= 4) out.push_back(hex[(digest >> shift) & 0xf]);
    return out;
}

int env_threads() {
    if (const char* env = std::getenv("FPQ_THREADS")) {
        int value = 0;
        const std::string text(env);
        const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
        if (res.ec == std::errc() && res.ptr == text.data() + text.size() && value > 0)
            return value;
        std::cerr << "warning: ignoring invalid FPQ_THREADS value '" << text << "'\n";
    }
    return 0;  // one worker per hardware thread
}

struct BitWidths {
    int weight = 8;
    int act = 8;
};

// "--bits W[,A]": weight width, optionally a distinct activation width.
BitWidths parse_bits(const std::string& text) {
    BitWidths bits;
    const auto comma = text.find(',');
    const auto parse_one = [&](const std::string& part, const char* which) {
        int value = 0;
        const auto res = std::from_chars(part.data(), part.data() + part.size(), value);
        if (res.ec != std::errc() || res.ptr != part.data() + part.size() || value < 3)
            throw CLI::ValidationError("--bits", std::string(which) +
                                                     " width must be an integer >= 3, got '" +
                                                     part + "'");
        return value;
    };
    if (comma == std::string::npos) {
        bits.weight = bits.act = parse_one(text, "bit");
    } else {
        bits.weight = parse_one(text.substr(0, comma), "weight");
        bits.act = parse_one(text.substr(comma + 1), "activation");
    }
    return bits;
}

fpq::Granularity parse_act_granularity(const std::string& name) {
    if (name == "tensor") return fpq::Granularity::PerTensor;
    if (name == "token") return fpq::Granularity::PerToken;
    throw CLI::ValidationError("--granularity-act", "expected 'tensor' or 'token', got '" +
                                                        name + "'");
}

// MinMax FP reference formats, matching the per-width rows customary for
// this baseline: E2M1 at 4 bits, E3M2 at 6, E4M3 at 8.
fpq::FpFormat minmax_fp_format(int bits) {
    switch (bits) {
        case 4: return {2, 1};
        case 6: return {3, 2};
        case 8: return {4, 3};
        default:
            throw CLI::ValidationError("--bits", "mode minmax-fp defines reference formats for "
                                                 "widths 4, 6 and 8 only");
    }
}

double evaluate_metric(const fpq::Tensor& o_hat, const fpq::LayerTask& task,
                       fpq::MetricKind metric) {
    return metric == fpq::MetricKind::Mse
               ? fpq::mse_metric(o_hat, task.o_ref)
               : fpq::fisher_metric(o_hat, task.o_ref, *task.grad);
}

ordered_json scheme_json(const fpq::TensorScheme& scheme) {
    return {{"format", fpq::format_name(scheme.format)},
            {"granularity", fpq::granularity_name(scheme.granularity)},
            {"bias", scheme.bias}};
}

ordered_json scheme_json(const fpq::ChannelShiftedScheme& scheme) {
    return {{"format", fpq::format_name(scheme.format)},
            {"granularity", "per-channel"},
            {"rho", scheme.rho},
            {"channel_bias", scheme.channel_bias}};
}

ordered_json result_json(const std::string& name, fpq::LayerKind kind,
                         const fpq::SearchResult& result) {
    ordered_json entry = {{"name", name}, {"kind", fpq::layer_kind_name(kind)}};
    if (const auto* shifted = std::get_if<fpq::ChannelShiftedScheme>(&result.act_scheme))
        entry["activation"] = scheme_json(*shifted);
    else
        entry["activation"] = scheme_json(std::get<fpq::TensorScheme>(result.act_scheme));
    entry["weight"] = scheme_json(result.weight_scheme);
    entry["metric"] = fpq::metric_name(result.metric_used);
    entry["metric_fallback"] = result.metric_fallback;
    entry["metric_init"] = result.metric_init;
    entry["metric_final"] = result.metric_final;
    entry["trace"] = result.trace;
    entry["output_rel_error"] = result.output_rel_error;
    if (result.preshift_equiv_rel_error)
        entry["preshift_equiv_rel_error"] = *result.preshift_equiv_rel_error;
    entry["act_format_space"] = result.act_formats;
    entry["weight_format_space"] = result.weight_formats;
    return entry;
}

// Fixed-scheme evaluation for the two MinMax modes (no search).
fpq::SearchResult minmax_fp_result(const fpq::LayerTask& task, const BitWidths& bits,
                                   fpq::Granularity act_granularity, fpq::MetricKind metric) {
    const fpq::Granularity y_granularity = task.kind == fpq::LayerKind::WeightMatmul
                                               ? fpq::Granularity::PerChannel
                                               : fpq::Granularity::PerTensor;
    fpq::SearchResult result;
    const fpq::FpFormat act_fmt = minmax_fp_format(bits.act);
    const fpq::FpFormat w_fmt = minmax_fp_format(bits.weight);
    fpq::TensorScheme act{act_fmt, act_granularity,
                          fpq::minmax_bias(task.x, act_fmt, act_granularity)};
    fpq::TensorScheme weight{w_fmt, y_granularity,
                             fpq::minmax_bias(task.y, w_fmt, y_granularity)};
    const fpq::Tensor o_hat =
        fpq::matmul(fpq::quantize_tensor(task.x, act), fpq::quantize_tensor(task.y, weight));
    result.metric_used = metric;
    result.metric_init = result.metric_final = evaluate_metric(o_hat, task, metric);
    result.trace = {result.metric_final};
    result.act_formats = {fpq::format_name(act_fmt)};
    result.weight_formats = {fpq::format_name(w_fmt)};
    result.output_rel_error = fpq::relative_error(o_hat, task.o_ref);
    result.act_scheme = std::move(act);
    result.weight_scheme = std::move(weight);
    return result;
}

ordered_json int_scheme_json(const fpq::Tensor& t, int bits, fpq::Granularity granularity) {
    const int levels = (1 << (bits - 1)) - 1;
    std::vector<double> scale = fpq::group_abs_max(t, granularity);
    for (double& s : scale) s = s > 0.0 ? s / levels : 1.0;
    return {{"format", "INT" + std::to_string(bits)},
            {"granularity", fpq::granularity_name(granularity)},
            {"scale", scale}};
}

ordered_json minmax_int_json(const fpq::LayerTask& task, const BitWidths& bits,
                             fpq::Granularity act_granularity, fpq::MetricKind metric) {
    const fpq::Granularity y_granularity = task.kind == fpq::LayerKind::WeightMatmul
                                               ? fpq::Granularity::PerChannel
                                               : fpq::Granularity::PerTensor;
    const fpq::Tensor o_hat =
        fpq::matmul(fpq::quantize_tensor_int(task.x, bits.act, act_granularity),
                    fpq::quantize_tensor_int(task.y, bits.weight, y_granularity));
    const double m = evaluate_metric(o_hat, task, metric);
    ordered_json entry = {{"name", task.name}, {"kind", fpq::layer_kind_name(task.kind)}};
    entry["activation"] = int_scheme_json(task.x, bits.act, act_granularity);
    entry["weight"] = int_scheme_json(task.y, bits.weight, y_granularity);
    entry["metric"] = fpq::metric_name(metric);
    entry["metric_fallback"] = false;
    entry["metric_init"] = m;
    entry["metric_final"] = m;
    entry["trace"] = ordered_json::array({m});
    entry["output_rel_error"] = fpq::relative_error(o_hat, task.o_ref);
    entry["act_format_space"] = ordered_json::array({"INT" + std::to_string(bits.act)});
    entry["weight_format_space"] = ordered_json::array({"INT" + std::to_string(bits.weight)});
    return entry;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

// Quantized companion bundle: dequantized operands, recomputed outputs and
// the scheme metadata, itself loadable as a calibration bundle.
void write_quantized_bundle(const fpq::CalibrationBundle& source,
                            const std::map<std::string, fpq::SearchResult>& results,
                            const ordered_json& layer_reports,
                            const std::filesystem::path& dir) {
    fpq::CalibrationBundle quantized;
    quantized.layers = source.layers;
    for (auto& layer : quantized.layers) layer.grad.reset();
    for (const fpq::BundleLayer& layer : source.layers) {
        const fpq::SearchResult& result = results.at(layer.name);
        const fpq::Tensor& x = source.tensor(layer.x);
        const fpq::Tensor& y = source.tensor(layer.y);
        fpq::Tensor x_hat =
            std::holds_alternative<fpq::ChannelShiftedScheme>(result.act_scheme)
                ? fpq::quantize_tensor(x, std::get<fpq::ChannelShiftedScheme>(result.act_scheme))
                : fpq::quantize_tensor(x, std::get<fpq::TensorScheme>(result.act_scheme));
        fpq::Tensor y_hat = fpq::quantize_tensor(y, result.weight_scheme);
        fpq::Tensor o_hat = fpq::matmul(x_hat, y_hat);
        quantized.tensors.emplace(layer.x, std::move(x_hat));
        quantized.tensors.emplace(layer.y, std::move(y_hat));
        quantized.tensors.emplace(layer.o_ref, std::move(o_hat));
    }
    fpq::save_bundle(quantized, dir);
    ordered_json schemes = {{"format", "fpq-schemes"}, {"version", 1},
                            {"layers", layer_reports}};
    write_text_file(dir / "schemes.json", schemes.dump(2) + "\n");
}

int cmd_search(const std::string& bundle_path, const std::string& bits_text,
               const std::string& mode_text, const std::string& metric_text, double gamma1,
               double gamma2, int intervals, int rounds, const std::string& granularity_text,
               int threads, const std::string& out_path, const std::string& quantized_out) {
    const Mode mode = parse_mode(mode_text);
    const BitWidths bits = parse_bits(bits_text);
    const fpq::MetricKind metric = fpq::parse_metric(metric_text);
    const fpq::Granularity act_granularity = parse_act_granularity(granularity_text);

    const fpq::CalibrationBundle bundle = fpq::load_bundle(bundle_path);

    fpq::SearchConfig config;
    config.gamma1 = gamma1;
    config.gamma2 = gamma2;
    config.intervals = intervals;
    config.rounds = rounds;
    config.weight_bits = bits.weight;
    config.act_bits = bits.act;
    config.metric = metric;
    config.preshift = mode == Mode::Fpq;
    config.act_granularity = act_granularity;

    const auto started = std::chrono::steady_clock::now();
    std::map<std::string, fpq::SearchResult> results;
    ordered_json layer_reports = ordered_json::array();
    if (mode == Mode::FpqBaseline || mode == Mode::Fpq) {
        fpq::validate_config(config);
        results = fpq::run_pipeline(bundle, config, threads);
        for (const fpq::BundleLayer& layer : bundle.layers)
            layer_reports.push_back(
                result_json(layer.name, layer.kind, results.at(layer.name)));
    } else {
        for (const fpq::BundleLayer& layer : bundle.layers) {
            const fpq::LayerTask task = fpq::make_layer_task(bundle, layer);
            const fpq::MetricKind layer_metric =
                metric == fpq::MetricKind::Fisher && !task.grad ? fpq::MetricKind::Mse : metric;
            if (mode == Mode::MinMaxInt) {
                ordered_json entry = minmax_int_json(task, bits, act_granularity, layer_metric);
                entry["metric_fallback"] = layer_metric != metric;
                layer_reports.push_back(std::move(entry));
            } else {
                fpq::SearchResult result =
                    minmax_fp_result(task, bits, act_granularity, layer_metric);
                result.metric_fallback = layer_metric != metric;
                layer_reports.push_back(result_json(layer.name, layer.kind, result));
                results.emplace(layer.name, std::move(result));
            }
        }
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;

    ordered_json report = {
        {"config",
         {{"mode", mode_text},
          {"metric", metric_text},
          {"weight_bits", bits.weight},
          {"act_bits", bits.act},
          {"gamma1", gamma1},
          {"gamma2", gamma2},
          {"intervals", intervals},
          {"rounds", rounds},
          {"granularity_act", fpq::granularity_name(act_granularity)},
          {"preshift", config.preshift}}},
        {"bundle",
         {{"path", bundle_path},
          {"digest", hex_digest(fpq::bundle_digest(bundle_path))},
          {"layers", bundle.layers.size()}}},
        {"layers", layer_reports}};
    write_text_file(out_path, report.dump(2) + "\n");

    if (!quantized_out.empty()) {
        if (mode == Mode::MinMaxInt) {
            std::cerr << "error: --quantized-out is not available in mode minmax-int\n";
            return kExitUsage;
        }
        write_quantized_bundle(bundle, results, layer_reports, quantized_out);
    }
    // Timing goes to stderr only; report bytes stay identical across runs.
    std::cerr << "searched " << bundle.layers.size() << " layer(s) in " << elapsed.count()
              << " s; report written to " << out_path << "\n";
    return kExitSuccess;
}

int cmd_stats(const std::string& bundle_path) {
    const fpq::CalibrationBundle bundle = fpq::load_bundle(bundle_path);
    std::cout << "layer,channel,max_abs,mean_abs,variance\n";
    for (const fpq::BundleLayer& layer : bundle.layers) {
        const fpq::ChannelStatsReport report = fpq::channel_stats(bundle.tensor(layer.x));
        for (std::size_t c = 0; c < report.channels.size(); ++c) {
            const fpq::ChannelStats& s = report.channels[c];
            std::cout << layer.name << ',' << c << ',' << format_double(s.max_abs) << ','
                      << format_double(s.mean_abs) << ',' << format_double(s.variance) << "\n";
        }
        std::cerr << layer.name << ": inter-channel variance of means "
                  << format_double(report.inter_channel_variance)
                  << ", mean intra-channel variance "
                  << format_double(report.mean_intra_channel_variance);
        if (report.mean_intra_channel_variance > 0.0)
            std::cerr << ", ratio "
                      << format_double(report.inter_channel_variance /
                                       report.mean_intra_channel_variance);
        std::cerr << "\n";
    }
    return kExitSuccess;
}

int cmd_error_scan(const std::string& bundle_path, int bits) {
    const fpq::CalibrationBundle bundle = fpq::load_bundle(bundle_path);
    const std::vector<fpq::FpFormat> formats = fpq::format_space(bits);
    std::cout << "layer,tensor,format,mse\n";
    for (const fpq::BundleLayer& layer : bundle.layers) {
        const auto emit = [&](const char* which, const fpq::Tensor& t) {
            const std::map<std::string, double> errors = fpq::error_scan(t, bits);
            for (const fpq::FpFormat& fmt : formats)
                std::cout << layer.name << ',' << which << ',' << fpq::format_name(fmt) << ','
                          << format_double(errors.at(fpq::format_name(fmt))) << "\n";
            const std::string int_key = "INT" + std::to_string(bits);
            std::cout << layer.name << ',' << which << ',' << int_key << ','
                      << format_double(errors.at(int_key)) << "\n";
        };
        emit("x", bundle.tensor(layer.x));
        emit("y", bundle.tensor(layer.y));
    }
    return kExitSuccess;
}

int cmd_synth(const std::string& out_dir, const fpq::SynthSpec& spec) {
    fpq::save_bundle(fpq::synth_bundle(spec), out_dir);
    std::cerr << "wrote bundle to " << out_dir << " ("
              << hex_digest(fpq::bundle_digest(out_dir)) << ")\n";
    return kExitSuccess;
}

int cmd_verify(const std::vector<std::string>& format_names, int samples, std::uint64_t seed) {
    std::vector<fpq::FpFormat> formats;
    if (format_names.empty()) {
        for (int e = 1; e <= 4; ++e)
            for (int m = 0; m <= 3; ++m)
                if (e + m <= 6) formats.push_back({e, m});
    } else {
        for (const std::string& name : format_names) formats.push_back(fpq::parse_format(name));
    }
    const std::vector<double> biases = {-3.5, -1.0, 0.0, 0.5, 2.0, 7.25};

    std::uint64_t checked = 0;
    std::uint64_t mismatches = 0;
    for (std::size_t fi = 0; fi < formats.size(); ++fi) {
        for (std::size_t bi = 0; bi < biases.size(); ++bi) {
            const fpq::QuantScheme scheme{formats[fi], biases[bi]};
            const double limit = 1.25 * fpq::clip_max(scheme.format, scheme.bias);
            std::mt19937_64 rng(seed * 1000003ull + fi * 101ull + bi);
            for (int i = 0; i < samples; ++i) {
                const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
                const double x = (2.0 * u - 1.0) * limit;
                const double fast = fpq::quantize_value(x, scheme);
                const double reference = fpq::quantize_value_reference(x, scheme);
                ++checked;
                if (fast != reference) {
                    if (++mismatches <= 10)
                        std::cerr << "mismatch: x=" << format_double(x) << " format "
                                  << fpq::format_name(scheme.format) << " bias "
                                  << format_double(scheme.bias) << ": got "
                                  << format_double(fast) << ", reference "
                                  << format_double(reference) << "\n";
                }
            }
        }
    }
    if (mismatches == 0) {
        std::cout << "PASS: " << checked << " values across " << formats.size()
                  << " format(s), 0 mismatches\n";
        return kExitSuccess;
    }
    std::cout << "FAIL: " << mismatches << " mismatch(es) out of " << checked << " values\n";
    return kExitAlgorithmic;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ExMy floating-point quantization toolkit"};
    app.require_subcommand(1);

    std::string bundle_path;
    std::string bits_text = "8";
    std::string mode_text = "fpq-baseline";
    std::string metric_text = "mse";
    std::string granularity_text = "tensor";
    std::string out_path = "report.json";
    std::string quantized_out;
    double gamma1 = 0.01;
    double gamma2 = 1.2;
    int intervals = 100;
    int rounds = 3;
    int threads = env_threads();

    CLI::App* search = app.add_subcommand("search", "search formats and biases per layer");
    search->add_option("bundle", bundle_path, "calibration bundle directory")->required();
    search->add_option("--bits", bits_text, "bit widths W[,A] (weight[,activation])");
    search->add_option("--mode", mode_text, "minmax-int, minmax-fp, fpq-baseline or fpq");
    search->add_option("--metric", metric_text, "mse or fisher");
    search->add_option("--gamma1", gamma1, "lower bias-grid factor");
    search->add_option("--gamma2", gamma2, "upper bias-grid factor");
    search->add_option("--k", intervals, "bias grid intervals per sweep");
    search->add_option("--rounds", rounds, "search rounds");
    search->add_option("--granularity-act", granularity_text, "tensor or token");
    search->add_option("--threads", threads, "worker threads (default FPQ_THREADS or all)");
    search->add_option("--out", out_path, "report path");
    search->add_option("--quantized-out", quantized_out, "write the quantized bundle here");

    CLI::App* stats = app.add_subcommand("stats", "per-channel activation statistics (CSV)");
    stats->add_option("bundle", bundle_path, "calibration bundle directory")->required();

    int scan_bits = 8;
    CLI::App* scan = app.add_subcommand("error-scan", "per-format quantization MSE (CSV)");
    scan->add_option("bundle", bundle_path, "calibration bundle directory")->required();
    scan->add_option("--bits", scan_bits, "format bit width");

    std::string synth_out;
    fpq::SynthSpec synth_spec;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic calibration bundle");
    synth->add_option("out", synth_out, "output bundle directory")->required();
    synth->add_option("--layers", synth_spec.layers, "layer count");
    synth->add_option("--tokens", synth_spec.tokens, "rows per activation");
    synth->add_option("--channels", synth_spec.channels, "activation channels");
    synth->add_option("--outlier-channels", synth_spec.outlier_channels,
                      "channels scaled by --outlier-scale");
    synth->add_option("--outlier-scale", synth_spec.outlier_scale, "outlier magnitude factor");
    synth->add_option("--seed", synth_spec.seed, "generator seed");

    std::vector<std::string> verify_formats;
    int verify_samples = 10000;
    std::uint64_t verify_seed = 42;
    CLI::App* verify = app.add_subcommand("verify", "check quantize_value against the grid "
                                                    "reference");
    verify->add_option("--formats", verify_formats, "formats to check (default: e<=4, m<=3)")
        ->delimiter(',');
    verify->add_option("--samples", verify_samples, "random samples per format and bias");
    verify->add_option("--seed", verify_seed, "RNG seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (search->parsed())
            return cmd_search(bundle_path, bits_text, mode_text, metric_text, gamma1, gamma2,
                              intervals, rounds, granularity_text, threads, out_path,
                              quantized_out);
        if (stats->parsed()) return cmd_stats(bundle_path);
        if (scan->parsed()) return cmd_error_scan(bundle_path, scan_bits);
        if (synth->parsed()) return cmd_synth(synth_out, synth_spec);
        if (verify->parsed()) return cmd_verify(verify_formats, verify_samples, verify_seed);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
