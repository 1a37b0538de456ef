// SPDX-License-Identifier: Apache-2.0

#include "fpq/bundle.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"

namespace fpq {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kRawOutputTolerance = 1e-5;
constexpr std::size_t kBlobAlignment = 8;

std::string read_file(const std::filesystem::path& path, BundleErrorCode missing_code) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BundleError(missing_code, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (!in.good() && !in.eof())
        throw BundleError(BundleErrorCode::Io, "failed reading " + path.string());
    return std::move(buf).str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw BundleError(BundleErrorCode::Io, "failed writing " + path.string());
}

float decode_f32_le(const char* bytes) {
    std::uint32_t u = 0;
    for (int i = 3; i >= 0; --i) u = (u << 8) | static_cast<unsigned char>(bytes[i]);
    return std::bit_cast<float>(u);
}

void encode_f32_le(float value, std::string& out) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(value);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

Tensor decode_tensor(const std::string& name, const ordered_json& record,
                     const std::string& blob) {
    if (!record.contains("shape") || !record.contains("dtype") || !record.contains("offset") ||
        !record.contains("length"))
        throw BundleError(BundleErrorCode::Parse, "tensor '" + name + "' record is incomplete");
    if (record["dtype"] != "f32")
        throw BundleError(BundleErrorCode::Parse,
                          "tensor '" + name + "' has unsupported dtype " +
                              record["dtype"].dump());
    const auto& shape = record["shape"];
    if (!shape.is_array() || shape.size() != 2)
        throw BundleError(BundleErrorCode::Parse, "tensor '" + name + "' shape must be 2-D");
    const auto rows = shape[0].get<std::size_t>();
    const auto cols = shape[1].get<std::size_t>();
    const auto offset = record["offset"].get<std::uint64_t>();
    const auto length = record["length"].get<std::uint64_t>();
    if (offset % kBlobAlignment != 0)
        throw BundleError(BundleErrorCode::Parse,
                          "tensor '" + name + "' offset is not 8-byte aligned");
    if (length != static_cast<std::uint64_t>(rows) * cols * sizeof(float))
        throw BundleError(BundleErrorCode::Parse,
                          "tensor '" + name + "' length does not match its shape");
    if (offset + length > blob.size())
        throw BundleError(BundleErrorCode::Parse,
                          "tensor '" + name + "' extends past the end of tensors.bin");
    Tensor t(rows, cols);
    auto values = t.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float v = decode_f32_le(blob.data() + offset + i * sizeof(float));
        if (!std::isfinite(v))
            throw BundleError(BundleErrorCode::Parse,
                              "tensor '" + name + "' contains a non-finite value");
        values[i] = static_cast<double>(v);
    }
    return t;
}

const Tensor& layer_tensor(const CalibrationBundle& bundle, const BundleLayer& layer,
                           const std::string& name) {
    auto it = bundle.tensors.find(name);
    if (it == bundle.tensors.end())
        throw BundleError(BundleErrorCode::MissingTensor,
                          "layer '" + layer.name + "' references absent tensor '" + name + "'",
                          layer.name);
    return it->second;
}

void validate_bundle(const CalibrationBundle& bundle) {
    for (const BundleLayer& layer : bundle.layers) {
        const Tensor& x = layer_tensor(bundle, layer, layer.x);
        const Tensor& y = layer_tensor(bundle, layer, layer.y);
        const Tensor& o = layer_tensor(bundle, layer, layer.o_ref);
        if (x.cols() != y.rows())
            throw BundleError(BundleErrorCode::ShapeMismatch,
                              "layer '" + layer.name + "': x columns (" +
                                  std::to_string(x.cols()) + ") do not match y rows (" +
                                  std::to_string(y.rows()) + ")",
                              layer.name);
        if (o.rows() != x.rows() || o.cols() != y.cols())
            throw BundleError(BundleErrorCode::ShapeMismatch,
                              "layer '" + layer.name + "': o_ref shape does not match x.y",
                              layer.name);
        if (layer.grad) {
            const Tensor& g = layer_tensor(bundle, layer, *layer.grad);
            if (!g.same_shape(o))
                throw BundleError(BundleErrorCode::ShapeMismatch,
                                  "layer '" + layer.name +
                                      "': gradient shape does not match o_ref",
                                  layer.name);
        }
        const double rel = relative_error(o, matmul(x, y));
        if (!(rel <= kRawOutputTolerance))
            throw BundleError(BundleErrorCode::RawOutputMismatch,
                              "layer '" + layer.name + "': stored o_ref deviates from x.y by " +
                                  std::to_string(rel) + " relative",
                              layer.name);
    }
}

}  // namespace

std::string bundle_error_code_name(BundleErrorCode code) {
    switch (code) {
        case BundleErrorCode::Io: return "io error";
        case BundleErrorCode::Parse: return "parse error";
        case BundleErrorCode::VersionMismatch: return "version mismatch";
        case BundleErrorCode::MissingTensor: return "missing tensor";
        case BundleErrorCode::ShapeMismatch: return "shape mismatch";
        case BundleErrorCode::RawOutputMismatch: return "raw output mismatch";
    }
    return "unknown error";
}

const Tensor& CalibrationBundle::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
        throw BundleError(BundleErrorCode::MissingTensor, "no tensor named '" + name + "'");
    return it->second;
}

CalibrationBundle load_bundle(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "manifest.json"))
        throw BundleError(BundleErrorCode::Io, "bundle not found: " + dir.string());
    const std::string manifest_text = read_file(dir / "manifest.json", BundleErrorCode::Io);
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(manifest_text);
    } catch (const std::exception& e) {
        throw BundleError(BundleErrorCode::Parse,
                          "manifest.json is not valid JSON: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "fpq-bundle")
        throw BundleError(BundleErrorCode::VersionMismatch,
                          "manifest format marker is not 'fpq-bundle'");
    if (manifest.value("version", -1) != kBundleVersion)
        throw BundleError(BundleErrorCode::VersionMismatch,
                          "unsupported bundle version " + manifest["version"].dump() +
                              " (expected " + std::to_string(kBundleVersion) + ")");

    const std::string blob = read_file(dir / "tensors.bin", BundleErrorCode::Io);

    CalibrationBundle bundle;
    try {
        for (const auto& [name, record] : manifest.at("tensors").items())
            bundle.tensors.emplace(name, decode_tensor(name, record, blob));
        for (const auto& entry : manifest.at("layers")) {
            BundleLayer layer;
            layer.name = entry.at("name").get<std::string>();
            layer.kind = parse_layer_kind(entry.at("kind").get<std::string>());
            layer.x = entry.at("x").get<std::string>();
            layer.y = entry.at("y").get<std::string>();
            layer.o_ref = entry.at("o_ref").get<std::string>();
            if (entry.contains("grad")) layer.grad = entry.at("grad").get<std::string>();
            bundle.layers.push_back(std::move(layer));
        }
    } catch (const BundleError&) {
        throw;
    } catch (const std::exception& e) {
        throw BundleError(BundleErrorCode::Parse, e.what());
    }
    for (std::size_t i = 0; i < bundle.layers.size(); ++i)
        for (std::size_t j = i + 1; j < bundle.layers.size(); ++j)
            if (bundle.layers[i].name == bundle.layers[j].name)
                throw BundleError(BundleErrorCode::Parse,
                                  "duplicate layer name '" + bundle.layers[i].name + "'");
    validate_bundle(bundle);
    return bundle;
}

void save_bundle(const CalibrationBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    std::string blob;
    ordered_json tensor_records = ordered_json::object();
    for (const auto& [name, tensor] : bundle.tensors) {
        while (blob.size() % kBlobAlignment != 0) blob.push_back('\0');
        const std::uint64_t offset = blob.size();
        for (double v : tensor.values()) encode_f32_le(static_cast<float>(v), blob);
        tensor_records[name] = {{"shape", {tensor.rows(), tensor.cols()}},
                                {"dtype", "f32"},
                                {"offset", offset},
                                {"length", tensor.size() * sizeof(float)}};
    }

    ordered_json layers = ordered_json::array();
    for (const BundleLayer& layer : bundle.layers) {
        ordered_json entry = {{"name", layer.name},
                              {"kind", layer_kind_name(layer.kind)},
                              {"x", layer.x},
                              {"y", layer.y},
                              {"o_ref", layer.o_ref}};
        if (layer.grad) entry["grad"] = *layer.grad;
        layers.push_back(std::move(entry));
    }

    ordered_json manifest = {{"format", "fpq-bundle"},
                             {"version", bundle.version},
                             {"layers", std::move(layers)},
                             {"tensors", std::move(tensor_records)}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    write_file(dir / "tensors.bin", blob);
}

namespace {

// Fixed Gaussian stream: mt19937_64 bits through the Box-Muller transform.
// std::normal_distribution's sequence is implementation-defined, which would
// break the identical-bytes contract across standard libraries.
class GaussianSource {
public:
    explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

    double next() {
        const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;          // [0, 1)
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 rng_;
};

double snap_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

CalibrationBundle synth_bundle(const SynthSpec& spec) {
    if (spec.layers == 0 || spec.tokens == 0 || spec.channels == 0)
        throw std::invalid_argument("synth_bundle: layers, tokens and channels must be positive");
    if (spec.outlier_channels >= spec.channels)
        throw std::invalid_argument("synth_bundle: outlier channel count must be below the "
                                    "channel count");

    GaussianSource gauss(spec.seed);
    CalibrationBundle bundle;
    for (std::size_t l = 0; l < spec.layers; ++l) {
        Tensor x(spec.tokens, spec.channels);
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) {
                double v = gauss.next();
                if (c < spec.outlier_channels) v *= spec.outlier_scale;
                x.at(r, c) = snap_f32(v);
            }
        Tensor w(spec.channels, spec.channels);
        for (double& v : w.values()) v = snap_f32(gauss.next());
        Tensor o = matmul(x, w);
        for (double& v : o.values()) v = snap_f32(v);

        const std::string prefix = "layer" + std::to_string(l);
        bundle.layers.push_back(
            {prefix, LayerKind::WeightMatmul, prefix + ".x", prefix + ".w", prefix + ".o", {}});
        bundle.tensors.emplace(prefix + ".x", std::move(x));
        bundle.tensors.emplace(prefix + ".w", std::move(w));
        bundle.tensors.emplace(prefix + ".o", std::move(o));
    }
    return bundle;
}

ChannelStatsReport channel_stats(const Tensor& act) {
    ChannelStatsReport report;
    if (act.cols() == 0 || act.rows() == 0) return report;
    const double n = static_cast<double>(act.rows());
    report.channels.resize(act.cols());
    std::vector<double> means(act.cols(), 0.0);
    for (std::size_t c = 0; c < act.cols(); ++c) {
        ChannelStats& s = report.channels[c];
        double sum = 0.0;
        for (std::size_t r = 0; r < act.rows(); ++r) {
            const double v = act.at(r, c);
            s.max_abs = std::fmax(s.max_abs, std::fabs(v));
            s.mean_abs += std::fabs(v);
            sum += v;
        }
        s.mean_abs /= n;
        means[c] = sum / n;
        for (std::size_t r = 0; r < act.rows(); ++r) {
            const double d = act.at(r, c) - means[c];
            s.variance += d * d;
        }
        s.variance /= n;
        report.mean_intra_channel_variance += s.variance;
    }
    report.mean_intra_channel_variance /= static_cast<double>(act.cols());

    double mean_of_means = 0.0;
    for (double m : means) mean_of_means += m;
    mean_of_means /= static_cast<double>(means.size());
    for (double m : means) {
        const double d = m - mean_of_means;
        report.inter_channel_variance += d * d;
    }
    report.inter_channel_variance /= static_cast<double>(means.size());
    return report;
}

std::uint64_t bundle_digest(const std::filesystem::path& dir) {
    std::uint64_t hash = 14695981039346656037ull;
    const auto mix = [&hash](const std::string& bytes) {
        for (unsigned char b : bytes) {
            hash ^= b;
            hash *= 1099511628211ull;
        }
    };
    mix(read_file(dir / "manifest.json", BundleErrorCode::Io));
    mix(read_file(dir / "tensors.bin", BundleErrorCode::Io));
    return hash;
}

}  // namespace fpq
