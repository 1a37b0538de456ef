// SPDX-License-Identifier: Apache-2.0
//
// Calibration-bundle serialization. A bundle is a directory holding
// manifest.json plus one raw blob tensors.bin of little-endian IEEE 754
// single-precision values; tensor records carry name, shape, byte offset and
// byte length, with offsets aligned to 8 bytes. The schema is documented
// field by field in docs/bundle-format.md.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fpq/matmul.hpp"
#include "fpq/tensor.hpp"

namespace fpq {

inline constexpr int kBundleVersion = 1;

enum class BundleErrorCode {
    Io,
    Parse,
    VersionMismatch,
    MissingTensor,
    ShapeMismatch,
    RawOutputMismatch,
};

std::string bundle_error_code_name(BundleErrorCode code);

class BundleError : public std::runtime_error {
public:
    BundleError(BundleErrorCode code, const std::string& message, std::string layer = "")
        : std::runtime_error(bundle_error_code_name(code) + ": " + message),
          code_(code),
          layer_(std::move(layer)) {}

    BundleErrorCode code() const noexcept { return code_; }
    const std::string& layer() const noexcept { return layer_; }

private:
    BundleErrorCode code_;
    std::string layer_;
};

// One matrix-multiplication layer: operand tensor names resolved against the
// bundle's tensor store. Row j of y multiplies activation channel j.
struct BundleLayer {
    std::string name;
    LayerKind kind = LayerKind::WeightMatmul;
    std::string x;
    std::string y;
    std::string o_ref;
    std::optional<std::string> grad;
};

struct CalibrationBundle {
    int version = kBundleVersion;
    std::vector<BundleLayer> layers;
    std::map<std::string, Tensor> tensors;

    const Tensor& tensor(const std::string& name) const;
};

// Loads and fully validates a bundle: every referenced tensor exists, shapes
// compose for matmul, values are finite, and each stored o_ref matches x.y
// to within 1e-5 relative Frobenius error. Throws BundleError with a
// distinct code (naming the offending layer where one exists).
CalibrationBundle load_bundle(const std::filesystem::path& dir);

// Writes manifest.json and tensors.bin under `dir` (created if absent) in
// canonical form: tensors packed in sorted name order at 8-byte-aligned
// offsets, manifest fields in fixed order. Values are rounded to single
// precision. save(load(dir)) reproduces canonical bundles byte for byte.
void save_bundle(const CalibrationBundle& bundle, const std::filesystem::path& dir);

// Parameters for synthetic calibration data modeling the high
// inter-channel, low intra-channel variance pattern of transformer
// activations: the first `outlier_channels` activation channels are scaled
// by `outlier_scale`.
struct SynthSpec {
    std::size_t layers = 1;
    std::size_t tokens = 32;
    std::size_t channels = 16;
    std::size_t outlier_channels = 0;
    double outlier_scale = 1.0;
    std::uint64_t seed = 0;
};

// Deterministic synthetic bundle: Gaussian activations and weights from a
// fixed generator (identical spec gives identical bytes after save), raw
// outputs computed after rounding operands to single precision so stored
// products validate exactly.
CalibrationBundle synth_bundle(const SynthSpec& spec);

struct ChannelStats {
    double max_abs = 0.0;
    double mean_abs = 0.0;
    double variance = 0.0;  // population variance of the channel's values
};

struct ChannelStatsReport {
    std::vector<ChannelStats> channels;
    double inter_channel_variance = 0.0;      // population variance of channel means
    double mean_intra_channel_variance = 0.0;
};

// Per-channel magnitude statistics of a 2-D activation tensor, plus the
// inter- versus intra-channel variance summary.
ChannelStatsReport channel_stats(const Tensor& act);

// FNV-1a 64-bit digest over manifest.json followed by tensors.bin.
std::uint64_t bundle_digest(const std::filesystem::path& dir);

}  // namespace fpq
