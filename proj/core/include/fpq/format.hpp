// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact mathematics of ExMy mini-float formats: representable grids,
// clipping maxima, exponent-bias/scale conversion and scalar quantization.
// All emulation is carried out in double precision; quantized values are
// materialized as dequantized reals.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fpq {

// An ExMy mini-float format: 1 sign bit, `exponent_bits` exponent bits and
// `mantissa_bits` mantissa bits. Total width q = 1 + e + m.
//
// e = 1 degenerates to a uniform (INT-like) grid and is a valid format;
// e = 0 is not representable here.
struct FpFormat {
    int exponent_bits = 0;
    int mantissa_bits = 0;

    constexpr int bit_width() const noexcept { return 1 + exponent_bits + mantissa_bits; }

    bool operator==(const FpFormat&) const = default;
};

// "E2M1"-style display name.
std::string format_name(const FpFormat& fmt);

// Parses "E2M1"-style names. Throws std::invalid_argument on malformed input
// or formats with e < 1 / m < 0.
FpFormat parse_format(const std::string& name);

// Throws std::invalid_argument unless e >= 1 and m >= 0.
void validate_format(const FpFormat& fmt);

// A format together with a tensor-wise real-valued exponent bias. The bias
// absorbs the conventional scaling factor: scale = 2^(-bias).
struct QuantScheme {
    FpFormat format;
    double bias = 0.0;
};

// Largest representable magnitude of `fmt` under exponent bias `bias`:
//   (2 - 2^-m) * 2^(2^e - bias - 1)
// The range is symmetric; the minimum is the negation.
double clip_max(const FpFormat& fmt, double bias);

// Inverse of clip_max: the real-valued bias whose clipping maximum is `qmax`.
// Round-trips with clip_max to within a few ulps. Throws std::domain_error
// for qmax <= 0.
double bias_from_clip_max(const FpFormat& fmt, double qmax);

// All non-negative representable magnitudes of `fmt` at bias 0, strictly
// ascending. The grid is the subnormal band {f * 2^(1-m) : f = 0 .. 2^m - 1}
// followed by the normal binades {2^p * (1 + f/2^m) : p = 1 .. 2^e - 1}.
// Its maximum equals clip_max(fmt, 0). Scaling every element by 2^(-bias)
// yields the representable magnitudes of an arbitrary scheme.
std::vector<double> unit_grid(const FpFormat& fmt);

// Candidate formats of one total bit width (sign + exponent + mantissa),
// largest exponent field first. Mantissa-free layouts are kept only at
// widths of four bits or less; wider candidates always carry at least one
// mantissa bit. Throws std::domain_error for widths below three.
std::vector<FpFormat> format_space(int bit_width);

// Quantization step in the unit (bias-0) grid for a clipped input:
//   2^(floor(log2|x| + bias) - m)  when floor(log2|x| + bias) >= 1,
//   2^(1 - m)                      otherwise (including x = 0).
double step_size(double x_clipped, const FpFormat& fmt, double bias);

// Quantizes one value: clip to [-clip_max, +clip_max], pick the step for the
// value's binade, round to the nearest step multiple (ties to even) and
// rescale. The result is always an element of the signed, scaled grid.
// Throws std::domain_error on non-finite input.
double quantize_value(double x, const QuantScheme& scheme);

// O(grid-size) reference quantizer: scans the whole signed scaled grid for
// the nearest element, breaking exact midpoints toward the even step
// multiple. Slow by design; quantize_value must agree with it bit for bit,
// which `fpq verify` checks on demand.
double quantize_value_reference(double x, const QuantScheme& scheme);

}  // namespace fpq
