// SPDX-License-Identifier: Apache-2.0

#include "fpq/format.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>

namespace fpq {

std::string format_name(const FpFormat& fmt) {
    return "E" + std::to_string(fmt.exponent_bits) + "M" + std::to_string(fmt.mantissa_bits);
}

FpFormat parse_format(const std::string& name) {
    const auto fail = [&] {
        throw std::invalid_argument("invalid format name: '" + name + "' (expected e.g. E2M1)");
    };
    if (name.size() < 4 || (name[0] != 'E' && name[0] != 'e')) fail();
    const auto mpos = name.find_first_of("Mm", 1);
    if (mpos == std::string::npos || mpos == 1 || mpos + 1 >= name.size()) fail();
    for (size_t i = 1; i < name.size(); ++i) {
        if (i == mpos) continue;
        if (!std::isdigit(static_cast<unsigned char>(name[i]))) fail();
    }
    FpFormat fmt;
    fmt.exponent_bits = std::stoi(name.substr(1, mpos - 1));
    fmt.mantissa_bits = std::stoi(name.substr(mpos + 1));
    validate_format(fmt);
    return fmt;
}

void validate_format(const FpFormat& fmt) {
    if (fmt.exponent_bits < 1)
        throw std::invalid_argument("format requires at least one exponent bit, got " +
                                    format_name(fmt));
    if (fmt.mantissa_bits < 0)
        throw std::invalid_argument("format requires a non-negative mantissa width, got " +
                                    format_name(fmt));
}

double clip_max(const FpFormat& fmt, double bias) {
    const double mant_span = 2.0 - std::exp2(static_cast<double>(-fmt.mantissa_bits));
    const double exp_top = std::exp2(static_cast<double>(1 << fmt.exponent_bits) - bias - 1.0);
    return mant_span * exp_top;
}

double bias_from_clip_max(const FpFormat& fmt, double qmax) {
    if (!(qmax > 0.0))
        throw std::domain_error("clipping maximum must be positive, got " + std::to_string(qmax));
    const double mant_span = 2.0 - std::exp2(static_cast<double>(-fmt.mantissa_bits));
    // Dividing before the logarithm keeps the bias exact whenever qmax sits
    // on a grid top (the ratio is then a power of two), so tensors already
    // at a format's full range get an integer bias with no rounding dust.
    return static_cast<double>(1 << fmt.exponent_bits) - 1.0 + std::log2(mant_span / qmax);
}

std::vector<double> unit_grid(const FpFormat& fmt) {
    const int m = fmt.mantissa_bits;
    const int frac = 1 << m;
    std::vector<double> grid;
    grid.reserve(static_cast<size_t>(frac) * (1u << fmt.exponent_bits));
    const double sub_step = std::exp2(1 - m);
    for (int f = 0; f < frac; ++f) grid.push_back(f * sub_step);
    for (int p = 1; p <= (1 << fmt.exponent_bits) - 1; ++p) {
        const double base = std::exp2(p);
        for (int f = 0; f < frac; ++f)
            grid.push_back(base * (1.0 + static_cast<double>(f) / frac));
    }
    return grid;
}

std::vector<FpFormat> format_space(int bit_width) {
    if (bit_width < 3)
        throw std::domain_error("bit width must be at least 3, got " +
                                std::to_string(bit_width));
    const int min_mantissa = bit_width > 4 ? 1 : 0;
    std::vector<FpFormat> formats;
    for (int e = bit_width - 1 - min_mantissa; e >= 1; --e)
        formats.push_back({e, bit_width - 1 - e});
    return formats;
}

namespace {

// Binade of |x| * 2^bias without evaluating a logarithm: the step choice has
// to agree bit-for-bit with nearest-grid rounding of the scaled double.
inline double step_for_scaled(double scaled_abs, int mantissa_bits) {
    if (scaled_abs > 0.0) {
        const int p = std::ilogb(scaled_abs);
        if (p >= 1) return std::ldexp(1.0, p - mantissa_bits);
    }
    return std::ldexp(1.0, 1 - mantissa_bits);
}

}  // namespace

double step_size(double x_clipped, const FpFormat& fmt, double bias) {
    const double alpha = std::exp2(-bias);
    return step_for_scaled(std::fabs(x_clipped) / alpha, fmt.mantissa_bits);
}

double quantize_value(double x, const QuantScheme& scheme) {
    if (!std::isfinite(x)) throw std::domain_error("quantize_value: non-finite input");
    if (x == 0.0) return x;

    const double qmax = clip_max(scheme.format, scheme.bias);
    const double clipped = std::fmin(std::fmax(x, -qmax), qmax);

    const double alpha = std::exp2(-scheme.bias);
    const double scaled_abs = std::fabs(clipped) / alpha;
    const double step = alpha * step_for_scaled(scaled_abs, scheme.format.mantissa_bits);
    // nearbyint rounds half to even in the default FP environment.
    return step * std::nearbyint(clipped / step);
}

double quantize_value_reference(double x, const QuantScheme& scheme) {
    if (!std::isfinite(x)) throw std::domain_error("quantize_value_reference: non-finite input");
    if (x == 0.0) return x;

    const double qmax = clip_max(scheme.format, scheme.bias);
    const double clipped = std::fmin(std::fmax(x, -qmax), qmax);
    const double alpha = std::exp2(-scheme.bias);
    const double target = std::fabs(clipped) / alpha;

    const std::vector<double> grid = unit_grid(scheme.format);
    std::size_t best = 0;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const double d_i = std::fabs(target - grid[i]);
        const double d_best = std::fabs(target - grid[best]);
        if (d_i < d_best) {
            best = i;
        } else if (d_i == d_best) {
            // Exact midpoint between two adjacent grid values: take the even
            // multiple of their spacing.
            const double spacing = grid[i] - grid[best];
            if (std::fmod(grid[best] / spacing, 2.0) != 0.0) best = i;
        }
    }
    return std::copysign(alpha * grid[best], clipped);
}

}  // namespace fpq
