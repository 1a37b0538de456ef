// SPDX-License-Identifier: Apache-2.0

#include "fpq/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace fpq {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows * cols)
        throw std::invalid_argument("Tensor: value count does not match shape");
}

Tensor matmul(const Tensor& x, const Tensor& y) {
    if (x.cols() != y.rows()) throw std::invalid_argument("matmul: inner dimensions disagree");
    Tensor out(x.rows(), y.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto xi = x.row(i);
        auto oi = out.row(i);
        for (std::size_t k = 0; k < x.cols(); ++k) {
            const double xik = xi[k];
            if (xik == 0.0) continue;
            auto yk = y.row(k);
            for (std::size_t j = 0; j < y.cols(); ++j) oi[j] += xik * yk[j];
        }
    }
    return out;
}

double relative_error(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("relative_error: shape mismatch");
    double num = 0.0, den = 0.0;
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        num += d * d;
        den += bv[i] * bv[i];
    }
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(num / den);
}

}  // namespace fpq
