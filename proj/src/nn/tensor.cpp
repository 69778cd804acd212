#include "dprof/nn/tensor.hpp"

#include "dprof/error.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dprof::nn {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw std::invalid_argument("Tensor2: data length " + std::to_string(data_.size()) +
                                    " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

void Tensor2::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor2 Tensor2::transposed() const {
    Tensor2 t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

void Tensor2::check_finite(std::string_view what) const {
    for (double v : data_) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in " + std::string(what));
    }
}

void require_same_shape(const Tensor2& a, const Tensor2& b, std::string_view what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()));
    }
}

}  // namespace dprof::nn
