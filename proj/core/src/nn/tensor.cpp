#include "cfx/nn/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace cfx::nn {

std::string Shape::str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw std::invalid_argument("negative tensor extent " + shape.str());
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape.numel()) {
        throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                    " does not match shape " + shape.str());
    }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
    if (shape.numel() != numel()) {
        throw std::invalid_argument("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
}

Tensor Tensor::batch_item(int i) const {
    if (i < 0 || i >= shape_.n) throw std::out_of_range("batch index out of range");
    const std::size_t step = shape_.item();
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(i * step),
                            data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * step));
    return Tensor(Shape{1, shape_.c, shape_.h, shape_.w}, std::move(out));
}

Tensor Tensor::stack(std::span<const Tensor> items) {
    if (items.empty()) throw std::invalid_argument("stack of zero tensors");
    Shape s = items.front().shape();
    int total = 0;
    for (const auto& t : items) {
        const auto& ts = t.shape();
        if (ts.c != s.c || ts.h != s.h || ts.w != s.w) {
            throw std::invalid_argument("stack: mismatched item shapes " + s.str() +
                                        " vs " + ts.str());
        }
        total += ts.n;
    }
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(total) * s.item());
    for (const auto& t : items) data.insert(data.end(), t.data_.begin(), t.data_.end());
    s.n = total;
    return Tensor(s, std::move(data));
}

}  // namespace cfx::nn
