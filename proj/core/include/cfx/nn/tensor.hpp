#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cfx::nn {

/// NCHW extent. Dense activations use h = w = 1.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    /// Elements per batch item.
    std::size_t item() const { return static_cast<std::size_t>(c) * h * w; }

    friend bool operator==(const Shape&, const Shape&) = default;
    std::string str() const;
};

/// Dense row-major NCHW buffer of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int h, int w) {
        return data_[index(n, c, h, w)];
    }
    double at(int n, int c, int h, int w) const {
        return data_[index(n, c, h, w)];
    }

    void fill(double v);
    Tensor reshaped(Shape shape) const;
    Tensor batch_item(int i) const;

    /// Concatenates along the batch axis; all items must share c, h, w.
    static Tensor stack(std::span<const Tensor> items);

private:
    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
                   shape_.w +
               w;
    }

    Shape shape_{0, 0, 0, 0};
    std::vector<double> data_;
};

}  // namespace cfx::nn
