#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfx/nn/tensor.hpp"

namespace cfx {

/// Class index convention: 0 = NORMAL = domain X, 1 = OPACITY = domain Y.
enum class Label { Normal = 0, Opacity = 1 };
enum class Split { Train, Val, Test };

std::string_view to_string(Label label);
std::string_view to_string(Split split);
Label parse_label(std::string_view text);
Split parse_split(std::string_view text);

inline Label other(Label label) {
    return label == Label::Normal ? Label::Opacity : Label::Normal;
}

/// Square single-channel image with every pixel in [-1, 1].
class Image {
public:
    Image() = default;
    /// Throws ValidationError unless `pixels` is side*side values in [-1, 1].
    Image(int side, std::vector<double> pixels);

    static Image filled(int side, double value);
    /// Item `index` of an [N, 1, side, side] tensor.
    static Image from_tensor(const nn::Tensor& t, int index = 0);

    int side() const { return side_; }
    std::span<const double> pixels() const { return pixels_; }
    double at(int row, int col) const {
        return pixels_[static_cast<std::size_t>(row) * side_ + col];
    }
    bool empty() const { return pixels_.empty(); }

    nn::Tensor to_tensor() const;
    static nn::Tensor batch(std::span<const Image> images);

    friend bool operator==(const Image&, const Image&) = default;

private:
    int side_ = 0;
    std::vector<double> pixels_;
};

/// Mean absolute pixel difference.
double mean_abs_diff(const Image& a, const Image& b);

}  // namespace cfx
