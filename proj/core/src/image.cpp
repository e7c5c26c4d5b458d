#include "cfx/image.hpp"

#include <cmath>

#include "cfx/error.hpp"

namespace cfx {

std::string_view to_string(Label label) {
    return label == Label::Normal ? "NORMAL" : "OPACITY";
}

std::string_view to_string(Split split) {
    switch (split) {
        case Split::Train: return "TRAIN";
        case Split::Val: return "VAL";
        case Split::Test: return "TEST";
    }
    return "TRAIN";
}

Label parse_label(std::string_view text) {
    if (text == "NORMAL") return Label::Normal;
    if (text == "OPACITY") return Label::Opacity;
    throw ValidationError("unknown label '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
    if (text == "TRAIN") return Split::Train;
    if (text == "VAL") return Split::Val;
    if (text == "TEST") return Split::Test;
    throw ValidationError("unknown split '" + std::string(text) + "'");
}

Image::Image(int side, std::vector<double> pixels) : side_(side), pixels_(std::move(pixels)) {
    if (side <= 0) throw ValidationError("image side must be positive");
    if (pixels_.size() != static_cast<std::size_t>(side) * side) {
        throw ValidationError("image has " + std::to_string(pixels_.size()) +
                              " pixels, expected " + std::to_string(side) + "x" +
                              std::to_string(side));
    }
    for (double v : pixels_) {
        if (!(v >= -1.0 && v <= 1.0)) {
            throw ValidationError("pixel value " + std::to_string(v) + " outside [-1, 1]");
        }
    }
}

Image Image::filled(int side, double value) {
    return Image(side, std::vector<double>(static_cast<std::size_t>(side) * side, value));
}

Image Image::from_tensor(const nn::Tensor& t, int index) {
    const auto& s = t.shape();
    if (s.c != 1 || s.h != s.w) {
        throw ValidationError("tensor " + s.str() + " is not a batch of square grayscale images");
    }
    const auto begin = t.values().begin() + static_cast<std::ptrdiff_t>(index * s.item());
    return Image(s.h, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(s.item())));
}

nn::Tensor Image::to_tensor() const {
    return nn::Tensor(nn::Shape{1, 1, side_, side_}, pixels_);
}

nn::Tensor Image::batch(std::span<const Image> images) {
    if (images.empty()) throw ValidationError("empty image batch");
    const int side = images.front().side();
    std::vector<double> data;
    data.reserve(images.size() * static_cast<std::size_t>(side) * side);
    for (const auto& im : images) {
        if (im.side() != side) throw ValidationError("mixed image sizes in one batch");
        data.insert(data.end(), im.pixels_.begin(), im.pixels_.end());
    }
    return nn::Tensor(nn::Shape{static_cast<int>(images.size()), 1, side, side}, std::move(data));
}

double mean_abs_diff(const Image& a, const Image& b) {
    if (a.side() != b.side()) throw ValidationError("image sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels().size(); ++i) s += std::abs(a.pixels()[i] - b.pixels()[i]);
    return s / static_cast<double>(a.pixels().size());
}

}  // namespace cfx
