#include "cfx/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "cfx/error.hpp"

namespace cfx::io {

std::uint8_t to_byte(double v) {
    const double scaled = std::round((v + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

double from_byte(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

Image quantize(const Image& image) {
    std::vector<double> px(image.pixels().begin(), image.pixels().end());
    for (double& v : px) v = from_byte(to_byte(v));
    return Image(image.side(), std::move(px));
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    cv::Mat mat(image.side(), image.side(), CV_8UC1);
    const auto px = image.pixels();
    for (int r = 0; r < image.side(); ++r) {
        auto* row = mat.ptr<std::uint8_t>(r);
        for (int c = 0; c < image.side(); ++c) {
            row[c] = to_byte(px[static_cast<std::size_t>(r) * image.side() + c]);
        }
    }
    std::vector<std::uint8_t> out;
    if (!cv::imencode(".png", mat, out)) throw RuntimeFailure("PNG encoding failed");
    return out;
}

Image decode_image(std::span<const std::uint8_t> bytes, int resolution) {
    if (bytes.empty()) throw ValidationError("empty image payload");
    cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1,
                const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat mat;
    try {
        mat = cv::imdecode(raw, cv::IMREAD_GRAYSCALE);
    } catch (const cv::Exception&) {
        mat.release();
    }
    if (mat.empty()) throw ValidationError("image payload does not decode");
    if (mat.depth() != CV_8U) {
        cv::Mat tmp;
        mat.convertTo(tmp, CV_8U, mat.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
        mat = tmp;
    }
    if (resolution == 0) {
        if (mat.rows != mat.cols) {
            throw ValidationError("image is " + std::to_string(mat.cols) + "x" +
                                  std::to_string(mat.rows) + ", expected a square image");
        }
        resolution = mat.rows;
    }
    if (mat.rows != resolution || mat.cols != resolution) {
        cv::Mat resized;
        const bool shrink = mat.rows > resolution || mat.cols > resolution;
        cv::resize(mat, resized, cv::Size(resolution, resolution), 0, 0,
                   shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
        mat = resized;
    }
    std::vector<double> px(static_cast<std::size_t>(resolution) * resolution);
    for (int r = 0; r < resolution; ++r) {
        const auto* row = mat.ptr<std::uint8_t>(r);
        for (int c = 0; c < resolution; ++c) {
            px[static_cast<std::size_t>(r) * resolution + c] = from_byte(row[c]);
        }
    }
    return Image(resolution, std::move(px));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_png(const std::filesystem::path& path, const Image& image) {
    const auto bytes = encode_png(image);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw RuntimeFailure("cannot write " + path.string());
}

Image read_image(const std::filesystem::path& path, int resolution) {
    const auto bytes = read_file(path);
    try {
        return decode_image(bytes, resolution);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

}  // namespace cfx::io
