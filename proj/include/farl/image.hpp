#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "farl/tensor.hpp"

namespace farl {

/// Channel-major, row-major image. Raw images hold values in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
        : height(h), width(w), channels(c), pixels(h * w * c, fill) {
        if (h == 0 || w == 0 || c == 0) throw ShapeError("image dims must be positive");
    }

    std::size_t plane() const { return height * width; }

    std::span<double> channel(std::size_t c) { return {pixels.data() + c * plane(), plane()}; }
    std::span<const double> channel(std::size_t c) const { return {pixels.data() + c * plane(), plane()}; }

    double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

    /// Pixel-major [H*W, C] layout used by the convolutional streams.
    Tensor to_hwc() const {
        Tensor t = Tensor::matrix(plane(), channels);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < plane(); ++i) t[i * channels + c] = pixels[c * plane() + i];
        return t;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Circular translation by (dy, dx), wrapping at the borders.
inline Image circular_shift(const Image& img, long dy, long dx) {
    Image out(img.height, img.width, img.channels);
    const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
    for (std::size_t c = 0; c < img.channels; ++c)
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x)
                out.at(c, static_cast<std::size_t>(((y + dy) % h + h) % h),
                       static_cast<std::size_t>(((x + dx) % w + w) % w)) =
                    img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    return out;
}

}  // namespace farl
