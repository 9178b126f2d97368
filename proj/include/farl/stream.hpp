#pragma once

#include <string>

#include "farl/image.hpp"
#include "farl/nn.hpp"

namespace farl {

enum class StreamTag { Phase, Amplitude };

/// Two stride-2 3x3 convolutions with zero padding, each followed by GELU.
/// The final feature map is read out as one token per spatial cell.
struct StreamCNN {
    std::size_t in_channels = 3;
    std::size_t hidden = 16;
    std::size_t d_rep = 64;
    Parameter w1, b1;  // [9*in, hidden], [1, hidden]
    Parameter w2, b2;  // [9*hidden, d_rep], [1, d_rep]

    StreamCNN() = default;
    StreamCNN(std::size_t channels, std::size_t hidden_width, std::size_t rep_width, nn::Rng& rng)
        : in_channels(channels), hidden(hidden_width), d_rep(rep_width) {
        w1 = Parameter(nn::fan_in_uniform(9 * in_channels, {9 * in_channels, hidden}, rng));
        b1 = Parameter(nn::fan_in_uniform(9 * in_channels, {1, hidden}, rng), false);
        w2 = Parameter(nn::fan_in_uniform(9 * hidden, {9 * hidden, d_rep}, rng));
        b2 = Parameter(nn::fan_in_uniform(9 * hidden, {1, d_rep}, rng), false);
    }

    static constexpr std::size_t kMinSide = 4;

    static std::size_t token_side(std::size_t n) { return (n + 3) / 4; }
    static std::size_t token_count(std::size_t h, std::size_t w) { return token_side(h) * token_side(w); }

    /// Patch tokens [N, d_rep] of a normalized image, N = ceil(H/4) * ceil(W/4).
    Var operator()(Graph& g, const Image& img) const {
        if (img.height < kMinSide || img.width < kMinSide)
            throw ShapeError("stream CNN needs at least 4x4 input, got " + std::to_string(img.height) + "x" +
                             std::to_string(img.width));
        if (img.channels != in_channels)
            throw ShapeError("stream CNN expects " + std::to_string(in_channels) + " channels, got " +
                             std::to_string(img.channels));
        ConvGeometry geo1{img.height, img.width, in_channels};
        Var x = g.constant(img.to_hwc());
        Var h1 = gelu(add_row(matmul(im2col(x, geo1), g.param(w1)), g.param(b1)));
        ConvGeometry geo2{geo1.out_height(), geo1.out_width(), hidden};
        return gelu(add_row(matmul(im2col(h1, geo2), g.param(w2)), g.param(b2)));
    }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + ".w1", self.w1);
        f(prefix + ".b1", self.b1);
        f(prefix + ".w2", self.w2);
        f(prefix + ".b2", self.b2);
    }
};

}  // namespace farl
