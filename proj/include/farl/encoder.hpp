#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "farl/image.hpp"
#include "farl/nn.hpp"

namespace farl {

class TokenizationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct EncoderConfig {
    std::size_t layers = 6;        // L
    std::size_t inject_layer = 3;  // J, 1-based
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t patch = 4;
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::size_t d_embed = 32;
    std::size_t mlp_ratio = 4;
    std::size_t max_words = 8;
    double temperature = 0.07;
    double pixel_mean = 0.5;  // patches see (x - pixel_mean) / pixel_std
    double pixel_std = 0.25;
    bool propagate_rep = false;  // insert at J only instead of overwriting at every layer >= J

    std::size_t patches_per_side() const { return image_size / patch; }
    std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }

    void validate() const {
        if (layers == 0 || inject_layer < 1 || inject_layer > layers)
            throw ShapeError("encoder config: need 1 <= inject_layer <= layers");
        if (heads == 0 || d_model % heads != 0) throw ShapeError("encoder config: d_model not divisible by heads");
        if (patch == 0 || image_size % patch != 0) throw ShapeError("encoder config: image size not divisible by patch");
        if (!(pixel_std > 0.0)) throw ShapeError("encoder config: pixel_std must be positive");
    }
};

/// Fixed word list; ids follow line order.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
        for (std::size_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], static_cast<int>(i));
    }

    int id(const std::string& word) const {
        auto it = index_.find(word);
        if (it == index_.end()) throw TokenizationError("unknown vocabulary word '" + word + "'");
        return it->second;
    }

    std::vector<int> tokenize(const std::string& text) const {
        std::istringstream is(text);
        std::vector<int> ids;
        for (std::string w; is >> w;) ids.push_back(id(w));
        return ids;
    }

    /// Token ids of "a photo of a <class_name>".
    std::vector<int> prompt(const std::string& class_name) const { return tokenize("a photo of a " + class_name); }

    const std::vector<std::string>& words() const { return words_; }
    std::size_t size() const { return words_.size(); }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

struct ImageEncoder {
    nn::Linear patch_embed;
    Parameter cls, pos;
    std::vector<nn::TransformerLayer> blocks;
    nn::LayerNorm ln_post;
    Parameter proj;  // [d_model, d_embed]

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        nn::Linear::visit(self.patch_embed, prefix + ".patch_embed", f);
        f(prefix + ".cls", self.cls);
        f(prefix + ".pos", self.pos);
        for (std::size_t i = 0; i < self.blocks.size(); ++i)
            nn::TransformerLayer::visit(self.blocks[i], prefix + ".layer" + std::to_string(i + 1), f);
        nn::LayerNorm::visit(self.ln_post, prefix + ".ln_post", f);
        f(prefix + ".proj", self.proj);
    }
};

struct TextEncoder {
    Parameter token_embed;  // [vocab, d_model]
    Parameter bot, eot;
    Parameter pos;  // [max_words + 2, d_model]
    std::vector<nn::TransformerLayer> blocks;
    nn::LayerNorm ln_post;
    Parameter proj;

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        f(prefix + ".token_embed", self.token_embed);
        f(prefix + ".bot", self.bot);
        f(prefix + ".eot", self.eot);
        f(prefix + ".pos", self.pos);
        for (std::size_t i = 0; i < self.blocks.size(); ++i)
            nn::TransformerLayer::visit(self.blocks[i], prefix + ".layer" + std::to_string(i + 1), f);
        nn::LayerNorm::visit(self.ln_post, prefix + ".ln_post", f);
        f(prefix + ".proj", self.proj);
    }
};

/// The CLIP stand-in: paired image and text transformers.
struct Backbone {
    EncoderConfig cfg;
    Vocabulary vocab;
    ImageEncoder image;
    TextEncoder text;

    Backbone() = default;
    Backbone(const EncoderConfig& config, Vocabulary words, nn::Rng& rng) : cfg(config), vocab(std::move(words)) {
        cfg.validate();
        const std::size_t d = cfg.d_model;
        const std::size_t patch_dim = cfg.patch * cfg.patch * cfg.channels;
        image.patch_embed = nn::Linear(patch_dim, d, rng);
        image.cls = Parameter(nn::normal({1, d}, 0.02, rng), false);
        image.pos = Parameter(nn::normal({1 + cfg.num_patches(), d}, 0.02, rng), false);
        for (std::size_t i = 0; i < cfg.layers; ++i) image.blocks.emplace_back(d, cfg.heads, cfg.mlp_ratio, rng);
        image.ln_post = nn::LayerNorm(d);
        image.proj = Parameter(nn::fan_in_uniform(d, {d, cfg.d_embed}, rng));

        text.token_embed = Parameter(nn::normal({vocab.size(), d}, 0.02, rng), false);
        text.bot = Parameter(nn::normal({1, d}, 0.02, rng), false);
        text.eot = Parameter(nn::normal({1, d}, 0.02, rng), false);
        text.pos = Parameter(nn::normal({cfg.max_words + 2, d}, 0.02, rng), false);
        for (std::size_t i = 0; i < cfg.layers; ++i) text.blocks.emplace_back(d, cfg.heads, cfg.mlp_ratio, rng);
        text.ln_post = nn::LayerNorm(d);
        text.proj = Parameter(nn::fan_in_uniform(d, {d, cfg.d_embed}, rng));
    }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        ImageEncoder::visit(self.image, prefix + "image", f);
        TextEncoder::visit(self.text, prefix + "text", f);
    }
};

/// One D_rep -> D_model map per injected layer and side.
struct ProjectionBank {
    std::size_t first_layer = 1;
    std::vector<nn::Linear> image;  // image[j - first_layer] = P^v_j
    std::vector<nn::Linear> text;   // text[j - first_layer]  = P^t_j

    ProjectionBank() = default;
    ProjectionBank(const EncoderConfig& cfg, std::size_t d_rep, nn::Rng& rng) : first_layer(cfg.inject_layer) {
        for (std::size_t j = cfg.inject_layer; j <= cfg.layers; ++j) image.emplace_back(d_rep, cfg.d_model, rng);
        for (std::size_t j = cfg.inject_layer; j <= cfg.layers; ++j) text.emplace_back(d_rep, cfg.d_model, rng);
    }

    template <class Self, class F>
    static void visit(Self& self, const std::string& prefix, F&& f) {
        for (std::size_t i = 0; i < self.image.size(); ++i)
            nn::Linear::visit(self.image[i], prefix + ".image" + std::to_string(self.first_layer + i), f);
        for (std::size_t i = 0; i < self.text.size(); ++i)
            nn::Linear::visit(self.text[i], prefix + ".text" + std::to_string(self.first_layer + i), f);
    }
};

/// Representation tokens routed into one encoder side.
struct Injection {
    Var tokens;  // [K, d_rep]
    const std::vector<nn::Linear>* projections;
    std::size_t first_layer;
};

struct ImageFeatures {
    Var class_feature;                  // f_v, [1, d_embed], unit norm
    std::optional<Var> rep_feature;     // f_r
    std::vector<Tensor> layer_inputs;   // sequence entering each layer, when requested
};

namespace encoder_detail {

/// Runs layers [begin, end] (1-based) with REP slots at row offset `rep_row`.
inline Var run_layers(Graph& g, const std::vector<nn::TransformerLayer>& blocks, const EncoderConfig& cfg, Var x,
                      std::size_t begin, std::size_t end, const std::optional<Injection>& inj, std::size_t rep_row,
                      std::vector<Tensor>* states) {
    for (std::size_t j = begin; j <= end; ++j) {
        if (inj && j >= inj->first_layer) {
            const bool insert = j == inj->first_layer;
            if (insert || !cfg.propagate_rep) {
                Var rep = (*inj->projections)[j - inj->first_layer](g, inj->tokens);
                const std::size_t k = rep.rows();
                const std::size_t rest_begin = insert ? rep_row : rep_row + k;
                std::vector<Var> parts{slice_rows(x, 0, rep_row), rep};
                if (x.rows() > rest_begin) parts.push_back(slice_rows(x, rest_begin, x.rows() - rest_begin));
                x = concat_rows(parts);
            }
        }
        if (states) states->push_back(x.value());
        x = blocks[j - 1](g, x);
    }
    return x;
}

inline Tensor patchify(const Image& img, std::size_t patch, double mean = 0.0, double std = 1.0) {
    const std::size_t gh = img.height / patch, gw = img.width / patch;
    const std::size_t dim = patch * patch * img.channels;
    Tensor t = Tensor::matrix(gh * gw, dim);
    for (std::size_t py = 0; py < gh; ++py)
        for (std::size_t px = 0; px < gw; ++px)
            for (std::size_t c = 0; c < img.channels; ++c)
                for (std::size_t y = 0; y < patch; ++y)
                    for (std::size_t x = 0; x < patch; ++x)
                        t[(py * gw + px) * dim + (c * patch + y) * patch + x] =
                            (img.at(c, py * patch + y, px * patch + x) - mean) / std;
    return t;
}

inline Var project_normalize(Graph& g, const nn::LayerNorm& ln, const Parameter& proj, Var row) {
    return l2_normalize_rows(matmul(ln(g, row), g.param(proj)));
}

}  // namespace encoder_detail

/// [CLS, PATCH x N] plus positional embeddings.
inline Var image_embed(Graph& g, const Backbone& bb, const Image& img) {
    const auto& cfg = bb.cfg;
    if (img.height != cfg.image_size || img.width != cfg.image_size || img.channels != cfg.channels)
        throw ShapeError("image encoder expects " + std::to_string(cfg.image_size) + "x" +
                         std::to_string(cfg.image_size) + "x" + std::to_string(cfg.channels) + ", got " +
                         std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                         std::to_string(img.channels));
    Var patches = bb.image.patch_embed(g, g.constant(encoder_detail::patchify(img, cfg.patch, cfg.pixel_mean, cfg.pixel_std)));
    return add(concat_rows({g.param(bb.image.cls), patches}), g.param(bb.image.pos));
}

/// Sequence entering layer J for an image: embedding followed by layers 1..J-1.
/// It is independent of any injected tokens, so callers may cache it.
inline Tensor image_prefix_state(const Backbone& bb, const Image& img) {
    Graph g(false);
    Var x = image_embed(g, bb, img);
    return encoder_detail::run_layers(g, bb.image.blocks, bb.cfg, x, 1, bb.cfg.inject_layer - 1, std::nullopt, 1,
                                      nullptr)
        .value();
}

/// Layers J..L from a cached prefix. With an injection, REP slots follow CLS and
/// f_r is the projection of their final-layer mean; `rep_head` maps it to d_embed.
inline ImageFeatures image_from_prefix(Graph& g, const Backbone& bb, Var prefix, const std::optional<Injection>& inj,
                                       const Parameter* rep_head, std::vector<Tensor>* states = nullptr) {
    const auto& cfg = bb.cfg;
    Var x = encoder_detail::run_layers(g, bb.image.blocks, cfg, prefix, cfg.inject_layer, cfg.layers, inj, 1, states);
    ImageFeatures out;
    out.class_feature = encoder_detail::project_normalize(g, bb.image.ln_post, bb.image.proj, slice_rows(x, 0, 1));
    if (inj && rep_head) {
        const std::size_t k = inj->tokens.rows();
        Var pooled = mean_rows(slice_rows(x, 1, k));
        out.rep_feature = encoder_detail::project_normalize(g, bb.image.ln_post, *rep_head, pooled);
    }
    return out;
}

/// Full image encoder. Without an injection this is the plain encoder.
inline ImageFeatures encode_image(Graph& g, const Backbone& bb, const Image& img, const std::optional<Injection>& inj,
                                  const Parameter* rep_head = nullptr, bool keep_states = false) {
    const auto& cfg = bb.cfg;
    std::vector<Tensor> states;
    Var x = image_embed(g, bb, img);
    x = encoder_detail::run_layers(g, bb.image.blocks, cfg, x, 1, cfg.inject_layer - 1, std::nullopt, 1,
                                   keep_states ? &states : nullptr);
    ImageFeatures out = image_from_prefix(g, bb, x, inj, rep_head, keep_states ? &states : nullptr);
    out.layer_inputs = std::move(states);
    return out;
}

/// [BOT, WORD x M, EOT] plus positional embeddings.
inline Var text_embed(Graph& g, const Backbone& bb, const std::vector<int>& ids) {
    const auto& cfg = bb.cfg;
    if (ids.empty() || ids.size() > cfg.max_words)
        throw ShapeError("prompt length " + std::to_string(ids.size()) + " outside [1, " +
                         std::to_string(cfg.max_words) + "]");
    const std::size_t d = cfg.d_model;
    Tensor words = Tensor::matrix(ids.size(), d);
    const Tensor& table = bb.text.token_embed.value;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows())
            throw TokenizationError("token id " + std::to_string(ids[i]) + " outside vocabulary");
    }
    // Gather rows through a one-hot product so the embedding table receives gradients.
    Tensor onehot = Tensor::matrix(ids.size(), table.rows());
    for (std::size_t i = 0; i < ids.size(); ++i) onehot(i, static_cast<std::size_t>(ids[i])) = 1.0;
    Var w = matmul(g.constant(std::move(onehot)), g.param(bb.text.token_embed));
    Var seq = concat_rows({g.param(bb.text.bot), w, g.param(bb.text.eot)});
    Var pos = slice_rows(g.param(bb.text.pos), 0, ids.size() + 2);
    return add(seq, pos);
}

inline Tensor text_prefix_state(const Backbone& bb, const std::vector<int>& ids) {
    Graph g(false);
    Var x = text_embed(g, bb, ids);
    return encoder_detail::run_layers(g, bb.text.blocks, bb.cfg, x, 1, bb.cfg.inject_layer - 1, std::nullopt, 1,
                                      nullptr)
        .value();
}

/// Layers J..L of the text encoder from a cached prefix; REP slots sit after BOT.
inline Var text_from_prefix(Graph& g, const Backbone& bb, Var prefix, const std::optional<Injection>& inj,
                            std::vector<Tensor>* states = nullptr) {
    const auto& cfg = bb.cfg;
    Var x = encoder_detail::run_layers(g, bb.text.blocks, cfg, prefix, cfg.inject_layer, cfg.layers, inj, 1, states);
    return encoder_detail::project_normalize(g, bb.text.ln_post, bb.text.proj, slice_rows(x, x.rows() - 1, 1));
}

/// f_t for a tokenized prompt.
inline Var encode_text(Graph& g, const Backbone& bb, const std::vector<int>& ids, const std::optional<Injection>& inj,
                       std::vector<Tensor>* states = nullptr) {
    const auto& cfg = bb.cfg;
    Var x = text_embed(g, bb, ids);
    x = encoder_detail::run_layers(g, bb.text.blocks, cfg, x, 1, cfg.inject_layer - 1, std::nullopt, 1, states);
    return text_from_prefix(g, bb, x, inj, states);
}

/// logits[c] = <f_img, f_t,c> / tau for unit-norm features; class_feats is [C, d_embed].
inline Var similarity_logits(Var image_feature, Var class_feats, double temperature) {
    return scale(matmul_nt(image_feature, class_feats), 1.0 / temperature);
}

}  // namespace farl
