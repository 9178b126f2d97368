#pragma once

#include <span>
#include <vector>

#include "farl/model.hpp"

namespace farl {

struct LossConfig {
    double alpha = 0.5;   // class-feature vs representation-feature CE mix
    double lambda = 1.0;  // weight of the two cosine regularizers

    void validate() const {
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
        if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    }
};

/// 1 - cos(f, f_frozen) as a scalar node.
inline Var cosine_reg(Var f, Var f_frozen) {
    Graph& g = *f.graph;
    return sub(g.constant(Tensor::scalar(1.0)), cosine_similarity(f, f_frozen));
}

/// Mean over rows of 1 - cos(row_i, frozen_i).
inline Var cosine_reg_rows(Var feats, Var frozen) {
    if (feats.rows() != frozen.rows() || feats.cols() != frozen.cols())
        throw ShapeError("cosine_reg_rows: " + shape_string(feats.shape()) + " vs " + shape_string(frozen.shape()));
    std::vector<Var> terms;
    for (std::size_t i = 0; i < feats.rows(); ++i)
        terms.push_back(cosine_reg(slice_rows(feats, i, 1), slice_rows(frozen, i, 1)));
    return mean(concat_rows(terms));
}

struct LossTerms {
    std::optional<Var> ce_class;  // L_ce(f_v), absent when alpha == 0
    std::optional<Var> ce_rep;    // L_ce(f_r), absent when alpha == 1
    Var cos_visual;
    Var cos_text;
    Var total;
};

/// alpha*CE(f_v) + (1-alpha)*CE(f_r) + lambda*(L_cos^v + L_cos^t) for one image. The text
/// regularizer averages over the candidate class prompts.
inline LossTerms farl_loss(const FarlOutputs& out, int label, const Tensor& frozen_class_feature,
                           const std::vector<ClassCache>& classes, const LossConfig& cfg) {
    cfg.validate();
    Graph& g = *out.logits_v.graph;
    LossTerms t;
    std::vector<Var> parts;
    if (cfg.alpha > 0.0) {
        t.ce_class = cross_entropy(out.logits_v, label);
        parts.push_back(scale(*t.ce_class, cfg.alpha));
    }
    if (cfg.alpha < 1.0) {
        if (!out.logits_r) throw UsageError("farl_loss: representation logits missing");
        t.ce_rep = cross_entropy(*out.logits_r, label);
        parts.push_back(scale(*t.ce_rep, 1.0 - cfg.alpha));
    }
    t.cos_visual = cosine_reg(out.class_feature, g.constant(frozen_class_feature));
    Tensor frozen_text = Tensor::matrix(classes.size(), out.text_features.cols());
    for (std::size_t c = 0; c < classes.size(); ++c)
        std::copy(classes[c].frozen_text_feature.data().begin(), classes[c].frozen_text_feature.data().end(),
                  frozen_text.ptr() + c * frozen_text.cols());
    t.cos_text = cosine_reg_rows(out.text_features, g.constant(std::move(frozen_text)));
    parts.push_back(scale(add(t.cos_visual, t.cos_text), cfg.lambda));
    Var total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
    t.total = total;
    return t;
}

/// Symmetric InfoNCE over a batch of paired unit features [B, E].
inline Var info_nce(Var image_feats, Var text_feats, double temperature) {
    const std::size_t b = image_feats.rows();
    std::vector<int> labels(b);
    for (std::size_t i = 0; i < b; ++i) labels[i] = static_cast<int>(i);
    Var logits = scale(matmul_nt(image_feats, text_feats), 1.0 / temperature);
    Var i2t = cross_entropy(logits, labels);
    Var t2i = cross_entropy(transpose(logits), labels);
    return scale(add(i2t, t2i), 0.5);
}

}  // namespace farl
