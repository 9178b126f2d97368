#pragma once

// Stage runners shared by the command-line tool and the acceptance binary. Each
// stage reads its inputs from disk and writes its outputs to disk, so stages can
// be run one at a time or chained.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "farl/eval.hpp"
#include "farl/io.hpp"

namespace farl {

namespace fs = std::filesystem;

/// An upstream artifact a stage depends on is absent.
class MissingArtifact : public io::IoError {
public:
    explicit MissingArtifact(const fs::path& p, const std::string& producer)
        : io::IoError("missing upstream artifact '" + p.string() + "' (run '" + producer + "' first)"), path_(p) {}
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

struct RunConfig {
    std::uint64_t seed = 0;
    fs::path data_dir = "farl_data";
    fs::path out_dir = "farl_out";

    std::size_t n_per_class = 128;
    EncoderConfig encoder{};
    PretrainConfig pretrain{};
    AdaptConfig adapt{};
    std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
    std::size_t num_seeds = 3;
    std::size_t eval_every = 0;  // 0: accuracy columns only on the last epoch
    EvalOptions eval{};
    bool decompose_normalized = false;

    RunConfig() {
        adapt.epochs = 15;
        adapt.batch = 4;
        adapt.lr = 1e-2;
        adapt.adapter.rep_init_std = 1.0;
        pretrain.epochs = 20;
    }

    /// Adapter seeds used by the ablation: seed, seed+1, ...
    std::vector<std::uint64_t> ablation_seeds() const {
        std::vector<std::uint64_t> s;
        for (std::size_t i = 0; i < num_seeds; ++i) s.push_back(seed + i);
        return s;
    }

    static const std::vector<std::string>& keys() {
        static const std::vector<std::string> k{
            "seed", "data_dir", "out_dir", "n_per_class",
            "layers", "inject_layer", "d_model", "heads", "d_embed", "mlp_ratio", "temperature", "propagate_rep",
            "pretrain_epochs", "pretrain_batch", "pretrain_lr",
            "k_tokens", "d_rep", "cnn_hidden", "attn_heads", "beta", "rep_init_std", "variant", "variants",
            "alpha", "lambda", "epochs", "batch", "lr", "weight_decay", "shots", "num_seeds", "eval_every",
            "base_weight", "condition_text", "decompose_normalized"};
        return k;
    }

    /// Fills fields present in `c`; absent keys keep their defaults.
    static RunConfig from(const io::Config& c) {
        c.check_keys(keys());
        RunConfig r;
        auto size = [&](const char* k, std::size_t d) { return static_cast<std::size_t>(c.get(k, std::uint64_t{d})); };
        r.seed = c.get("seed", r.seed);
        r.data_dir = c.get("data_dir", r.data_dir.string());
        r.out_dir = c.get("out_dir", r.out_dir.string());
        r.n_per_class = size("n_per_class", r.n_per_class);

        EncoderConfig& e = r.encoder;
        e.layers = size("layers", e.layers);
        e.inject_layer = size("inject_layer", e.inject_layer);
        e.d_model = size("d_model", e.d_model);
        e.heads = size("heads", e.heads);
        e.d_embed = size("d_embed", e.d_embed);
        e.mlp_ratio = size("mlp_ratio", e.mlp_ratio);
        e.temperature = c.get("temperature", e.temperature);
        e.propagate_rep = c.get("propagate_rep", e.propagate_rep);
        e.validate();

        r.pretrain.epochs = size("pretrain_epochs", r.pretrain.epochs);
        r.pretrain.batch = size("pretrain_batch", r.pretrain.batch);
        r.pretrain.lr = c.get("pretrain_lr", r.pretrain.lr);
        r.pretrain.validate();

        AdaptConfig& a = r.adapt;
        a.adapter.k_tokens = size("k_tokens", a.adapter.k_tokens);
        a.adapter.d_rep = size("d_rep", a.adapter.d_rep);
        a.adapter.cnn_hidden = size("cnn_hidden", a.adapter.cnn_hidden);
        a.adapter.attn_heads = size("attn_heads", a.adapter.attn_heads);
        a.adapter.beta = c.get("beta", a.adapter.beta);
        a.adapter.rep_init_std = c.get("rep_init_std", a.adapter.rep_init_std);
        a.adapter.variant = parse_variant(c.get("variant", std::string(variant_name(a.adapter.variant))));
        a.loss.alpha = c.get("alpha", a.loss.alpha);
        a.loss.lambda = c.get("lambda", a.loss.lambda);
        a.epochs = size("epochs", a.epochs);
        a.batch = size("batch", a.batch);
        a.lr = c.get("lr", a.lr);
        a.weight_decay = c.get("weight_decay", a.weight_decay);
        a.shots = size("shots", a.shots);
        a.condition_text = c.get("condition_text", a.condition_text);
        a.validate();

        if (c.has("variants")) {
            r.variants.clear();
            std::istringstream in(c.get("variants", std::string()));
            for (std::string tok; std::getline(in, tok, ',');)
                if (!tok.empty()) r.variants.push_back(parse_variant(tok));
            if (r.variants.empty()) throw ConfigError("variants list is empty");
        }
        r.num_seeds = size("num_seeds", r.num_seeds);
        if (r.num_seeds == 0) throw ConfigError("num_seeds must be >= 1");
        r.eval_every = size("eval_every", r.eval_every);
        r.eval.base_weight = c.get("base_weight", r.eval.base_weight);
        if (r.eval.base_weight < 0.0 || r.eval.base_weight > 1.0) throw ConfigError("base_weight must lie in [0, 1]");
        r.eval.condition_text = r.adapt.condition_text;
        r.decompose_normalized = c.get("decompose_normalized", r.decompose_normalized);
        return r;
    }

    fs::path backbone_path() const { return out_dir / "backbone.ckpt"; }
    fs::path adapter_path() const { return out_dir / "adapter.ckpt"; }
};

namespace detail {

inline void require_file(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p)) throw MissingArtifact(p, producer);
}

inline std::string metrics_header() { return "variant,seed,base_acc,novel_acc,hm\n"; }

inline std::string metrics_row(const Metrics& m) {
    return m.variant + "," + std::to_string(m.seed) + "," + io::fixed(m.base_acc) + "," + io::fixed(m.novel_acc) +
           "," + io::fixed(m.hm) + "\n";
}

inline std::uint64_t meta_u64(const io::Checkpoint& ck, const std::string& key) {
    const std::string& s = ck.require(key);
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw io::IoError("checkpoint metadata '" + key + "' is not an integer: '" + s + "'");
}

inline double meta_double(const io::Checkpoint& ck, const std::string& key) {
    const std::string& s = ck.require(key);
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw io::IoError("checkpoint metadata '" + key + "' is not a number: '" + s + "'");
}

}  // namespace detail

// ---------------------------------------------------------------- checkpoints of model objects

inline io::Checkpoint backbone_checkpoint(const Backbone& bb) {
    io::Checkpoint ck;
    const EncoderConfig& e = bb.cfg;
    ck.meta["kind"] = "backbone";
    ck.meta["layers"] = std::to_string(e.layers);
    ck.meta["inject_layer"] = std::to_string(e.inject_layer);
    ck.meta["d_model"] = std::to_string(e.d_model);
    ck.meta["heads"] = std::to_string(e.heads);
    ck.meta["patch"] = std::to_string(e.patch);
    ck.meta["image_size"] = std::to_string(e.image_size);
    ck.meta["channels"] = std::to_string(e.channels);
    ck.meta["d_embed"] = std::to_string(e.d_embed);
    ck.meta["mlp_ratio"] = std::to_string(e.mlp_ratio);
    ck.meta["max_words"] = std::to_string(e.max_words);
    ck.meta["temperature"] = io::exact(e.temperature);
    ck.meta["pixel_mean"] = io::exact(e.pixel_mean);
    ck.meta["pixel_std"] = io::exact(e.pixel_std);
    ck.meta["propagate_rep"] = e.propagate_rep ? "1" : "0";
    std::string words;
    for (const auto& w : bb.vocab.words()) words += (words.empty() ? "" : " ") + w;
    ck.meta["vocab"] = words;
    ck.add_module(bb, "");
    return ck;
}

/// Rebuilds a frozen backbone. The stored structure wins over whatever the caller's
/// config says; `inject_layer` alone may be overridden since it does not change weights.
inline Backbone backbone_from_checkpoint(const io::Checkpoint& ck) {
    if (ck.require("kind") != "backbone") throw io::IoError("checkpoint is not a backbone");
    EncoderConfig e;
    e.layers = detail::meta_u64(ck, "layers");
    e.inject_layer = detail::meta_u64(ck, "inject_layer");
    e.d_model = detail::meta_u64(ck, "d_model");
    e.heads = detail::meta_u64(ck, "heads");
    e.patch = detail::meta_u64(ck, "patch");
    e.image_size = detail::meta_u64(ck, "image_size");
    e.channels = detail::meta_u64(ck, "channels");
    e.d_embed = detail::meta_u64(ck, "d_embed");
    e.mlp_ratio = detail::meta_u64(ck, "mlp_ratio");
    e.max_words = detail::meta_u64(ck, "max_words");
    e.temperature = detail::meta_double(ck, "temperature");
    e.pixel_mean = detail::meta_double(ck, "pixel_mean");
    e.pixel_std = detail::meta_double(ck, "pixel_std");
    e.propagate_rep = ck.require("propagate_rep") == "1";
    std::istringstream in(ck.require("vocab"));
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    nn::Rng scratch(0);
    Backbone bb(e, Vocabulary(std::move(words)), scratch);
    ck.load_module(bb, "");
    nn::set_trainable(bb, false);
    return bb;
}

inline io::Checkpoint adapter_checkpoint(const Adapter& ad, const Backbone& bb, std::uint64_t seed) {
    io::Checkpoint ck;
    ck.meta["kind"] = "adapter";
    ck.meta["variant"] = std::string(variant_name(ad.cfg.variant));
    ck.meta["k_tokens"] = std::to_string(ad.cfg.k_tokens);
    ck.meta["d_rep"] = std::to_string(ad.cfg.d_rep);
    ck.meta["cnn_hidden"] = std::to_string(ad.cfg.cnn_hidden);
    ck.meta["attn_heads"] = std::to_string(ad.cfg.attn_heads);
    ck.meta["beta"] = io::exact(ad.cfg.beta);
    ck.meta["inject_layer"] = std::to_string(bb.cfg.inject_layer);
    ck.meta["seed"] = std::to_string(seed);
    ck.meta["backbone_hash"] = std::to_string(nn::parameter_hash(bb));
    ck.add_module(ad, "");
    return ck;
}

/// Restores an adapter against the backbone it was trained on; a different backbone
/// or injection layer is a mismatch.
inline Adapter adapter_from_checkpoint(const io::Checkpoint& ck, Backbone& bb, std::uint64_t* seed = nullptr) {
    if (ck.require("kind") != "adapter") throw io::IoError("checkpoint is not an adapter");
    if (detail::meta_u64(ck, "backbone_hash") != nn::parameter_hash(bb))
        throw io::IoError("adapter checkpoint was trained on a different backbone");
    bb.cfg.inject_layer = detail::meta_u64(ck, "inject_layer");
    bb.cfg.validate();
    AdapterConfig a;
    a.variant = parse_variant(ck.require("variant"));
    a.k_tokens = detail::meta_u64(ck, "k_tokens");
    a.d_rep = detail::meta_u64(ck, "d_rep");
    a.cnn_hidden = detail::meta_u64(ck, "cnn_hidden");
    a.attn_heads = detail::meta_u64(ck, "attn_heads");
    a.beta = detail::meta_double(ck, "beta");
    nn::Rng scratch(0);
    Adapter ad(a, bb, scratch);
    ck.load_module(ad, "");
    if (seed) *seed = detail::meta_u64(ck, "seed");
    return ad;
}

// ---------------------------------------------------------------- stages

using Log = std::ostream;

inline data::Dataset stage_gen_data(const RunConfig& rc, Log& log) {
    data::Dataset ds = data::generate(rc.seed, rc.n_per_class);
    io::save_dataset(rc.data_dir, ds);
    log << "gen-data: " << ds.samples.size() << " images -> " << rc.data_dir.string() << "\n";
    return ds;
}

inline data::Dataset load_stage_dataset(const RunConfig& rc) {
    detail::require_file(rc.data_dir / io::kManifestName, "gen-data");
    return io::load_dataset(rc.data_dir);
}

inline Backbone load_stage_backbone(const RunConfig& rc) {
    detail::require_file(rc.backbone_path(), "pretrain");
    Backbone bb = backbone_from_checkpoint(io::load_checkpoint(rc.backbone_path()));
    bb.cfg.inject_layer = rc.encoder.inject_layer;
    bb.cfg.validate();
    return bb;
}

inline Backbone stage_pretrain(const RunConfig& rc, Log& log) {
    const data::Dataset ds = load_stage_dataset(rc);
    PretrainConfig pc = rc.pretrain;
    pc.seed = rc.seed;
    std::vector<EpochRecord> hist;
    Backbone bb = pretrain_contrastive(ds, rc.encoder, pc, &hist);
    io::save_checkpoint(rc.backbone_path(), backbone_checkpoint(bb));
    std::string csv = "epoch,loss\n";
    for (const auto& r : hist) csv += std::to_string(r.epoch) + "," + io::fixed(r.loss, 6) + "\n";
    io::write_file(rc.out_dir / "pretrain_log.csv", csv);
    std::string vocab;
    for (const auto& w : bb.vocab.words()) vocab += w + "\n";
    io::write_file(rc.out_dir / "vocab.txt", vocab);
    log << "pretrain: final loss " << io::fixed(hist.back().loss) << " -> " << rc.backbone_path().string() << "\n";
    return bb;
}

inline std::uint64_t shot_seed(const RunConfig& rc) { return derive_seed(rc.seed, kSeedShots); }

inline AblationPools stage_pools(const RunConfig& rc, const Backbone& bb, const data::Dataset& ds) {
    return build_pools(bb, ds, shot_seed(rc), rc.adapt.shots, rc.decompose_normalized);
}

/// Trains one adapter (config variant, config seed), writes its checkpoint and the
/// per-epoch log. Accuracy columns are filled every `eval_every` epochs and on the last.
inline Adapter stage_adapt(const RunConfig& rc, Log& log) {
    const data::Dataset ds = load_stage_dataset(rc);
    const Backbone bb = load_stage_backbone(rc);
    const AblationPools pools = stage_pools(rc, bb, ds);
    AdaptConfig cfg = rc.adapt;
    cfg.seed = rc.seed;
    std::string csv = "epoch,loss,base_acc,novel_acc,hm\n";
    auto hook = [&](const AdaptEpoch& e, const Adapter& ad) {
        csv += std::to_string(e.epoch) + "," + io::fixed(e.loss, 6);
        const bool last = e.epoch == cfg.epochs;
        if (last || (rc.eval_every && e.epoch % rc.eval_every == 0)) {
            const Metrics m = evaluate(bb, ad, pools.base, pools.novel, rc.eval);
            csv += "," + io::fixed(m.base_acc) + "," + io::fixed(m.novel_acc) + "," + io::fixed(m.hm);
        } else {
            csv += ",,,";
        }
        csv += "\n";
    };
    Adapter ad = train_adapt(bb, pools.train, cfg, nullptr, hook);
    io::save_checkpoint(rc.adapter_path(), adapter_checkpoint(ad, bb, cfg.seed));
    io::write_file(rc.out_dir / "adapt_log.csv", csv);
    log << "adapt: " << variant_name(ad.cfg.variant) << " seed " << cfg.seed << " -> " << rc.adapter_path().string()
        << "\n";
    return ad;
}

/// Zero-shot and adapted metrics for the stored adapter.
inline std::vector<Metrics> stage_eval(const RunConfig& rc, Log& log) {
    const data::Dataset ds = load_stage_dataset(rc);
    Backbone bb = load_stage_backbone(rc);
    detail::require_file(rc.adapter_path(), "adapt");
    std::uint64_t seed = 0;
    const Adapter ad = adapter_from_checkpoint(io::load_checkpoint(rc.adapter_path()), bb, &seed);
    const AblationPools pools = stage_pools(rc, bb, ds);
    Metrics zs = zero_shot(pools.base, pools.novel);
    zs.seed = rc.seed;
    Metrics m = evaluate(bb, ad, pools.base, pools.novel, rc.eval);
    m.seed = seed;
    io::write_file(rc.out_dir / "metrics.csv", detail::metrics_header() + detail::metrics_row(zs) + detail::metrics_row(m));
    log << "eval: zero-shot hm " << io::fixed(zs.hm, 2) << ", " << m.variant << " base " << io::fixed(m.base_acc, 2)
        << " novel " << io::fixed(m.novel_acc, 2) << " hm " << io::fixed(m.hm, 2) << "\n";
    return {zs, m};
}

/// Every configured variant over `num_seeds` adapter seeds with one shared cache.
/// Writes ablation.csv (one row per run) and ablation_summary.csv (median HM).
inline std::vector<Metrics> stage_ablate(const RunConfig& rc, Log& log) {
    const data::Dataset ds = load_stage_dataset(rc);
    const Backbone bb = load_stage_backbone(rc);
    const AblationPools pools = stage_pools(rc, bb, ds);
    auto rows = run_ablation(bb, pools, rc.variants, rc.ablation_seeds(), rc.adapt, rc.eval, [&](const Metrics& m) {
        log << "ablate: " << m.variant << " seed " << m.seed << " hm " << io::fixed(m.hm, 2) << "\n";
    });
    std::string csv = detail::metrics_header();
    for (const auto& m : rows) csv += detail::metrics_row(m);
    io::write_file(rc.out_dir / "ablation.csv", csv);
    std::string summary = "variant,median_hm\n";
    for (Variant v : rc.variants)
        summary += std::string(variant_name(v)) + "," + io::fixed(median_hm(rows, v)) + "\n";
    io::write_file(rc.out_dir / "ablation_summary.csv", summary);
    return rows;
}

struct PipelineResult {
    std::vector<Metrics> eval;
    std::vector<Metrics> ablation;
};

inline PipelineResult run_pipeline(const RunConfig& rc, Log& log) {
    stage_gen_data(rc, log);
    stage_pretrain(rc, log);
    stage_adapt(rc, log);
    PipelineResult r;
    r.eval = stage_eval(rc, log);
    r.ablation = stage_ablate(rc, log);
    return r;
}

/// CSV files a pipeline run leaves in the output directory.
inline std::vector<std::string> pipeline_csv_names() {
    return {"pretrain_log.csv", "adapt_log.csv", "metrics.csv", "ablation.csv", "ablation_summary.csv"};
}

}  // namespace farl
