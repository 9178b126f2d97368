#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "farl/dataset.hpp"
#include "farl/model.hpp"
#include "farl/objective.hpp"
#include "farl/optim.hpp"

namespace farl {

/// Decorrelated sub-seed for a named purpose, so that e.g. data order and
/// initialization never share a stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) {
    std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), 0x5eedu};
    std::uint32_t words[2];
    s.generate(words, words + 2);
    return (std::uint64_t{words[0]} << 32) | words[1];
}

enum SeedPurpose : std::uint64_t { kSeedBackbone = 1, kSeedPretrainOrder = 2, kSeedAdapter = 3, kSeedAdaptOrder = 4,
                                   kSeedShots = 5 };

// ---------------------------------------------------------------- pretraining

struct PretrainConfig {
    std::size_t epochs = 30;
    std::size_t batch = 8;  // images per InfoNCE batch, all of distinct classes
    double lr = 1e-3;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch < 2) throw ConfigError("pretrain batch size must be >= 2");
        if (epochs == 0) throw ConfigError("pretrain epochs must be >= 1");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
};

/// Batches for one epoch. Each class's samples are shuffled, then round r takes the
/// r-th sample of every class in shuffled class order, and rounds are cut into
/// batches of distinct classes so in-batch pairs are true negatives.
inline std::vector<std::vector<std::size_t>> class_distinct_batches(const data::Dataset& ds,
                                                                    const std::vector<std::size_t>& pool,
                                                                    std::size_t batch, std::mt19937_64& rng) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (auto i : pool) by_class[ds.samples[i].class_id].push_back(i);
    std::vector<std::vector<std::size_t>> queues;
    std::size_t rounds = 0;
    for (auto& [c, v] : by_class) {
        std::shuffle(v.begin(), v.end(), rng);
        rounds = std::max(rounds, v.size());
        queues.push_back(v);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t r = 0; r < rounds; ++r) {
        std::vector<std::size_t> order(queues.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::size_t> round;
        for (auto q : order)
            if (r < queues[q].size()) round.push_back(queues[q][r]);
        for (std::size_t b = 0; b < round.size(); b += batch) {
            std::vector<std::size_t> chunk(round.begin() + static_cast<long>(b),
                                           round.begin() + static_cast<long>(std::min(round.size(), b + batch)));
            if (chunk.size() == 1 && !batches.empty() && b > 0) batches.back().push_back(chunk[0]);
            else if (chunk.size() >= 2) batches.push_back(std::move(chunk));
        }
    }
    return batches;
}

/// Contrastive training of a freshly initialized backbone on pretrain-role samples.
/// The returned backbone is frozen.
inline Backbone pretrain_contrastive(const data::Dataset& ds, const EncoderConfig& enc, const PretrainConfig& cfg,
                                     std::vector<EpochRecord>* log = nullptr) {
    cfg.validate();
    nn::Rng init_rng(derive_seed(cfg.seed, kSeedBackbone));
    Backbone bb(enc, Vocabulary(data::default_vocabulary()), init_rng);
    std::mt19937_64 order_rng(derive_seed(cfg.seed, kSeedPretrainOrder));
    const auto pool = ds.indices(data::Role::Pretrain);
    if (pool.empty()) throw data::DataError("dataset has no pretrain samples");

    auto params = nn::parameters(bb);
    const std::size_t steps_per_epoch = class_distinct_batches(ds, pool, cfg.batch, order_rng).size();
    order_rng.seed(derive_seed(cfg.seed, kSeedPretrainOrder));
    AdamW opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay, .total_steps = steps_per_epoch * cfg.epochs});

    std::map<int, std::vector<int>> prompts;
    for (int c = 0; c < static_cast<int>(data::kClassNames.size()); ++c)
        prompts[c] = bb.vocab.prompt(std::string(data::kClassNames[static_cast<std::size_t>(c)]));

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto batches = class_distinct_batches(ds, pool, cfg.batch, order_rng);
        double total = 0.0;
        for (const auto& batch : batches) {
            nn::zero_grad(bb);
            Graph g;
            std::vector<Var> img, txt;
            for (auto i : batch) {
                const auto& s = ds.samples[i];
                img.push_back(encode_image(g, bb, s.image, std::nullopt).class_feature);
                txt.push_back(encode_text(g, bb, prompts[s.class_id], std::nullopt));
            }
            Var loss = info_nce(concat_rows(img), concat_rows(txt), enc.temperature);
            g.backward(loss);
            g.accumulate_into(params);
            opt.step(params);
            total += loss.item();
        }
        if (log) log->push_back({epoch, total / static_cast<double>(batches.size())});
    }
    nn::zero_grad(bb);
    nn::set_trainable(bb, false);
    return bb;
}

// ---------------------------------------------------------------- adaptation

struct AdaptConfig {
    AdapterConfig adapter{};
    LossConfig loss{};
    std::size_t epochs = 10;
    std::size_t batch = 16;
    double lr = 5e-5;
    double weight_decay = 0.01;
    std::size_t shots = 16;
    std::uint64_t seed = 0;
    bool condition_text = true;

    void validate() const {
        loss.validate();
        if (batch == 0) throw ConfigError("adapt batch size must be >= 1");
        if (epochs == 0) throw ConfigError("adapt epochs must be >= 1");
    }
};

/// Frozen-backbone state for a fixed set of images and classes. It does not
/// depend on the adapter, so one cache serves every variant and seed.
struct FrozenCache {
    std::vector<ClassCache> classes;
    std::vector<SampleCache> samples;
    std::vector<std::size_t> dataset_index;
};

/// Caches `indices` with labels given as positions in `class_ids`.
inline FrozenCache build_cache(const Backbone& bb, const data::Dataset& ds, const std::vector<std::size_t>& indices,
                               const std::vector<int>& class_ids, bool decompose_normalized = false) {
    FrozenCache fc;
    for (int c : class_ids) fc.classes.push_back(cache_class(bb, std::string(data::kClassNames[static_cast<std::size_t>(c)])));
    for (auto i : indices) {
        const auto& s = ds.samples[i];
        auto it = std::find(class_ids.begin(), class_ids.end(), s.class_id);
        if (it == class_ids.end())
            throw data::DataError("sample " + std::to_string(i) + " has class outside the candidate list");
        fc.samples.push_back(cache_sample(bb, s.image, static_cast<int>(it - class_ids.begin()), decompose_normalized));
        fc.dataset_index.push_back(i);
    }
    return fc;
}

struct AdaptEpoch {
    std::size_t epoch = 0;
    double loss = 0.0;  // mean per-sample objective over the epoch
};

/// Called after each epoch; lets callers evaluate or log without the trainer knowing how.
using EpochHook = std::function<void(const AdaptEpoch&, const Adapter&)>;

/// Optimizes the adapter against the FARL objective on cached few-shot samples.
/// The backbone is only read; a parameter-hash check guards that contract.
inline Adapter train_adapt(const Backbone& bb, const FrozenCache& train, const AdaptConfig& cfg,
                           std::vector<AdaptEpoch>* log = nullptr, const EpochHook& hook = {}) {
    cfg.validate();
    if (train.samples.empty()) throw data::DataError("no training samples");
    Backbone::visit(bb, "", [](const std::string& name, const Parameter& p) {
        if (p.trainable) throw UsageError("backbone parameter '" + name + "' is not frozen");
    });
    const std::uint64_t frozen_hash = nn::parameter_hash(bb);
    nn::Rng init_rng(derive_seed(cfg.seed, kSeedAdapter));
    Adapter ad(cfg.adapter, bb, init_rng);
    auto params = nn::parameters(ad);
    if (!ad.uses_phase_branch()) {
        nn::set_trainable(ad.phase_cnn, false);
        nn::set_trainable(ad.phase_attn, false);
    }
    if (!ad.uses_amp_branch()) {
        nn::set_trainable(ad.amp_cnn, false);
        nn::set_trainable(ad.amp_attn, false);
    }
    const std::size_t n = train.samples.size();
    const std::size_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    AdamW opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay, .total_steps = steps_per_epoch * cfg.epochs});
    std::mt19937_64 order_rng(derive_seed(cfg.seed, kSeedAdaptOrder));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const ForwardOptions fwd{.want_rep_feature = cfg.loss.alpha < 1.0, .condition_text = cfg.condition_text};

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double total = 0.0;
        for (std::size_t b = 0; b < n; b += cfg.batch) {
            const std::size_t end = std::min(n, b + cfg.batch);
            const double inv = 1.0 / static_cast<double>(end - b);
            nn::zero_grad(ad);
            for (std::size_t k = b; k < end; ++k) {
                const SampleCache& s = train.samples[order[k]];
                Graph g;
                FarlOutputs out = farl_forward(g, bb, ad, s, train.classes, fwd);
                LossTerms terms = farl_loss(out, s.label, s.frozen_class_feature, train.classes, cfg.loss);
                total += terms.total.item();
                g.backward(scale(terms.total, inv));
                g.accumulate_into(params);
            }
            opt.step(params);
        }
        AdaptEpoch rec{epoch, total / static_cast<double>(n)};
        if (log) log->push_back(rec);
        if (hook) hook(rec, ad);
    }
    if (nn::parameter_hash(bb) != frozen_hash) throw UsageError("backbone parameters changed during adaptation");
    nn::zero_grad(ad);
    nn::set_trainable(ad, true);
    return ad;
}

}  // namespace farl
