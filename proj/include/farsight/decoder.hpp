#pragma once

// A small pre-norm transformer decoder over modality-tagged token ids, used
// to exercise the attention kernels end to end. Decoding recomputes the full
// sequence each step; the register mask makes earlier rows depend on how many
// registers sit to their right, so their probabilities legitimately shift as
// the sequence grows and cached rows would go stale. A KV-cached path exists
// for the causal baseline, where rows never change once computed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "farsight/attention.hpp"
#include "farsight/masks.hpp"
#include "farsight/numerics.hpp"
#include "farsight/trace.hpp"

namespace farsight {

struct TokenSequence {
    std::vector<int> ids;
    std::vector<Modality> modality;
    std::vector<std::size_t> positions;  // always 0..n-1, checked

    static TokenSequence from_ids(std::vector<int> ids, std::size_t vision_prefix_len = 0) {
        if (vision_prefix_len > ids.size())
            throw Error(ErrorKind::domain,
                        "TokenSequence: vision prefix longer than the sequence");
        TokenSequence t;
        t.modality.reserve(ids.size());
        t.positions.reserve(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            t.modality.push_back(i < vision_prefix_len ? Modality::vision : Modality::text);
            t.positions.push_back(i);
        }
        t.ids = std::move(ids);
        return t;
    }

    std::size_t size() const { return ids.size(); }

    std::size_t vision_prefix_len() const {
        std::size_t n = 0;
        while (n < modality.size() && modality[n] == Modality::vision) ++n;
        return n;
    }

    void append(int id, Modality m) {
        ids.push_back(id);
        modality.push_back(m);
        positions.push_back(positions.size());
    }

    void validate(std::size_t vocab_size) const {
        if (ids.size() != modality.size() || ids.size() != positions.size())
            throw Error(ErrorKind::dimension, "TokenSequence: parallel fields disagree");
        for (std::size_t i = 0; i < positions.size(); ++i)
            if (positions[i] != i)
                throw Error(ErrorKind::domain, "TokenSequence: positions must be 0..n-1");
        bool seen_text = false;
        for (Modality m : modality) {
            if (m == Modality::text) seen_text = true;
            else if (seen_text)
                throw Error(ErrorKind::domain,
                            "TokenSequence: vision tokens must form a contiguous prefix");
        }
        for (int id : ids)
            if (id < 0 || static_cast<std::size_t>(id) >= vocab_size)
                throw Error(ErrorKind::input, "TokenSequence: token id " + std::to_string(id) +
                                                  " outside vocabulary");
    }
};

struct LayerWeights {
    std::vector<double> attn_norm;  // d_model gains
    MhaWeights attn;
    std::vector<double> mlp_norm;
    Matrix mlp_w1;  // d_model x 4*d_model
    Matrix mlp_w2;  // 4*d_model x d_model
};

struct ModelConfig {
    std::size_t vocab_size = 64;
    std::size_t d_model = 32;
    std::size_t head_count = 4;
    std::size_t layer_count = 2;
    std::uint64_t seed = 0;

    void validate() const {
        if (vocab_size == 0 || d_model == 0 || head_count == 0 || layer_count == 0)
            throw Error(ErrorKind::domain, "ModelConfig: all dimensions must be positive");
        if (d_model % head_count != 0)
            throw Error(ErrorKind::domain, "ModelConfig: head count must divide d_model");
        if ((d_model / head_count) % 2 != 0)
            throw Error(ErrorKind::domain,
                        "ModelConfig: per-head width must be even for the rotary encoding");
    }
};

struct ModelWeights {
    std::size_t vocab_size = 0;
    std::size_t d_model = 0;
    std::size_t head_count = 0;
    std::size_t layer_count = 0;
    std::optional<std::uint64_t> seed;

    Matrix embedding;  // vocab_size x d_model
    std::vector<LayerWeights> layers;
    std::vector<double> final_norm;
    Matrix output_head;  // d_model x vocab_size

    void validate() const {
        if (vocab_size == 0 || d_model == 0 || head_count == 0 || layer_count == 0)
            throw Error(ErrorKind::domain, "ModelWeights: all dimensions must be positive");
        if (d_model % head_count != 0)
            throw Error(ErrorKind::domain, "ModelWeights: head count must divide d_model");
        if (embedding.rows != vocab_size || embedding.cols != d_model)
            throw Error(ErrorKind::dimension, "ModelWeights: embedding shape mismatch");
        if (layers.size() != layer_count)
            throw Error(ErrorKind::dimension, "ModelWeights: layer count mismatch");
        for (const LayerWeights& l : layers) {
            if (l.attn_norm.size() != d_model || l.mlp_norm.size() != d_model)
                throw Error(ErrorKind::dimension, "ModelWeights: norm gain length mismatch");
            for (const Matrix* m : {&l.attn.wq, &l.attn.wk, &l.attn.wv, &l.attn.wo})
                if (m->rows != d_model || m->cols != d_model)
                    throw Error(ErrorKind::dimension, "ModelWeights: projection shape mismatch");
            if (l.mlp_w1.rows != d_model || l.mlp_w1.cols != 4 * d_model ||
                l.mlp_w2.rows != 4 * d_model || l.mlp_w2.cols != d_model)
                throw Error(ErrorKind::dimension, "ModelWeights: mlp shape mismatch");
        }
        if (final_norm.size() != d_model)
            throw Error(ErrorKind::dimension, "ModelWeights: final norm length mismatch");
        if (output_head.rows != d_model || output_head.cols != vocab_size)
            throw Error(ErrorKind::dimension, "ModelWeights: output head shape mismatch");
    }
};

// All matrices are seeded normal draws at scale 1/sqrt(d_model); norm gains
// start at one. The draw order below is part of the format: a seed plus a
// config identifies one model bit for bit.
inline ModelWeights generate_synthetic_model(const ModelConfig& cfg) {
    cfg.validate();
    SeededRng rng(cfg.seed);
    double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    ModelWeights m;
    m.vocab_size = cfg.vocab_size;
    m.d_model = cfg.d_model;
    m.head_count = cfg.head_count;
    m.layer_count = cfg.layer_count;
    m.seed = cfg.seed;
    m.embedding = random_normal(cfg.vocab_size, cfg.d_model, rng, scale);
    m.layers.resize(cfg.layer_count);
    for (LayerWeights& l : m.layers) {
        l.attn_norm.assign(cfg.d_model, 1.0);
        l.attn.wq = random_normal(cfg.d_model, cfg.d_model, rng, scale);
        l.attn.wk = random_normal(cfg.d_model, cfg.d_model, rng, scale);
        l.attn.wv = random_normal(cfg.d_model, cfg.d_model, rng, scale);
        l.attn.wo = random_normal(cfg.d_model, cfg.d_model, rng, scale);
        l.mlp_norm.assign(cfg.d_model, 1.0);
        l.mlp_w1 = random_normal(cfg.d_model, 4 * cfg.d_model, rng, scale);
        l.mlp_w2 = random_normal(4 * cfg.d_model, cfg.d_model, rng, scale);
    }
    m.final_norm.assign(cfg.d_model, 1.0);
    m.output_head = random_normal(cfg.d_model, cfg.vocab_size, rng, scale);
    return m;
}

namespace detail {

constexpr double kRmsEps = 1e-6;

inline std::vector<double> rmsnorm_row(std::span<const double> x,
                                       const std::vector<double>& gain) {
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms = ms / static_cast<double>(x.size()) + kRmsEps;
    double inv = 1.0 / std::sqrt(ms);
    std::vector<double> out(x.size());
    for (std::size_t c = 0; c < x.size(); ++c) out[c] = x[c] * inv * gain[c];
    return out;
}

inline Matrix rmsnorm_rows(const Matrix& x, const std::vector<double>& gain) {
    Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        std::vector<double> r = rmsnorm_row(x.row(i), gain);
        std::copy(r.begin(), r.end(), out.data.begin() + i * out.cols);
    }
    return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline void gelu_inplace(Matrix& m) {
    for (double& v : m.data) v = gelu(v);
}

inline void add_inplace(Matrix& a, const Matrix& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

}  // namespace detail

// One full forward pass; returns logits for every position. When a trace is
// supplied, each layer/head's probabilities and beta vector are appended
// under the given step index.
inline Matrix forward(const ModelWeights& model, const TokenSequence& tokens, MaskMode mode,
                      const RegisterSchedule& schedule, AttentionTrace* trace = nullptr,
                      std::size_t step = 0) {
    model.validate();
    tokens.validate(model.vocab_size);
    if (tokens.size() == 0)
        throw Error(ErrorKind::dimension, "forward: empty token sequence");
    std::size_t n = tokens.size();

    Matrix x(n, model.d_model);
    for (std::size_t i = 0; i < n; ++i) {
        std::span<const double> e = model.embedding.row(static_cast<std::size_t>(tokens.ids[i]));
        std::copy(e.begin(), e.end(), x.data.begin() + i * x.cols);
    }

    for (std::size_t l = 0; l < model.layer_count; ++l) {
        const LayerWeights& layer = model.layers[l];
        Matrix normed = detail::rmsnorm_rows(x, layer.attn_norm);
        std::vector<HeadTrace> heads;
        Matrix attn = multi_head_attention(normed, layer.attn, model.head_count, mode,
                                           schedule, trace ? &heads : nullptr);
        if (trace)
            for (std::size_t h = 0; h < heads.size(); ++h)
                trace->entries.push_back(TraceEntry{l, h, step, std::move(heads[h].probs),
                                                    std::move(heads[h].beta)});
        detail::add_inplace(x, attn);

        Matrix m_in = detail::rmsnorm_rows(x, layer.mlp_norm);
        Matrix hidden = matmul(m_in, layer.mlp_w1);
        detail::gelu_inplace(hidden);
        Matrix mlp = matmul(hidden, layer.mlp_w2);
        detail::add_inplace(x, mlp);
    }

    Matrix final = detail::rmsnorm_rows(x, model.final_norm);
    Matrix logits = matmul(final, model.output_head);
    if (trace) {
        trace->layer_count = model.layer_count;
        trace->head_count = model.head_count;
        trace->step_lengths.push_back(n);
        trace->modality = tokens.modality;
    }
    return logits;
}

enum class StrategyKind { greedy, sample, beam };

struct DecodeStrategy {
    StrategyKind kind = StrategyKind::greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    std::size_t beam_width = 1;

    static DecodeStrategy make_greedy() { return DecodeStrategy{}; }
    static DecodeStrategy make_sample(double temperature, std::uint64_t seed) {
        return DecodeStrategy{StrategyKind::sample, temperature, seed, 1};
    }
    static DecodeStrategy make_beam(std::size_t width) {
        return DecodeStrategy{StrategyKind::beam, 1.0, 0, width};
    }

    void validate() const {
        if (kind == StrategyKind::sample && (!(temperature > 0.0) || !std::isfinite(temperature)))
            throw Error(ErrorKind::domain, "DecodeStrategy: temperature must be positive");
        if (kind == StrategyKind::beam && beam_width == 0)
            throw Error(ErrorKind::domain, "DecodeStrategy: beam width must be positive");
    }
};

struct StepSummary {
    std::size_t step = 0;
    int token = 0;
    double log_prob = 0.0;  // log-softmax of the chosen token at temperature 1
    double max_logit = 0.0;
};

struct DecodeResult {
    std::vector<int> generated;
    std::vector<StepSummary> steps;
    AttentionTrace trace;
    double cumulative_log_prob = 0.0;
};

enum class CacheMode { full_recompute, cached };

namespace detail {

inline std::vector<double> log_softmax(std::span<const double> logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double total = 0.0;
    for (double v : logits) total += std::exp(v - mx);
    double lse = mx + std::log(total);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

// Smallest id wins ties, which keeps greedy decoding and width-1 beam search
// in exact agreement.
inline int argmax_smallest(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return static_cast<int>(best);
}

inline int sample_index(std::span<const double> probs, double u) {
    double cum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        cum += probs[i];
        if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
}

// Row-at-a-time causal forward over cached per-head K/V. Accumulation orders
// match the full forward exactly, so the two paths agree bit for bit.
struct KvLayerCache {
    std::vector<std::vector<std::vector<double>>> k;  // head -> row -> dh
    std::vector<std::vector<std::vector<double>>> v;
};

struct KvCache {
    std::vector<KvLayerCache> layers;
    std::size_t len = 0;
};

inline std::vector<double> cached_causal_step(const ModelWeights& model, KvCache& cache,
                                              int token_id, std::size_t position) {
    std::size_t d = model.d_model;
    std::size_t heads = model.head_count;
    std::size_t dh = d / heads;
    RopeParams rope{10000.0, dh};
    if (cache.layers.empty()) {
        cache.layers.resize(model.layer_count);
        for (KvLayerCache& l : cache.layers) {
            l.k.resize(heads);
            l.v.resize(heads);
        }
    }

    std::span<const double> e = model.embedding.row(static_cast<std::size_t>(token_id));
    std::vector<double> x(e.begin(), e.end());
    for (std::size_t l = 0; l < model.layer_count; ++l) {
        const LayerWeights& layer = model.layers[l];
        KvLayerCache& kv = cache.layers[l];
        std::vector<double> normed = rmsnorm_row(x, layer.attn_norm);
        std::vector<double> qrow = row_times_matrix(normed, layer.attn.wq);
        std::vector<double> krow = row_times_matrix(normed, layer.attn.wk);
        std::vector<double> vrow = row_times_matrix(normed, layer.attn.wv);

        std::vector<double> concat(d, 0.0);
        double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (std::size_t h = 0; h < heads; ++h) {
            std::span<const double> qh(qrow.data() + h * dh, dh);
            std::span<const double> kh(krow.data() + h * dh, dh);
            std::vector<double> q_rot = rope_rotate(qh, position, rope);
            std::vector<double> k_rot = rope_rotate(kh, position, rope);
            kv.k[h].push_back(std::move(k_rot));
            kv.v[h].emplace_back(vrow.begin() + static_cast<std::ptrdiff_t>(h * dh),
                                 vrow.begin() + static_cast<std::ptrdiff_t>((h + 1) * dh));

            std::vector<double> scores(kv.k[h].size());
            for (std::size_t j = 0; j < kv.k[h].size(); ++j)
                scores[j] = scale * dot(q_rot, kv.k[h][j]);
            std::vector<double> probs = softmax_row(scores);
            for (std::size_t j = 0; j < probs.size(); ++j)
                for (std::size_t c = 0; c < dh; ++c)
                    concat[h * dh + c] += probs[j] * kv.v[h][j][c];
        }
        std::vector<double> attn = row_times_matrix(concat, layer.attn.wo);
        for (std::size_t c = 0; c < d; ++c) x[c] += attn[c];

        std::vector<double> m_in = rmsnorm_row(x, layer.mlp_norm);
        std::vector<double> hidden = row_times_matrix(m_in, layer.mlp_w1);
        for (double& hval : hidden) hval = gelu(hval);
        std::vector<double> mlp = row_times_matrix(hidden, layer.mlp_w2);
        for (std::size_t c = 0; c < d; ++c) x[c] += mlp[c];
    }
    std::vector<double> final = rmsnorm_row(x, model.final_norm);
    ++cache.len;
    return row_times_matrix(final, model.output_head);
}

}  // namespace detail

inline DecodeResult decode(const ModelWeights& model, const TokenSequence& prompt,
                           const DecodeStrategy& strategy, MaskMode mode,
                           const RegisterSchedule& schedule, std::size_t max_new_tokens,
                           CacheMode cache_mode = CacheMode::full_recompute) {
    model.validate();
    prompt.validate(model.vocab_size);
    strategy.validate();
    schedule.validate();
    if (prompt.size() == 0)
        throw Error(ErrorKind::domain, "decode: prompt must not be empty");
    if (max_new_tokens == 0)
        throw Error(ErrorKind::domain, "decode: max_new_tokens must be positive");
    if (cache_mode == CacheMode::cached && mode != MaskMode::causal)
        throw Error(ErrorKind::domain,
                    "decode: the cached path is only exact for the causal baseline");
    if (cache_mode == CacheMode::cached && strategy.kind == StrategyKind::beam)
        throw Error(ErrorKind::domain, "decode: beam search runs without a cache");

    DecodeResult result;
    SeededRng rng(strategy.seed);

    if (strategy.kind == StrategyKind::beam) {
        struct Beam {
            std::vector<int> generated;
            double lp = 0.0;
            std::vector<StepSummary> steps;
        };
        std::vector<Beam> beams{Beam{}};
        for (std::size_t t = 0; t < max_new_tokens; ++t) {
            std::vector<Beam> candidates;
            for (const Beam& b : beams) {
                TokenSequence seq = prompt;
                for (int id : b.generated) seq.append(id, Modality::text);
                Matrix logits = forward(model, seq, mode, schedule);
                std::span<const double> row = logits.row(logits.rows - 1);
                std::vector<double> ls = detail::log_softmax(row);
                double mx = *std::max_element(row.begin(), row.end());
                for (std::size_t tok = 0; tok < ls.size(); ++tok) {
                    Beam c = b;
                    c.generated.push_back(static_cast<int>(tok));
                    c.lp += ls[tok];
                    c.steps.push_back(StepSummary{t, static_cast<int>(tok), ls[tok], mx});
                    candidates.push_back(std::move(c));
                }
            }
            std::sort(candidates.begin(), candidates.end(), [](const Beam& a, const Beam& b) {
                if (a.lp != b.lp) return a.lp > b.lp;
                return a.generated < b.generated;
            });
            if (candidates.size() > strategy.beam_width)
                candidates.resize(strategy.beam_width);
            beams = std::move(candidates);
        }
        Beam& best = beams.front();
        result.generated = best.generated;
        result.steps = std::move(best.steps);
        result.cumulative_log_prob = best.lp;
        // Trace of the winning sequence, replayed step by step.
        TokenSequence seq = prompt;
        for (std::size_t t = 0; t < result.generated.size(); ++t) {
            forward(model, seq, mode, schedule, &result.trace, t);
            seq.append(result.generated[t], Modality::text);
        }
        result.trace.modality = seq.modality;
        return result;
    }

    TokenSequence seq = prompt;
    detail::KvCache cache;
    if (cache_mode == CacheMode::cached) {
        for (std::size_t i = 0; i + 1 < prompt.size(); ++i)
            detail::cached_causal_step(model, cache,
                                       prompt.ids[i], i);  // logits of prefix rows unused
    }
    for (std::size_t t = 0; t < max_new_tokens; ++t) {
        std::vector<double> row;
        if (cache_mode == CacheMode::cached) {
            row = detail::cached_causal_step(model, cache, seq.ids.back(), seq.size() - 1);
        } else {
            Matrix logits = forward(model, seq, mode, schedule, &result.trace, t);
            std::span<const double> last = logits.row(logits.rows - 1);
            row.assign(last.begin(), last.end());
        }
        std::vector<double> ls = detail::log_softmax(row);
        int token = 0;
        if (strategy.kind == StrategyKind::greedy) {
            token = detail::argmax_smallest(row);
        } else {
            std::vector<double> tempered(row.size());
            for (std::size_t i = 0; i < row.size(); ++i)
                tempered[i] = row[i] / strategy.temperature;
            std::vector<double> probs = softmax_row(tempered);
            token = detail::sample_index(probs, rng.uniform01());
        }
        double mx = *std::max_element(row.begin(), row.end());
        result.steps.push_back(StepSummary{t, token, ls[static_cast<std::size_t>(token)], mx});
        result.cumulative_log_prob += ls[static_cast<std::size_t>(token)];
        result.generated.push_back(token);
        seq.append(token, Modality::text);
    }
    result.trace.modality = seq.modality;
    return result;
}

}  // namespace farsight
