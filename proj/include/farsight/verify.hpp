#pragma once

// Independent verification. The oracles here are rebuilt from the written
// definitions using only the numerics primitives; they deliberately share no
// code with the attention kernels they check. Alongside them: a family of
// intentionally broken kernels, and a property suite that (a) checks the real
// implementation against the oracles and the cross-module invariants, and
// (b) proves its own teeth by confirming that each broken kernel trips at
// least one property.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "farsight/attention.hpp"
#include "farsight/decoder.hpp"
#include "farsight/diagnostics.hpp"
#include "farsight/masks.hpp"
#include "farsight/model_io.hpp"
#include "farsight/numerics.hpp"
#include "farsight/trace.hpp"

namespace farsight::verify {

// ---------------------------------------------------------------- oracles

// Dense register-mask attention straight from the definitions: full score
// matrix, keep-mask and register matrix built inline, one complete softmax
// per row, then the register probabilities are dropped without renormalising.
inline AttentionResult naive_farsight(const Matrix& q, const Matrix& k, const Matrix& v,
                                      double sigma) {
    std::size_t n = q.rows;
    std::size_t d = q.cols;
    double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix omega = matmul(q, transpose(k));
    for (double& x : omega.data) x *= scale;

    Matrix w(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            w(i, j) = j <= i ? omega(i, j) : -static_cast<double>(j - i) * sigma;

    AttentionResult res{Matrix(n, d), Matrix(n, n), std::vector<double>(n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> probs = softmax_row(w.row(i));
        for (std::size_t j = 0; j <= i; ++j) {
            res.probs(i, j) = probs[j];
            res.beta[i] += probs[j];
        }
    }
    res.output = matmul(res.probs, v);
    return res;
}

// Dense causal baseline: -inf above the diagonal, softmax, done.
inline AttentionResult naive_causal(const Matrix& q, const Matrix& k, const Matrix& v) {
    std::size_t n = q.rows;
    std::size_t d = q.cols;
    double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix omega = matmul(q, transpose(k));
    for (double& x : omega.data) x *= scale;

    AttentionResult res{Matrix(n, d), Matrix(n, n), std::vector<double>(n, 1.0)};
    for (std::size_t i = 0; i < n; ++i) {
        double mx = omega(i, 0);
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, omega(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            res.probs(i, j) = std::exp(omega(i, j) - mx);
            total += res.probs(i, j);
        }
        for (std::size_t j = 0; j <= i; ++j) res.probs(i, j) /= total;
    }
    res.output = matmul(res.probs, v);
    return res;
}

inline AttentionResult naive_alibi(const Matrix& q, const Matrix& k, const Matrix& v,
                                   double slope) {
    std::size_t n = q.rows;
    std::size_t d = q.cols;
    double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Matrix omega = matmul(q, transpose(k));
    for (double& x : omega.data) x *= scale;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j)
            omega(i, j) -= slope * static_cast<double>(i - j);

    AttentionResult res{Matrix(n, d), Matrix(n, n), std::vector<double>(n, 1.0)};
    for (std::size_t i = 0; i < n; ++i) {
        double mx = omega(i, 0);
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, omega(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            res.probs(i, j) = std::exp(omega(i, j) - mx);
            total += res.probs(i, j);
        }
        for (std::size_t j = 0; j <= i; ++j) res.probs(i, j) /= total;
    }
    res.output = matmul(res.probs, v);
    return res;
}

// Pairwise rotation restated from the definition rather than shared with the
// production encoding.
inline Matrix naive_rope(const Matrix& x, double theta_base) {
    Matrix out(x.rows, x.cols);
    double d = static_cast<double>(x.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t m = 0; m * 2 < x.cols; ++m) {
            double angle = static_cast<double>(i) *
                           std::pow(theta_base, -2.0 * static_cast<double>(m) / d);
            double c = std::cos(angle);
            double s = std::sin(angle);
            out(i, 2 * m) = c * x(i, 2 * m) - s * x(i, 2 * m + 1);
            out(i, 2 * m + 1) = s * x(i, 2 * m) + c * x(i, 2 * m + 1);
        }
    return out;
}

inline Matrix naive_multi_head(const Matrix& x, const MhaWeights& w, std::size_t head_count,
                               MaskMode mode, const RegisterSchedule& schedule) {
    std::size_t n = x.rows;
    std::size_t dh = x.cols / head_count;
    Matrix q = matmul(x, w.wq);
    Matrix k = matmul(x, w.wk);
    Matrix v = matmul(x, w.wv);
    Matrix concat(n, x.cols);
    for (std::size_t h = 0; h < head_count; ++h) {
        Matrix qh(n, dh), kh(n, dh), vh(n, dh);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < dh; ++c) {
                qh(i, c) = q(i, h * dh + c);
                kh(i, c) = k(i, h * dh + c);
                vh(i, c) = v(i, h * dh + c);
            }
        if (mode != MaskMode::alibi) {
            qh = naive_rope(qh, 10000.0);
            kh = naive_rope(kh, 10000.0);
        }
        double geometric = std::exp2(-8.0 * static_cast<double>(h + 1) /
                                     static_cast<double>(head_count));
        AttentionResult res;
        switch (mode) {
            case MaskMode::causal:
                res = naive_causal(qh, kh, vh);
                break;
            case MaskMode::farsight:
                res = naive_farsight(qh, kh, vh,
                                     schedule.mode == ScheduleMode::per_head ? geometric
                                                                             : schedule.sigma);
                break;
            case MaskMode::alibi:
                res = naive_alibi(qh, kh, vh, geometric);
                break;
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < dh; ++c) concat(i, h * dh + c) = res.output(i, c);
    }
    return matmul(concat, w.wo);
}

// Forward pass restated from the architecture description; greedy decode on
// top of it. Shares the weight container but none of the decoder's code.
inline std::vector<int> naive_greedy_decode(const ModelWeights& model,
                                            const TokenSequence& prompt, MaskMode mode,
                                            const RegisterSchedule& schedule,
                                            std::size_t max_new_tokens) {
    std::vector<int> ids = prompt.ids;
    std::vector<int> generated;
    for (std::size_t t = 0; t < max_new_tokens; ++t) {
        std::size_t n = ids.size();
        Matrix x(n, model.d_model);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < model.d_model; ++c)
                x(i, c) = model.embedding(static_cast<std::size_t>(ids[i]), c);

        auto rmsnorm = [&](const Matrix& m, const std::vector<double>& gain) {
            Matrix out(m.rows, m.cols);
            for (std::size_t i = 0; i < m.rows; ++i) {
                double ms = 0.0;
                for (std::size_t c = 0; c < m.cols; ++c) ms += m(i, c) * m(i, c);
                ms = ms / static_cast<double>(m.cols) + 1e-6;
                double inv = 1.0 / std::sqrt(ms);
                for (std::size_t c = 0; c < m.cols; ++c) out(i, c) = m(i, c) * inv * gain[c];
            }
            return out;
        };

        for (const LayerWeights& layer : model.layers) {
            Matrix attn = naive_multi_head(rmsnorm(x, layer.attn_norm), layer.attn,
                                           model.head_count, mode, schedule);
            for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += attn.data[i];
            Matrix hidden = matmul(rmsnorm(x, layer.mlp_norm), layer.mlp_w1);
            for (double& hv : hidden.data) hv = 0.5 * hv * (1.0 + std::erf(hv / std::sqrt(2.0)));
            Matrix mlp = matmul(hidden, layer.mlp_w2);
            for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += mlp.data[i];
        }
        Matrix logits = matmul(rmsnorm(x, model.final_norm), model.output_head);
        std::span<const double> row = logits.row(n - 1);
        std::size_t best = 0;
        for (std::size_t j = 1; j < row.size(); ++j)
            if (row[j] > row[best]) best = j;
        generated.push_back(static_cast<int>(best));
        ids.push_back(static_cast<int>(best));
    }
    return generated;
}

// ---------------------------------------------------------------- mutants

// Deliberately broken register kernels. The suite must notice each of them;
// a suite that stays green under all three would be testing nothing.
enum class Mutation { none, register_sign, no_remask, pseudocode_sigma };

inline const char* mutation_name(Mutation m) {
    switch (m) {
        case Mutation::none: return "none";
        case Mutation::register_sign: return "register-sign";
        case Mutation::no_remask: return "no-remask";
        case Mutation::pseudocode_sigma: return "pseudocode-sigma";
    }
    return "unknown";
}

inline std::optional<Mutation> parse_mutation(const std::string& name) {
    if (name == "none") return Mutation::none;
    if (name == "register-sign") return Mutation::register_sign;
    if (name == "no-remask") return Mutation::no_remask;
    if (name == "pseudocode-sigma") return Mutation::pseudocode_sigma;
    return std::nullopt;
}

inline AttentionResult kernel_under_test(const AttentionInputs& in,
                                         const RegisterSchedule& schedule, std::size_t head,
                                         Mutation mutation) {
    if (mutation == Mutation::none) return farsight_attention(in, schedule, head);

    std::size_t n = in.seq_len();
    double rate = schedule.slope_for_head(head);
    Matrix w(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = in.scale * dot(in.q.row(i), in.k.row(j));
            w(i, j) = mutation == Mutation::pseudocode_sigma ? s * schedule.sigma : s;
        }
        for (std::size_t j = i + 1; j < n; ++j) {
            double r = -static_cast<double>(j - i) * rate;
            w(i, j) = mutation == Mutation::register_sign ? -r : r;
        }
    }
    AttentionResult res{Matrix(n, in.head_dim()), Matrix(n, n), std::vector<double>(n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> probs = softmax_row(w.row(i));
        std::size_t keep = mutation == Mutation::no_remask ? n : i + 1;
        for (std::size_t j = 0; j < keep; ++j) {
            res.probs(i, j) = probs[j];
            res.beta[i] += probs[j];
        }
    }
    res.output = matmul(res.probs, in.v);
    return res;
}

// ------------------------------------------------------------------ suite

struct OracleReport {
    std::string property;
    std::size_t size = 0;
    std::uint64_t seed = 0;
    double max_dev = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string detail;
};

struct SuiteConfig {
    std::uint64_t seed = 42;
    std::vector<std::size_t> sizes = {2, 3, 8, 32, 128};
    Mutation mutation = Mutation::none;
    std::size_t kernel_instances = 100;
    std::size_t decode_instances = 50;
    bool sensitivity_checks = true;
};

inline void write_report_csv(const std::vector<OracleReport>& reports, std::ostream& out) {
    out << "property,size,seed,max_dev,tolerance,pass\n";
    for (const OracleReport& r : reports)
        out << r.property << ',' << r.size << ',' << r.seed << ',' << format_sig9(r.max_dev)
            << ',' << format_sig9(r.tolerance) << ',' << (r.pass ? 1 : 0) << '\n';
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline AttentionInputs random_inputs(std::size_t n, std::size_t d, SeededRng& rng) {
    return AttentionInputs::make(random_normal(n, d, rng), random_normal(n, d, rng),
                                 random_normal(n, d, rng));
}

inline double result_dev(const AttentionResult& a, const AttentionResult& b) {
    double dev = std::max(max_abs_diff(a.output, b.output), max_abs_diff(a.probs, b.probs));
    return std::max(dev, max_abs_diff(std::span<const double>(a.beta),
                                      std::span<const double>(b.beta)));
}

constexpr std::size_t kOracleDims[2] = {4, 64};

// Tiny models for the decode-level properties.
inline ModelConfig small_config(std::uint64_t seed) {
    return ModelConfig{32, 16, 2, 1, seed};
}

inline ModelConfig reference_config() {
    return ModelConfig{64, 32, 4, 2, 7};
}

inline TokenSequence random_prompt(std::size_t vocab, std::size_t len, SeededRng& rng) {
    std::vector<int> ids(len);
    for (int& id : ids)
        id = static_cast<int>(rng.next_u64() % vocab);
    return TokenSequence::from_ids(std::move(ids), 0);
}

}  // namespace detail

// Runs every property and returns one report row per property/size pair.
// Deterministic for a fixed config seed. The mutation field substitutes a
// broken register kernel into the kernel-level properties, which is how both
// the command-line mutation runs and the built-in sensitivity checks work.
inline std::vector<OracleReport> run_property_suite(const SuiteConfig& config) {
    if (config.sizes.empty())
        throw Error(ErrorKind::domain, "run_property_suite: size list must not be empty");
    for (std::size_t n : config.sizes)
        if (n == 0)
            throw Error(ErrorKind::domain, "run_property_suite: sizes must be positive");

    std::vector<OracleReport> reports;
    RegisterSchedule base = RegisterSchedule::from_decay_rate(256, 1024.0);
    Mutation mut = config.mutation;

    // oracle_equiv_farsight / oracle_equiv_causal / proportionality /
    // mass_partition / probs_lower_triangular, one row each per size
    for (std::size_t n : config.sizes) {
        double dev_fs = 0.0, dev_causal = 0.0, dev_prop = 0.0, dev_mass = 0.0, dev_tri = 0.0;
        for (std::size_t inst = 0; inst < config.kernel_instances; ++inst) {
            for (std::size_t d : detail::kOracleDims) {
                SeededRng rng(detail::mix_seed(config.seed, n * 1000003 + inst * 131 + d));
                AttentionInputs in = detail::random_inputs(n, d, rng);
                AttentionResult kernel = kernel_under_test(in, base, 0, mut);
                AttentionResult oracle = naive_farsight(in.q, in.k, in.v, base.sigma);
                dev_fs = std::max(dev_fs, detail::result_dev(kernel, oracle));

                AttentionResult ck = causal_attention(in);
                AttentionResult co = naive_causal(in.q, in.k, in.v);
                dev_causal = std::max(dev_causal, detail::result_dev(ck, co));

                // surviving rows of the register kernel must be the causal rows
                // scaled by the oracle's beta
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j <= i; ++j)
                        dev_prop = std::max(dev_prop, std::abs(kernel.probs(i, j) -
                                                               oracle.beta[i] * co.probs(i, j)));

                // row sums match beta, beta stays in (0, 1], the final row keeps
                // everything, and the row decomposition agrees
                for (std::size_t i = 0; i < n; ++i) {
                    double row_sum = 0.0;
                    for (std::size_t j = 0; j <= i; ++j) row_sum += kernel.probs(i, j);
                    dev_mass = std::max(dev_mass, std::abs(row_sum - kernel.beta[i]));
                    if (!(kernel.beta[i] > 0.0 && kernel.beta[i] <= 1.0 + 1e-12))
                        dev_mass = std::max(dev_mass, 1.0);
                }
                dev_mass = std::max(dev_mass, std::abs(kernel.beta[n - 1] - 1.0));
                auto [alpha, gamma] = farsight_row_decomposition(in, base, 0);
                double gamma_sum = 0.0;
                for (double g : gamma) gamma_sum += g;
                dev_mass = std::max(dev_mass, std::abs(kernel.beta[0] - (1.0 - gamma_sum)));
                dev_mass = std::max(dev_mass, std::abs(alpha[0] - kernel.probs(0, 0)));

                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = i + 1; j < n; ++j) {
                        dev_tri = std::max(dev_tri, std::abs(kernel.probs(i, j)));
                        dev_tri = std::max(dev_tri, std::abs(ck.probs(i, j)));
                    }
            }
        }
        reports.push_back({"oracle_equiv_farsight", n, config.seed, dev_fs, 1e-12,
                           dev_fs <= 1e-12, ""});
        reports.push_back({"oracle_equiv_causal", n, config.seed, dev_causal, 1e-12,
                           dev_causal <= 1e-12, ""});
        reports.push_back({"proportionality", n, config.seed, dev_prop, 1e-12,
                           dev_prop <= 1e-12, ""});
        reports.push_back({"mass_partition", n, config.seed, dev_mass, 1e-12,
                           dev_mass <= 1e-12, ""});
        reports.push_back({"probs_lower_triangular", n, config.seed, dev_tri, 0.0,
                           dev_tri == 0.0, ""});
    }

    // causality_kernel: perturbing suffix rows of k/v leaves earlier rows
    // bit-identical
    for (std::size_t n : config.sizes) {
        double dev = 0.0;
        bool identical = true;
        for (std::size_t inst = 0; inst < config.kernel_instances && n >= 2; ++inst) {
            for (std::size_t d : detail::kOracleDims) {
                SeededRng rng(detail::mix_seed(config.seed ^ 0xca05a117ull,
                                               n * 1000003 + inst * 131 + d));
                AttentionInputs in = detail::random_inputs(n, d, rng);
                AttentionResult basecase = kernel_under_test(in, base, 0, mut);
                std::vector<std::size_t> suffixes;
                if (n <= 8)
                    for (std::size_t s = 1; s < n; ++s) suffixes.push_back(s);
                else
                    for (int s = 0; s < 5; ++s)
                        suffixes.push_back(1 + rng.next_u64() % (n - 1));
                for (std::size_t s : suffixes) {
                    AttentionInputs perturbed = in;
                    for (std::size_t i = s; i < n; ++i)
                        for (std::size_t c = 0; c < d; ++c) {
                            perturbed.k(i, c) = rng.normal();
                            perturbed.v(i, c) = rng.normal();
                        }
                    AttentionResult moved = kernel_under_test(perturbed, base, 0, mut);
                    for (std::size_t i = 0; i < s; ++i) {
                        dev = std::max(dev, max_abs_diff(basecase.output.row(i),
                                                         moved.output.row(i)));
                        dev = std::max(dev, max_abs_diff(basecase.probs.row(i),
                                                         moved.probs.row(i)));
                        if (std::memcmp(&basecase.output.data[i * d], &moved.output.data[i * d],
                                        d * sizeof(double)) != 0)
                            identical = false;
                        if (std::memcmp(&basecase.probs.data[i * n], &moved.probs.data[i * n],
                                        n * sizeof(double)) != 0)
                            identical = false;
                    }
                }
            }
        }
        bool pass = identical && dev == 0.0;
        reports.push_back({"causality_kernel", n, config.seed, pass ? 0.0 : std::max(dev, 5e-324),
                           0.0, pass, ""});
    }

    // beta_monotonic: identical tokens, every length up to 256
    {
        double dev_end = 0.0;
        bool strict = true;
        for (std::size_t n = 1; n <= 256; ++n) {
            Matrix q(n, 4, 0.3), k(n, 4, 0.3);
            SeededRng rng(detail::mix_seed(config.seed ^ 0xbe7aull, n));
            Matrix v = random_normal(n, 4, rng);
            AttentionResult res = kernel_under_test(
                AttentionInputs::make(std::move(q), std::move(k), std::move(v)), base, 0, mut);
            for (std::size_t i = 0; i + 1 < n; ++i)
                if (!(res.beta[i + 1] > res.beta[i])) strict = false;
            dev_end = std::max(dev_end, std::abs(res.beta[n - 1] - 1.0));
        }
        bool pass = strict && dev_end <= 1e-12;
        reports.push_back({"beta_monotonic", 256, config.seed,
                           strict ? dev_end : std::max(dev_end, 1.0), 1e-12, pass, ""});
    }

    // beta_reference_values: uniform scores, n = 3, sigma = 0.8
    {
        AttentionInputs in =
            AttentionInputs::make(Matrix(3, 4, 0.0), Matrix(3, 4, 0.0), Matrix(3, 4, 1.0));
        AttentionResult res = kernel_under_test(in, base, 0, mut);
        const double expected[3] = {0.60561, 0.81655, 1.0};
        double dev = 0.0;
        for (std::size_t i = 0; i < 3; ++i)
            dev = std::max(dev, std::abs(res.beta[i] - expected[i]));
        reports.push_back({"beta_reference_values", 3, config.seed, dev, 1e-5, dev <= 1e-5, ""});
    }

    // large_sigma_kernel: at sigma = 50 the register mass is ~1e-22 of each
    // row and the kernel must coincide with the causal baseline
    {
        RegisterSchedule steep = RegisterSchedule::with_sigma(50.0);
        double dev = 0.0;
        for (std::size_t n : config.sizes) {
            for (std::size_t inst = 0; inst < config.kernel_instances; ++inst) {
                std::size_t d = detail::kOracleDims[inst % 2];
                SeededRng rng(detail::mix_seed(config.seed ^ 0x51e6a50ull,
                                               n * 1000003 + inst * 131 + d));
                AttentionInputs in = detail::random_inputs(n, d, rng);
                AttentionResult fs = kernel_under_test(in, steep, 0, mut);
                AttentionResult ca = causal_attention(in);
                dev = std::max(dev, detail::result_dev(fs, ca));
            }
        }
        reports.push_back({"large_sigma_kernel", config.sizes.back(), config.seed, dev, 1e-9,
                           dev <= 1e-9, ""});
    }

    // decay_rate_reference: the default seq/alpha configuration pins sigma exactly
    {
        double dev = std::abs(decay_rate(256, 1024.0) - 0.8);
        dev = std::max(dev, std::abs(decay_rate(1024, 1024.0) - 1.0));
        dev = std::max(dev, std::abs(decay_rate(32, 1024.0) - 0.5));
        reports.push_back({"decay_rate_reference", 256, config.seed, dev, 1e-15, dev <= 1e-15, ""});
    }

    // rope_shift_invariance / rope_norm
    {
        double dev_shift = 0.0, dev_norm = 0.0;
        for (std::size_t inst = 0; inst < config.kernel_instances; ++inst) {
            for (std::size_t d : detail::kOracleDims) {
                SeededRng rng(detail::mix_seed(config.seed ^ 0x40febull, inst * 131 + d));
                RopeParams params{10000.0, d};
                std::vector<double> q(d), k(d);
                for (double& x : q) x = rng.normal();
                for (double& x : k) x = rng.normal();
                std::size_t i = rng.next_u64() % 64;
                std::size_t j = rng.next_u64() % 64;
                std::size_t s = 1 + rng.next_u64() % 32;
                double base_score = dot(rope_rotate(q, i, params), rope_rotate(k, j, params));
                double moved = dot(rope_rotate(q, i + s, params), rope_rotate(k, j + s, params));
                dev_shift = std::max(dev_shift, std::abs(base_score - moved));

                std::size_t pos = rng.next_u64() % 500;
                std::vector<double> rot = rope_rotate(q, pos, params);
                double n0 = std::sqrt(dot(q, q));
                double n1 = std::sqrt(dot(rot, rot));
                dev_norm = std::max(dev_norm, std::abs(n0 - n1));
            }
        }
        reports.push_back({"rope_shift_invariance", 64, config.seed, dev_shift, 1e-10,
                           dev_shift <= 1e-10, ""});
        reports.push_back({"rope_norm", 64, config.seed, dev_norm, 1e-12, dev_norm <= 1e-12, ""});
    }

    // gradient_check: analytic gradients against central differences
    {
        double dev = 0.0;
        std::size_t grad_instances = std::min<std::size_t>(config.decode_instances, 50);
        for (std::size_t inst = 0; inst < grad_instances; ++inst) {
            SeededRng rng(detail::mix_seed(config.seed ^ 0x9cadull, inst));
            std::size_t n = 2 + rng.next_u64() % 7;  // up to 8
            std::size_t d = 1 + rng.next_u64() % 8;  // up to 8
            AttentionInputs in = detail::random_inputs(n, d, rng);
            Matrix upstream = random_normal(n, d, rng);
            AttentionGradients grads = farsight_attention_grad(in, base, upstream);

            auto flatten_loss = [&](const Matrix& q, const Matrix& k, const Matrix& v) {
                AttentionResult r =
                    farsight_attention(AttentionInputs::make(q, k, v), base, 0);
                double loss = 0.0;
                for (std::size_t idx = 0; idx < r.output.data.size(); ++idx)
                    loss += upstream.data[idx] * r.output.data[idx];
                return loss;
            };
            struct Slot {
                const Matrix* grad;
                int which;
            };
            Slot slots[3] = {{&grads.dq, 0}, {&grads.dk, 1}, {&grads.dv, 2}};
            for (const Slot& slot : slots) {
                auto f = [&](const std::vector<double>& flat) {
                    Matrix q = in.q, k = in.k, v = in.v;
                    Matrix* target = slot.which == 0 ? &q : slot.which == 1 ? &k : &v;
                    target->data = flat;
                    return flatten_loss(q, k, v);
                };
                const Matrix* source =
                    slot.which == 0 ? &in.q : slot.which == 1 ? &in.k : &in.v;
                std::vector<double> fd = finite_difference_grad(f, source->data, 1e-6);
                double norm = 1e-6;
                for (double g : fd) norm = std::max(norm, std::abs(g));
                for (std::size_t idx = 0; idx < fd.size(); ++idx)
                    dev = std::max(dev, std::abs(fd[idx] - slot.grad->data[idx]) / norm);
            }
        }
        reports.push_back({"gradient_check", 8, config.seed, dev, 1e-5, dev <= 1e-5, ""});
    }

    // decode-level properties on small synthetic models
    {
        RegisterSchedule sched = base;
        double dev_det = 0.0, dev_sample = 0.0, dev_beam1 = 0.0, dev_beamlp = 0.0,
               dev_cache = 0.0;
        for (std::size_t inst = 0; inst < config.decode_instances; ++inst) {
            std::uint64_t s = detail::mix_seed(config.seed ^ 0xdec0deull, inst);
            ModelWeights model = generate_synthetic_model(detail::small_config(s));
            SeededRng rng(s);
            TokenSequence prompt = detail::random_prompt(model.vocab_size, 4 + inst % 3, rng);

            DecodeResult g1 = decode(model, prompt, DecodeStrategy::make_greedy(),
                                     MaskMode::farsight, sched, 6);
            DecodeResult g2 = decode(model, prompt, DecodeStrategy::make_greedy(),
                                     MaskMode::farsight, sched, 6);
            if (g1.generated != g2.generated) dev_det = 1.0;

            DecodeResult s1 = decode(model, prompt, DecodeStrategy::make_sample(0.9, s),
                                     MaskMode::farsight, sched, 6);
            DecodeResult s2 = decode(model, prompt, DecodeStrategy::make_sample(0.9, s),
                                     MaskMode::farsight, sched, 6);
            if (s1.generated != s2.generated) dev_sample = 1.0;

            DecodeResult b1 = decode(model, prompt, DecodeStrategy::make_beam(1),
                                     MaskMode::farsight, sched, 6);
            if (b1.generated != g1.generated) dev_beam1 = 1.0;

            DecodeResult b4 = decode(model, prompt, DecodeStrategy::make_beam(4),
                                     MaskMode::farsight, sched, 6);
            dev_beamlp = std::max(dev_beamlp,
                                  g1.cumulative_log_prob - b4.cumulative_log_prob);

            if (inst < 20) {
                DecodeResult full = decode(model, prompt, DecodeStrategy::make_greedy(),
                                           MaskMode::causal, sched, 6);
                DecodeResult cached = decode(model, prompt, DecodeStrategy::make_greedy(),
                                             MaskMode::causal, sched, 6, CacheMode::cached);
                if (full.generated != cached.generated) dev_cache = 1.0;
            }
        }
        dev_beamlp = std::max(dev_beamlp, 0.0);
        reports.push_back({"decode_deterministic", 16, config.seed, dev_det, 0.0,
                           dev_det == 0.0, ""});
        reports.push_back({"sampling_reproducible", 16, config.seed, dev_sample, 0.0,
                           dev_sample == 0.0, ""});
        reports.push_back({"beam1_equals_greedy", 16, config.seed, dev_beam1, 0.0,
                           dev_beam1 == 0.0, ""});
        reports.push_back({"beam_logprob_ge_greedy", 16, config.seed, dev_beamlp, 1e-12,
                           dev_beamlp <= 1e-12, ""});
        reports.push_back({"decode_cache_consistency", 16, config.seed, dev_cache, 0.0,
                           dev_cache == 0.0, ""});
    }

    // causality_forward: swapping a trailing pad token never moves logits of
    // earlier positions
    {
        double dev = 0.0;
        for (std::size_t inst = 0; inst < 20; ++inst) {
            std::uint64_t s = detail::mix_seed(config.seed ^ 0xfad5ull, inst);
            ModelWeights model = generate_synthetic_model(detail::small_config(s));
            SeededRng rng(s);
            TokenSequence prompt = detail::random_prompt(model.vocab_size, 5, rng);
            TokenSequence with_a = prompt;
            TokenSequence with_b = prompt;
            with_a.append(1, Modality::text);
            with_b.append(2, Modality::text);
            for (MaskMode mode : {MaskMode::causal, MaskMode::farsight}) {
                Matrix la = forward(model, with_a, mode, base);
                Matrix lb = forward(model, with_b, mode, base);
                for (std::size_t i = 0; i < prompt.size(); ++i) {
                    if (std::memcmp(&la.data[i * la.cols], &lb.data[i * lb.cols],
                                    la.cols * sizeof(double)) != 0)
                        dev = std::max(dev, 1.0);
                    dev = std::max(dev, max_abs_diff(la.row(i), lb.row(i)));
                }
            }
        }
        reports.push_back({"causality_forward", 6, config.seed, dev, 0.0, dev == 0.0, ""});
    }

    // model file round trip, bit for bit
    {
        double dev = 0.0;
        ModelWeights reference = generate_synthetic_model(detail::reference_config());
        std::string ref_bytes = serialize_model(reference);
        if (serialize_model(deserialize_model(ref_bytes)) != ref_bytes) dev = 1.0;
        for (std::size_t inst = 0; inst < 5; ++inst) {
            std::uint64_t s = detail::mix_seed(config.seed ^ 0x10ull, inst);
            ModelWeights alt = generate_synthetic_model(detail::small_config(s));
            std::string bytes = serialize_model(alt);
            if (serialize_model(deserialize_model(bytes)) != bytes) dev = 1.0;
        }
        reports.push_back({"model_roundtrip", 32, config.seed, dev, 0.0, dev == 0.0, ""});
    }

    // multi-head wrapper against its dense restatement
    {
        double dev = 0.0;
        for (std::size_t inst = 0; inst < 20; ++inst) {
            SeededRng rng(detail::mix_seed(config.seed ^ 0x3adull, inst));
            std::size_t heads = std::vector<std::size_t>{1, 2, 4}[inst % 3];
            std::size_t d_model = 16;
            Matrix x = random_normal(8, d_model, rng);
            MhaWeights w{random_normal(d_model, d_model, rng),
                         random_normal(d_model, d_model, rng),
                         random_normal(d_model, d_model, rng),
                         random_normal(d_model, d_model, rng)};
            for (MaskMode mode : {MaskMode::causal, MaskMode::farsight, MaskMode::alibi}) {
                RegisterSchedule sched = base;
                if (inst % 2 == 1 && mode == MaskMode::farsight) {
                    sched.mode = ScheduleMode::per_head;
                    sched.head_count = heads;
                }
                Matrix got = multi_head_attention(x, w, heads, mode, sched);
                Matrix want = naive_multi_head(x, w, heads, mode, sched);
                dev = std::max(dev, max_abs_diff(got, want));
            }
        }
        reports.push_back({"mha_oracle", 8, config.seed, dev, 1e-12, dev <= 1e-12, ""});
    }

    // reference-model decodes: independent forward oracle and the steep-decay
    // reduction, end to end
    {
        ModelWeights model = generate_synthetic_model(detail::reference_config());
        TokenSequence prompt = TokenSequence::from_ids({1, 2, 3}, 0);
        double dev_oracle = 0.0;
        for (MaskMode mode : {MaskMode::causal, MaskMode::farsight}) {
            DecodeResult got = decode(model, prompt, DecodeStrategy::make_greedy(), mode,
                                      base, 8);
            std::vector<int> want = naive_greedy_decode(model, prompt, mode, base, 8);
            if (got.generated != want) dev_oracle = 1.0;
        }
        reports.push_back({"decode_forward_oracle", 11, config.seed, dev_oracle, 0.0,
                           dev_oracle == 0.0, ""});

        RegisterSchedule steep = RegisterSchedule::with_sigma(50.0);
        DecodeResult fs = decode(model, prompt, DecodeStrategy::make_greedy(),
                                 MaskMode::farsight, steep, 8);
        DecodeResult ca = decode(model, prompt, DecodeStrategy::make_greedy(),
                                 MaskMode::causal, steep, 8);
        double dev_large = fs.generated == ca.generated ? 0.0 : 1.0;
        reports.push_back({"large_sigma_decode", 11, config.seed, dev_large, 0.0,
                           dev_large == 0.0, ""});
    }

    // sensitivity: each broken kernel must trip at least one property above
    if (config.mutation == Mutation::none && config.sensitivity_checks) {
        for (Mutation m : {Mutation::register_sign, Mutation::no_remask,
                           Mutation::pseudocode_sigma}) {
            SuiteConfig probe = config;
            probe.sizes = {3, 8};
            probe.kernel_instances = 10;
            probe.decode_instances = 4;
            probe.mutation = m;
            probe.sensitivity_checks = false;
            std::vector<OracleReport> probe_reports = run_property_suite(probe);
            std::vector<std::string> names;
            for (const OracleReport& r : probe_reports)
                if (!r.pass && std::find(names.begin(), names.end(), r.property) == names.end())
                    names.push_back(r.property);
            std::string failed;
            for (const std::string& name : names)
                failed += (failed.empty() ? "" : "+") + name;
            bool caught = !failed.empty();
            reports.push_back({std::string("suite_sensitivity_") +
                                   (m == Mutation::register_sign  ? "register_sign"
                                    : m == Mutation::no_remask    ? "no_remask"
                                                                  : "pseudocode_sigma"),
                               8, config.seed, caught ? 0.0 : 1.0, 0.0, caught, failed});
        }
    }

    return reports;
}

inline std::vector<OracleReport> run_property_suite(std::uint64_t seed,
                                                    const std::vector<std::size_t>& sizes) {
    SuiteConfig config;
    config.seed = seed;
    config.sizes = sizes;
    return run_property_suite(config);
}

}  // namespace farsight::verify
