#pragma once

// Attention kernels. The register kernel softmaxes each row over its
// surviving scores plus the decaying register scores, then drops the register
// probabilities without renormalising, so row i keeps only a fraction
// beta_i of its mass. Also here: rotary position encoding, the plain causal
// and distance-penalty baselines, multi-head dispatch and analytic gradients.

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "farsight/masks.hpp"
#include "farsight/numerics.hpp"

namespace farsight {

enum class MaskMode { causal, farsight, alibi };

inline const char* mask_mode_name(MaskMode m) {
    switch (m) {
        case MaskMode::causal: return "causal";
        case MaskMode::farsight: return "farsight";
        case MaskMode::alibi: return "alibi";
    }
    return "unknown";
}

struct AttentionInputs {
    Matrix q;      // n x d_l
    Matrix k;      // n x d_l
    Matrix v;      // n x d_l
    double scale;  // 1 / sqrt(d_l)

    static AttentionInputs make(Matrix q, Matrix k, Matrix v) {
        AttentionInputs in{std::move(q), std::move(k), std::move(v), 0.0};
        if (in.q.rows == 0 || in.q.cols == 0)
            throw Error(ErrorKind::dimension, "AttentionInputs: empty q");
        if (!in.q.same_shape(in.k) || !in.q.same_shape(in.v))
            throw Error(ErrorKind::dimension, "AttentionInputs: q/k/v shapes differ");
        in.scale = 1.0 / std::sqrt(static_cast<double>(in.q.cols));
        return in;
    }

    std::size_t seq_len() const { return q.rows; }
    std::size_t head_dim() const { return q.cols; }

    void validate() const {
        if (q.rows == 0 || q.cols == 0)
            throw Error(ErrorKind::dimension, "AttentionInputs: empty q");
        if (!q.same_shape(k) || !q.same_shape(v))
            throw Error(ErrorKind::dimension, "AttentionInputs: q/k/v shapes differ");
        if (!(scale > 0.0) || !std::isfinite(scale))
            throw Error(ErrorKind::domain, "AttentionInputs: scale must be positive");
        for (const Matrix* m : {&q, &k, &v})
            for (double x : m->data)
                if (!std::isfinite(x))
                    throw Error(ErrorKind::numeric, "AttentionInputs: non-finite entry");
    }
};

struct AttentionResult {
    Matrix output;             // n x d_l
    Matrix probs;              // n x n, exact zeros above the diagonal
    std::vector<double> beta;  // per-row surviving probability mass
};

struct RopeParams {
    double theta_base = 10000.0;
    std::size_t head_dim = 0;  // must be even
};

// Rotate coordinate pairs (2m, 2m+1) by position * theta_base^(-2m / d).
// Norm-preserving, and the dot product of two rotated vectors depends on
// their positions only through the offset between them.
inline std::vector<double> rope_rotate(std::span<const double> x, std::size_t position,
                                       const RopeParams& params) {
    if (params.head_dim != x.size())
        throw Error(ErrorKind::dimension, "rope_rotate: vector length differs from head_dim");
    if (params.head_dim == 0 || params.head_dim % 2 != 0)
        throw Error(ErrorKind::dimension, "rope_rotate: head_dim must be even and positive");
    if (!(params.theta_base > 0.0))
        throw Error(ErrorKind::domain, "rope_rotate: theta_base must be positive");
    std::vector<double> out(x.size());
    double d = static_cast<double>(params.head_dim);
    for (std::size_t m = 0; m * 2 < x.size(); ++m) {
        double angle = static_cast<double>(position) *
                       std::pow(params.theta_base, -2.0 * static_cast<double>(m) / d);
        double c = std::cos(angle);
        double s = std::sin(angle);
        double x0 = x[2 * m];
        double x1 = x[2 * m + 1];
        out[2 * m] = c * x0 - s * x1;
        out[2 * m + 1] = s * x0 + c * x1;
    }
    return out;
}

inline void rope_rotate_rows(Matrix& m, const RopeParams& params) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        std::vector<double> r = rope_rotate(m.row(i), i, params);
        std::copy(r.begin(), r.end(), m.data.begin() + i * m.cols);
    }
}

namespace detail {

// Scores of row i against keys 0..i. Never touches later rows of k, which is
// what makes the causality checks bit-exact rather than merely approximate.
inline std::vector<double> row_scores(const AttentionInputs& in, std::size_t i) {
    std::vector<double> scores(i + 1);
    for (std::size_t j = 0; j <= i; ++j)
        scores[j] = in.scale * dot(in.q.row(i), in.k.row(j));
    return scores;
}

inline void accumulate_output_row(Matrix& out, std::size_t i,
                                  std::span<const double> probs, const Matrix& v) {
    for (std::size_t j = 0; j < probs.size(); ++j)
        for (std::size_t c = 0; c < v.cols; ++c) out(i, c) += probs[j] * v(j, c);
}

}  // namespace detail

inline AttentionResult causal_attention(const AttentionInputs& in) {
    in.validate();
    std::size_t n = in.seq_len();
    AttentionResult res{Matrix(n, in.head_dim()), Matrix(n, n), std::vector<double>(n, 1.0)};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> probs = softmax_row(detail::row_scores(in, i));
        for (std::size_t j = 0; j <= i; ++j) res.probs(i, j) = probs[j];
        detail::accumulate_output_row(res.output, i, probs, in.v);
    }
    return res;
}

// The register kernel. Row i is softmaxed jointly over its i+1 surviving
// scores and its n-i-1 register scores -(m)*rate, m = 1..n-i-1; the register
// probabilities are then discarded. beta_i is the mass that survives. The
// final row has no registers, so beta_n = 1 up to rounding.
inline AttentionResult farsight_attention(const AttentionInputs& in,
                                          const RegisterSchedule& schedule,
                                          std::size_t head = 0) {
    in.validate();
    schedule.validate();
    std::size_t n = in.seq_len();
    double rate = schedule.slope_for_head(head);
    AttentionResult res{Matrix(n, in.head_dim()), Matrix(n, n), std::vector<double>(n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> scores = detail::row_scores(in, i);
        if (schedule.pseudocode_scaling)
            for (double& s : scores) s *= schedule.sigma;
        scores.reserve(n);
        for (std::size_t m = 1; m + i < n; ++m)
            scores.push_back(-static_cast<double>(m) * rate);
        std::vector<double> probs = softmax_row(scores);
        double surviving = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            res.probs(i, j) = probs[j];
            surviving += probs[j];
        }
        res.beta[i] = surviving;
        detail::accumulate_output_row(res.output, i,
                                      std::span<const double>(probs.data(), i + 1), in.v);
    }
    return res;
}

// Distance-penalty baseline: score j gets -slope * (i - j), no registers,
// no rotary encoding. Rows renormalise to 1 as in the causal kernel.
inline AttentionResult alibi_attention(const AttentionInputs& in, double slope) {
    in.validate();
    if (!(slope > 0.0) || !std::isfinite(slope))
        throw Error(ErrorKind::domain, "alibi_attention: slope must be positive");
    std::size_t n = in.seq_len();
    AttentionResult res{Matrix(n, in.head_dim()), Matrix(n, n), std::vector<double>(n, 1.0)};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> scores = detail::row_scores(in, i);
        for (std::size_t j = 0; j <= i; ++j)
            scores[j] -= slope * static_cast<double>(i - j);
        std::vector<double> probs = softmax_row(scores);
        for (std::size_t j = 0; j <= i; ++j) res.probs(i, j) = probs[j];
        detail::accumulate_output_row(res.output, i, probs, in.v);
    }
    return res;
}

// Splits one row of the joint softmax into its surviving part (alpha, keys
// 0..row) and its register part (gamma, offsets 1..n-row-1). The two sum to
// one; the alpha sum is that row's beta.
inline std::pair<std::vector<double>, std::vector<double>> farsight_row_decomposition(
    const AttentionInputs& in, const RegisterSchedule& schedule, std::size_t row,
    std::size_t head = 0) {
    in.validate();
    schedule.validate();
    std::size_t n = in.seq_len();
    if (row >= n)
        throw Error(ErrorKind::index, "farsight_row_decomposition: row out of range");
    double rate = schedule.slope_for_head(head);
    std::vector<double> scores = detail::row_scores(in, row);
    if (schedule.pseudocode_scaling)
        for (double& s : scores) s *= schedule.sigma;
    for (std::size_t m = 1; m + row < n; ++m)
        scores.push_back(-static_cast<double>(m) * rate);
    std::vector<double> probs = softmax_row(scores);
    std::vector<double> alpha(probs.begin(), probs.begin() + static_cast<std::ptrdiff_t>(row + 1));
    std::vector<double> gamma(probs.begin() + static_cast<std::ptrdiff_t>(row + 1), probs.end());
    return {std::move(alpha), std::move(gamma)};
}

struct AttentionGradients {
    Matrix dq;
    Matrix dk;
    Matrix dv;
};

// Analytic gradients of sum(upstream * output) through the register kernel.
// Register columns enter every row's softmax denominator, so they shape the
// gradients of the surviving scores even though they carry no upstream
// signal and contribute nothing to dq/dk directly (their scores are
// constants, not functions of q or k).
inline AttentionGradients farsight_attention_grad(const AttentionInputs& in,
                                                  const RegisterSchedule& schedule,
                                                  const Matrix& upstream,
                                                  std::size_t head = 0) {
    in.validate();
    schedule.validate();
    std::size_t n = in.seq_len();
    std::size_t d = in.head_dim();
    if (upstream.rows != n || upstream.cols != d)
        throw Error(ErrorKind::dimension, "farsight_attention_grad: upstream shape mismatch");
    double rate = schedule.slope_for_head(head);

    // Full joint softmax matrix, register probabilities included.
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> scores = detail::row_scores(in, i);
        if (schedule.pseudocode_scaling)
            for (double& s : scores) s *= schedule.sigma;
        for (std::size_t m = 1; m + i < n; ++m)
            scores.push_back(-static_cast<double>(m) * rate);
        std::vector<double> probs = softmax_row(scores);
        for (std::size_t j = 0; j < n; ++j) a(i, j) = probs[j];
    }

    // d(loss)/d(probs): only surviving entries feed the output.
    Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) g(i, j) = dot(upstream.row(i), in.v.row(j));

    // Softmax backward per row, then slice away the register columns: their
    // scores are constants, so only surviving columns propagate into q and k.
    Matrix d_omega(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double weighted = 0.0;
        for (std::size_t j = 0; j <= i; ++j) weighted += g(i, j) * a(i, j);
        for (std::size_t j = 0; j <= i; ++j) {
            double dw = a(i, j) * (g(i, j) - weighted);
            d_omega(i, j) = schedule.pseudocode_scaling ? dw * schedule.sigma : dw;
        }
    }

    AttentionGradients grads{matmul(d_omega, in.k), matmul(transpose(d_omega), in.q),
                             Matrix(n, d)};
    for (double& x : grads.dq.data) x *= in.scale;
    for (double& x : grads.dk.data) x *= in.scale;

    // dv = (surviving probs)^T * upstream
    Matrix surviving(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) surviving(i, j) = a(i, j);
    grads.dv = matmul(transpose(surviving), upstream);
    return grads;
}

struct MhaWeights {
    Matrix wq;  // d_model x d_model
    Matrix wk;
    Matrix wv;
    Matrix wo;
};

struct HeadTrace {
    Matrix probs;
    std::vector<double> beta;
};

// Multi-head wrapper: project, split columns into heads, rotate q/k by row
// position (except in alibi mode, which replaces rotation with its distance
// penalty), run the per-mode kernel, concatenate and project out.
inline Matrix multi_head_attention(const Matrix& x, const MhaWeights& w,
                                   std::size_t head_count, MaskMode mode,
                                   const RegisterSchedule& schedule,
                                   std::vector<HeadTrace>* trace = nullptr) {
    if (x.rows == 0 || x.cols == 0)
        throw Error(ErrorKind::dimension, "multi_head_attention: empty input");
    if (head_count == 0 || x.cols % head_count != 0)
        throw Error(ErrorKind::dimension,
                    "multi_head_attention: width must divide evenly into heads");
    for (const Matrix* m : {&w.wq, &w.wk, &w.wv, &w.wo})
        if (m->rows != x.cols || m->cols != x.cols)
            throw Error(ErrorKind::dimension, "multi_head_attention: weight shape mismatch");
    schedule.validate();
    if (mode == MaskMode::farsight && schedule.mode == ScheduleMode::per_head &&
        schedule.head_count != head_count)
        throw Error(ErrorKind::domain,
                    "multi_head_attention: per-head schedule disagrees with head count");

    std::size_t n = x.rows;
    std::size_t dh = x.cols / head_count;
    Matrix q = matmul(x, w.wq);
    Matrix k = matmul(x, w.wk);
    Matrix v = matmul(x, w.wv);
    std::vector<double> slopes = mode == MaskMode::alibi ? head_slopes(head_count)
                                                         : std::vector<double>();
    RopeParams rope{10000.0, dh};

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
            rope_rotate_rows(qh, rope);
            rope_rotate_rows(kh, rope);
        }
        AttentionInputs in = AttentionInputs::make(std::move(qh), std::move(kh), std::move(vh));
        AttentionResult res;
        switch (mode) {
            case MaskMode::causal: res = causal_attention(in); break;
            case MaskMode::farsight: res = farsight_attention(in, schedule, h); break;
            case MaskMode::alibi: res = alibi_attention(in, slopes[h]); break;
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < dh; ++c) concat(i, h * dh + c) = res.output(i, c);
        if (trace) trace->push_back(HeadTrace{std::move(res.probs), std::move(res.beta)});
    }
    return matmul(concat, w.wo);
}

}  // namespace farsight
