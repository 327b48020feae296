#pragma once

// Mask construction: the lower-triangular ones matrix, the register score
// matrix that fills the upper triangle with a linear decay, and the schedule
// describing how steep that decay is (one global rate, or one rate per head).

#include <cmath>
#include <cstddef>
#include <vector>

#include "farsight/numerics.hpp"

namespace farsight {

enum class ScheduleMode { uniform, per_head };

// Decay rate sigma = log_alpha(seq): with seq = 256 and alpha = 1024 this is
// exactly 0.8. The rate is derived once from a fixed reference length, not
// from whatever sequence length a kernel call happens to see.
inline double decay_rate(std::size_t seq, double alpha) {
    if (seq < 2)
        throw Error(ErrorKind::domain, "decay_rate: reference length must be at least 2");
    if (!(alpha > 1.0))
        throw Error(ErrorKind::domain, "decay_rate: base must exceed 1");
    return std::log(static_cast<double>(seq)) / std::log(alpha);
}

// ALiBi-style geometric slopes 2^(-8h/H) for heads h = 1..H.
inline std::vector<double> head_slopes(std::size_t head_count) {
    if (head_count == 0)
        throw Error(ErrorKind::domain, "head_slopes: head count must be positive");
    std::vector<double> slopes(head_count);
    for (std::size_t h = 0; h < head_count; ++h)
        slopes[h] = std::exp2(-8.0 * static_cast<double>(h + 1) /
                              static_cast<double>(head_count));
    return slopes;
}

struct RegisterSchedule {
    double sigma = 0.8;
    std::size_t ref_len = 256;
    double alpha_base = 1024.0;
    ScheduleMode mode = ScheduleMode::uniform;
    std::size_t head_count = 1;
    // Optional variant that additionally multiplies the surviving scores by
    // sigma before the softmax. Off by default; the canonical combination is
    // W = masked scores + register scores with no extra scaling.
    bool pseudocode_scaling = false;

    static RegisterSchedule from_decay_rate(std::size_t seq, double alpha) {
        RegisterSchedule s;
        s.sigma = decay_rate(seq, alpha);
        s.ref_len = seq;
        s.alpha_base = alpha;
        return s;
    }

    static RegisterSchedule with_sigma(double sigma) {
        RegisterSchedule s;
        if (!(sigma > 0.0) || !std::isfinite(sigma))
            throw Error(ErrorKind::domain, "RegisterSchedule: sigma must be positive and finite");
        s.sigma = sigma;
        return s;
    }

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma))
            throw Error(ErrorKind::domain, "RegisterSchedule: sigma must be positive and finite");
        if (mode == ScheduleMode::per_head && head_count == 0)
            throw Error(ErrorKind::domain, "RegisterSchedule: per-head mode needs a head count");
    }

    // Decay rate seen by one head: the shared sigma in uniform mode, the
    // head's geometric slope in per-head mode.
    double slope_for_head(std::size_t head) const {
        if (mode == ScheduleMode::uniform) return sigma;
        if (head >= head_count)
            throw Error(ErrorKind::index, "RegisterSchedule: head index out of range");
        return head_slopes(head_count)[head];
    }
};

inline Matrix causal_ones(std::size_t n) {
    if (n == 0)
        throw Error(ErrorKind::dimension, "causal_ones: size must be positive");
    Matrix c(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) c(i, j) = 1.0;
    return c;
}

// Register scores: zero on and below the diagonal, -(j - i) * rate above it,
// so row i carries n - i - 1 decaying register entries.
inline Matrix register_scores(std::size_t n, const RegisterSchedule& schedule,
                              std::size_t head = 0) {
    if (n == 0)
        throw Error(ErrorKind::dimension, "register_scores: size must be positive");
    schedule.validate();
    double rate = schedule.slope_for_head(head);
    Matrix p(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            p(i, j) = -static_cast<double>(j - i) * rate;
    return p;
}

inline std::vector<Matrix> register_scores_per_head(std::size_t n,
                                                    const RegisterSchedule& schedule) {
    schedule.validate();
    std::size_t heads = schedule.mode == ScheduleMode::per_head ? schedule.head_count : 1;
    std::vector<Matrix> out;
    out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) out.push_back(register_scores(n, schedule, h));
    return out;
}

struct MaskPair {
    Matrix keep;       // lower-triangular ones
    Matrix registers;  // decaying upper-triangular scores
};

inline MaskPair build_masks(std::size_t n, const RegisterSchedule& schedule,
                            std::size_t head = 0) {
    return MaskPair{causal_ones(n), register_scores(n, schedule, head)};
}

}  // namespace farsight
