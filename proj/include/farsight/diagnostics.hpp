#pragma once

// Trace analysis: where does the newest row's attention mass go as decoding
// proceeds? Curves over a vision prefix, mass on suspected outlier columns,
// and a three-way comparison of the mask modes on one model.

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "farsight/decoder.hpp"
#include "farsight/trace.hpp"

namespace farsight {

struct DecayCurve {
    std::vector<double> values;  // one per decode step, in [0, 1]
};

struct CollapseReport {
    std::vector<std::size_t> outlier_indices;
    std::vector<double> per_step_mass;
    double aggregate_share = 0.0;
};

inline std::vector<double> beta_sequence(const AttentionTrace& trace, std::size_t layer,
                                         std::size_t head, std::size_t step) {
    const TraceEntry* e = trace.find(layer, head, step);
    if (!e)
        throw Error(ErrorKind::index, "beta_sequence: no trace entry for layer " +
                                          std::to_string(layer) + ", head " +
                                          std::to_string(head) + ", step " +
                                          std::to_string(step));
    return e->beta;
}

namespace detail {

// Mean over every (layer, head) entry of one step of the newest row's mass on
// the given columns.
template <typename ColumnPredicate>
double newest_row_mass(const AttentionTrace& trace, std::size_t step, ColumnPredicate keep) {
    std::size_t newest = trace.step_lengths[step] - 1;
    double total = 0.0;
    std::size_t count = 0;
    for (const TraceEntry& e : trace.entries) {
        if (e.step != step) continue;
        double mass = 0.0;
        for (std::size_t c = 0; c <= newest; ++c)
            if (keep(c)) mass += e.probs(newest, c);
        total += mass;
        ++count;
    }
    if (count == 0)
        throw Error(ErrorKind::index, "trace has no entries for step " + std::to_string(step));
    return total / static_cast<double>(count);
}

}  // namespace detail

inline DecayCurve visual_attention_curve(const AttentionTrace& trace,
                                         std::size_t vision_prefix_len) {
    if (trace.steps() == 0)
        throw Error(ErrorKind::dimension, "visual_attention_curve: empty trace");
    if (vision_prefix_len > trace.step_lengths.front())
        throw Error(ErrorKind::domain,
                    "visual_attention_curve: prefix longer than the prompt");
    DecayCurve curve;
    curve.values.reserve(trace.steps());
    for (std::size_t t = 0; t < trace.steps(); ++t)
        curve.values.push_back(detail::newest_row_mass(
            trace, t, [&](std::size_t c) { return c < vision_prefix_len; }));
    return curve;
}

inline CollapseReport collapse_metric(const AttentionTrace& trace,
                                      std::vector<std::size_t> outlier_indices) {
    if (trace.steps() == 0)
        throw Error(ErrorKind::dimension, "collapse_metric: empty trace");
    std::size_t max_len = *std::max_element(trace.step_lengths.begin(), trace.step_lengths.end());
    for (std::size_t idx : outlier_indices)
        if (idx >= max_len)
            throw Error(ErrorKind::index, "collapse_metric: outlier index " +
                                              std::to_string(idx) + " outside the sequence");
    CollapseReport report;
    report.outlier_indices = std::move(outlier_indices);
    double total = 0.0;
    for (std::size_t t = 0; t < trace.steps(); ++t) {
        double mass = detail::newest_row_mass(trace, t, [&](std::size_t c) {
            return std::find(report.outlier_indices.begin(), report.outlier_indices.end(), c) !=
                   report.outlier_indices.end();
        });
        report.per_step_mass.push_back(mass);
        total += mass;
    }
    report.aggregate_share = total / static_cast<double>(trace.steps());
    return report;
}

// Heuristic only, never applied silently: columns of the final step whose
// mean incoming attention exceeds k times the uniform share.
inline std::vector<std::size_t> suggest_outliers(const AttentionTrace& trace, double k = 5.0) {
    if (trace.steps() == 0)
        throw Error(ErrorKind::dimension, "suggest_outliers: empty trace");
    if (!(k > 0.0))
        throw Error(ErrorKind::domain, "suggest_outliers: threshold must be positive");
    std::size_t last = trace.steps() - 1;
    std::size_t len = trace.step_lengths[last];
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < len; ++c) {
        double mean_mass = 0.0;
        double mean_uniform = 0.0;
        std::size_t count = 0;
        for (const TraceEntry& e : trace.entries) {
            if (e.step != last) continue;
            for (std::size_t i = c; i < len; ++i) {
                mean_mass += e.probs(i, c);
                mean_uniform += 1.0 / static_cast<double>(i + 1);
                ++count;
            }
        }
        if (count > 0 && mean_mass / static_cast<double>(count) >
                             k * (mean_uniform / static_cast<double>(count)))
            out.push_back(c);
    }
    return out;
}

struct ModeReport {
    DecayCurve curve;
    CollapseReport collapse;
    // mean surviving mass per step, averaged over rows, layers and heads;
    // exactly one for the renormalising baselines, below one for the
    // register mask while early rows still carry registers
    std::vector<double> beta_mean;
};

struct ComparisonReport {
    std::size_t steps = 0;
    double sigma = 0.0;
    std::map<MaskMode, ModeReport> per_mode;
};

// Greedy-decodes the same prompt under all three mask modes and summarises
// each run's trace with the metrics above.
inline ComparisonReport compare_modes(const ModelWeights& model, const TokenSequence& prompt,
                                      const RegisterSchedule& schedule, std::size_t steps,
                                      std::vector<std::size_t> outlier_indices = {}) {
    if (steps == 0)
        throw Error(ErrorKind::domain, "compare_modes: need at least one step");
    ComparisonReport report;
    report.steps = steps;
    report.sigma = schedule.sigma;
    for (MaskMode mode : {MaskMode::causal, MaskMode::farsight, MaskMode::alibi}) {
        DecodeResult run = decode(model, prompt, DecodeStrategy::make_greedy(), mode,
                                  schedule, steps);
        ModeReport mr;
        mr.curve = visual_attention_curve(run.trace, prompt.vision_prefix_len());
        mr.collapse = collapse_metric(run.trace, outlier_indices);
        for (std::size_t t = 0; t < run.trace.steps(); ++t) {
            double total = 0.0;
            std::size_t count = 0;
            for (const TraceEntry& e : run.trace.entries)
                if (e.step == t)
                    for (double b : e.beta) {
                        total += b;
                        ++count;
                    }
            mr.beta_mean.push_back(total / static_cast<double>(count));
        }
        report.per_mode.emplace(mode, std::move(mr));
    }
    return report;
}

}  // namespace farsight
