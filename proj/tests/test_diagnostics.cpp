#include <doctest.h>

#include <cmath>

#include "farsight/decoder.hpp"
#include "farsight/diagnostics.hpp"

using namespace farsight;

namespace {

const RegisterSchedule kSched = RegisterSchedule::from_decay_rate(256, 1024.0);

AttentionTrace traced_run(MaskMode mode, std::size_t steps, std::size_t vision_prefix) {
    ModelWeights model = generate_synthetic_model(ModelConfig{32, 16, 2, 2, 23});
    TokenSequence prompt = TokenSequence::from_ids({1, 2, 3, 4, 5, 6}, vision_prefix);
    return decode(model, prompt, DecodeStrategy::make_greedy(), mode, kSched, steps).trace;
}

}  // namespace

TEST_CASE("beta sequence reads one layer/head/step cell of the trace") {
    AttentionTrace trace = traced_run(MaskMode::farsight, 3, 0);
    std::vector<double> beta = beta_sequence(trace, 1, 0, 2);
    CHECK(beta.size() == trace.step_lengths[2]);
    // final row of the register kernel keeps all of its mass
    CHECK(std::abs(beta.back() - 1.0) < 1e-12);
    CHECK_THROWS_AS(beta_sequence(trace, 5, 0, 0), Error);
    CHECK_THROWS_AS(beta_sequence(trace, 0, 0, 9), Error);
}

TEST_CASE("visual attention curve has one value per decode step") {
    AttentionTrace trace = traced_run(MaskMode::farsight, 4, 3);
    DecayCurve curve = visual_attention_curve(trace, 3);
    REQUIRE(curve.values.size() == 4);
    for (double v : curve.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("empty vision prefix yields an all-zero curve") {
    AttentionTrace trace = traced_run(MaskMode::causal, 3, 0);
    DecayCurve curve = visual_attention_curve(trace, 0);
    for (double v : curve.values) CHECK(v == 0.0);
}

TEST_CASE("curve rejects a prefix longer than the prompt") {
    AttentionTrace trace = traced_run(MaskMode::causal, 2, 2);
    CHECK_THROWS_AS(visual_attention_curve(trace, 7), Error);
    CHECK_THROWS_AS(visual_attention_curve(AttentionTrace{}, 0), Error);
}

TEST_CASE("collapse metric averages mass on the designated columns") {
    AttentionTrace trace = traced_run(MaskMode::causal, 3, 0);
    CollapseReport report = collapse_metric(trace, {0, 1});
    CHECK(report.per_step_mass.size() == 3);
    double mean = 0.0;
    for (double v : report.per_step_mass) mean += v;
    mean /= 3.0;
    CHECK(std::abs(report.aggregate_share - mean) < 1e-15);
    CHECK(report.outlier_indices == std::vector<std::size_t>{0, 1});

    CHECK(collapse_metric(trace, {}).aggregate_share == 0.0);
    CHECK_THROWS_AS(collapse_metric(trace, {99}), Error);
}

TEST_CASE("outlier suggestion flags only heavy columns") {
    AttentionTrace trace = traced_run(MaskMode::causal, 3, 0);
    // a generous threshold yields nothing; a trivial threshold flags column 0
    CHECK(suggest_outliers(trace, 1e9).empty());
    std::vector<std::size_t> all = suggest_outliers(trace, 1e-9);
    CHECK_FALSE(all.empty());
    CHECK_THROWS_AS(suggest_outliers(trace, 0.0), Error);
    CHECK_THROWS_AS(suggest_outliers(AttentionTrace{}), Error);
}

TEST_CASE("mode comparison reports all three masks over the same prompt") {
    ModelWeights model = generate_synthetic_model(ModelConfig{32, 16, 2, 2, 23});
    TokenSequence prompt = TokenSequence::from_ids({1, 2, 3, 4}, 2);
    ComparisonReport report = compare_modes(model, prompt, kSched, 3, {0});

    CHECK(report.steps == 3);
    CHECK(std::abs(report.sigma - 0.8) < 1e-15);
    REQUIRE(report.per_mode.size() == 3);
    for (const auto& [mode, mr] : report.per_mode) {
        CHECK(mr.curve.values.size() == 3);
        CHECK(mr.collapse.per_step_mass.size() == 3);
        CHECK(mr.beta_mean.size() == 3);
        if (mode == MaskMode::farsight) {
            // early rows still carry registers, so the mean surviving mass dips below one
            for (double b : mr.beta_mean) CHECK(b < 1.0);
        } else {
            for (double b : mr.beta_mean) CHECK(std::abs(b - 1.0) < 1e-12);
        }
    }
    CHECK_THROWS_AS(compare_modes(model, prompt, kSched, 0), Error);
}

TEST_CASE("register mask leaves early rows with less than unit surviving mass") {
    // row 0 of the prompt pass competes against registers for every later
    // position, so its surviving mass must fall strictly below one; the
    // newest row has no registers and keeps exactly one
    AttentionTrace trace = traced_run(MaskMode::farsight, 2, 0);
    std::size_t first_len = trace.step_lengths.front();
    REQUIRE(first_len > 1);
    const TraceEntry* e = trace.find(0, 0, 0);
    REQUIRE(e != nullptr);
    double surviving = 0.0;
    for (std::size_t j = 0; j < first_len; ++j) surviving += e->probs(0, j);
    CHECK(surviving < 1.0);
    CHECK(surviving > 0.0);
    CHECK(e->beta.front() == surviving);
    CHECK(std::abs(e->beta.back() - 1.0) < 1e-12);
}
