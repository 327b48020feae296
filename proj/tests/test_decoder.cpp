#include <doctest.h>

#include <cmath>
#include <vector>

#include "farsight/decoder.hpp"
#include "farsight/verify.hpp"

using namespace farsight;

namespace {

const RegisterSchedule kSched = RegisterSchedule::from_decay_rate(256, 1024.0);

ModelWeights small_model(std::uint64_t seed = 11) {
    return generate_synthetic_model(ModelConfig{32, 16, 2, 2, seed});
}

}  // namespace

TEST_CASE("token sequences track ids, modality and positions together") {
    TokenSequence t = TokenSequence::from_ids({4, 5, 6, 7}, 2);
    CHECK(t.size() == 4);
    CHECK(t.vision_prefix_len() == 2);
    CHECK(t.modality[1] == Modality::vision);
    CHECK(t.modality[2] == Modality::text);
    CHECK(t.positions[3] == 3);

    t.append(9, Modality::text);
    CHECK(t.size() == 5);
    CHECK(t.positions[4] == 4);
    t.validate(32);

    CHECK_THROWS_AS(TokenSequence::from_ids({1, 2}, 3), Error);
}

TEST_CASE("token sequence validation catches structural problems") {
    TokenSequence t = TokenSequence::from_ids({1, 2, 3});
    t.validate(10);
    CHECK_THROWS_AS(t.validate(3), Error);  // id 3 outside vocab of size 3

    TokenSequence scrambled = t;
    scrambled.positions[1] = 5;
    CHECK_THROWS_AS(scrambled.validate(10), Error);

    TokenSequence interleaved = TokenSequence::from_ids({1, 2, 3}, 1);
    interleaved.modality[2] = Modality::vision;  // vision after text
    CHECK_THROWS_AS(interleaved.validate(10), Error);

    TokenSequence ragged = t;
    ragged.modality.pop_back();
    CHECK_THROWS_AS(ragged.validate(10), Error);
}

TEST_CASE("model config rejects shapes the heads cannot split") {
    CHECK_THROWS_AS((ModelConfig{64, 32, 5, 2, 0}).validate(), Error);   // 5 does not divide 32
    CHECK_THROWS_AS((ModelConfig{64, 30, 6, 2, 0}).validate(), Error);   // per-head width 5, odd
    CHECK_THROWS_AS((ModelConfig{0, 32, 4, 2, 0}).validate(), Error);
    (ModelConfig{64, 32, 4, 2, 0}).validate();
}

TEST_CASE("synthetic models are a pure function of config and seed") {
    ModelWeights a = small_model(7);
    ModelWeights b = small_model(7);
    ModelWeights c = small_model(8);
    CHECK(bits_equal(a.embedding, b.embedding));
    CHECK(bits_equal(a.layers[1].mlp_w1, b.layers[1].mlp_w1));
    CHECK_FALSE(bits_equal(a.embedding, c.embedding));
    CHECK(a.layers[0].attn_norm == std::vector<double>(16, 1.0));
    CHECK(a.seed == 7);
}

TEST_CASE("forward returns one logit row per position and fills the trace") {
    ModelWeights model = small_model();
    TokenSequence prompt = TokenSequence::from_ids({1, 2, 3, 4}, 2);

    AttentionTrace trace;
    Matrix logits = forward(model, prompt, MaskMode::farsight, kSched, &trace, 0);
    CHECK(logits.rows == 4);
    CHECK(logits.cols == model.vocab_size);
    CHECK(trace.layer_count == 2);
    CHECK(trace.head_count == 2);
    CHECK(trace.entries.size() == 4);  // layers x heads
    CHECK(trace.step_lengths == std::vector<std::size_t>{4});
    CHECK(trace.modality[0] == Modality::vision);

    CHECK_THROWS_AS(forward(model, TokenSequence{}, MaskMode::causal, kSched), Error);
}

TEST_CASE("greedy decode is deterministic and records per-step summaries") {
    ModelWeights model = small_model();
    TokenSequence prompt = TokenSequence::from_ids({3, 1, 4});

    DecodeResult a = decode(model, prompt, DecodeStrategy::make_greedy(), MaskMode::farsight,
                            kSched, 6);
    DecodeResult b = decode(model, prompt, DecodeStrategy::make_greedy(), MaskMode::farsight,
                            kSched, 6);
    CHECK(a.generated == b.generated);
    CHECK(a.generated.size() == 6);
    REQUIRE(a.steps.size() == 6);
    double lp = 0.0;
    for (std::size_t t = 0; t < 6; ++t) {
        CHECK(a.steps[t].step == t);
        CHECK(a.steps[t].token == a.generated[t]);
        CHECK(a.steps[t].log_prob <= 0.0);
        lp += a.steps[t].log_prob;
    }
    CHECK(std::abs(lp - a.cumulative_log_prob) < 1e-12);
    CHECK(a.trace.steps() == 6);
    CHECK(a.trace.step_lengths.front() == 3);
    CHECK(a.trace.step_lengths.back() == 8);
}

TEST_CASE("seeded sampling reproduces itself and varies across seeds") {
    ModelWeights model = small_model();
    TokenSequence prompt = TokenSequence::from_ids({3, 1, 4});

    DecodeResult a = decode(model, prompt, DecodeStrategy::make_sample(0.8, 9),
                            MaskMode::farsight, kSched, 8);
    DecodeResult b = decode(model, prompt, DecodeStrategy::make_sample(0.8, 9),
                            MaskMode::farsight, kSched, 8);
    CHECK(a.generated == b.generated);

    // different seeds agreeing on all eight tokens would be suspicious but
    // not impossible; check across several seeds
    bool any_difference = false;
    for (std::uint64_t seed = 10; seed < 15 && !any_difference; ++seed) {
        DecodeResult c = decode(model, prompt, DecodeStrategy::make_sample(0.8, seed),
                                MaskMode::farsight, kSched, 8);
        any_difference = c.generated != a.generated;
    }
    CHECK(any_difference);

    CHECK_THROWS_AS(decode(model, prompt, DecodeStrategy::make_sample(0.0, 1),
                           MaskMode::farsight, kSched, 4),
                    Error);
}

TEST_CASE("beam search: width one is greedy, wider beams never score worse") {
    ModelWeights model = small_model();
    TokenSequence prompt = TokenSequence::from_ids({5, 2});

    DecodeResult greedy = decode(model, prompt, DecodeStrategy::make_greedy(),
                                 MaskMode::farsight, kSched, 5);
    DecodeResult beam1 = decode(model, prompt, DecodeStrategy::make_beam(1),
                                MaskMode::farsight, kSched, 5);
    CHECK(beam1.generated == greedy.generated);
    CHECK(std::abs(beam1.cumulative_log_prob - greedy.cumulative_log_prob) < 1e-12);

    DecodeResult beam4 = decode(model, prompt, DecodeStrategy::make_beam(4),
                                MaskMode::farsight, kSched, 5);
    CHECK(beam4.cumulative_log_prob >= greedy.cumulative_log_prob - 1e-12);
    CHECK(beam4.trace.steps() == 5);

    CHECK_THROWS_AS(decode(model, prompt, DecodeStrategy::make_beam(0), MaskMode::farsight,
                           kSched, 4),
                    Error);
}

TEST_CASE("cached causal decoding matches full recompute token for token") {
    ModelWeights model = small_model();
    TokenSequence prompt = TokenSequence::from_ids({1, 2, 3, 4, 5});

    DecodeResult full = decode(model, prompt, DecodeStrategy::make_greedy(), MaskMode::causal,
                               kSched, 8);
    DecodeResult cached = decode(model, prompt, DecodeStrategy::make_greedy(),
                                 MaskMode::causal, kSched, 8, CacheMode::cached);
    CHECK(full.generated == cached.generated);
    for (std::size_t t = 0; t < 8; ++t) {
        CHECK(full.steps[t].log_prob == cached.steps[t].log_prob);
        CHECK(full.steps[t].max_logit == cached.steps[t].max_logit);
    }

    DecodeResult sampled_full = decode(model, prompt, DecodeStrategy::make_sample(1.0, 4),
                                       MaskMode::causal, kSched, 8);
    DecodeResult sampled_cached =
        decode(model, prompt, DecodeStrategy::make_sample(1.0, 4), MaskMode::causal, kSched,
               8, CacheMode::cached);
    CHECK(sampled_full.generated == sampled_cached.generated);
}

TEST_CASE("the cached path refuses masks whose rows go stale") {
    ModelWeights model = small_model();
    TokenSequence prompt = TokenSequence::from_ids({1, 2});
    // register counts shrink as the sequence grows, so cached farsight rows
    // would be wrong; the decoder must refuse rather than drift
    CHECK_THROWS_AS(decode(model, prompt, DecodeStrategy::make_greedy(), MaskMode::farsight,
                           kSched, 4, CacheMode::cached),
                    Error);
    CHECK_THROWS_AS(decode(model, prompt, DecodeStrategy::make_beam(2), MaskMode::causal,
                           kSched, 4, CacheMode::cached),
                    Error);
}

TEST_CASE("decode validates prompt and token budget") {
    ModelWeights model = small_model();
    CHECK_THROWS_AS(decode(model, TokenSequence{}, DecodeStrategy::make_greedy(),
                           MaskMode::causal, kSched, 4),
                    Error);
    CHECK_THROWS_AS(decode(model, TokenSequence::from_ids({1}), DecodeStrategy::make_greedy(),
                           MaskMode::causal, kSched, 0),
                    Error);
    CHECK_THROWS_AS(decode(model, TokenSequence::from_ids({40}),
                           DecodeStrategy::make_greedy(), MaskMode::causal, kSched, 4),
                    Error);  // id outside the vocabulary
}

TEST_CASE("greedy decode agrees with the restated forward pass") {
    ModelWeights model = small_model(19);
    TokenSequence prompt = TokenSequence::from_ids({2, 7, 1});
    for (MaskMode mode : {MaskMode::causal, MaskMode::farsight, MaskMode::alibi}) {
        DecodeResult got = decode(model, prompt, DecodeStrategy::make_greedy(), mode, kSched, 5);
        std::vector<int> want = verify::naive_greedy_decode(model, prompt, mode, kSched, 5);
        CHECK(got.generated == want);
    }
}

TEST_CASE("per-head register schedule decodes end to end") {
    ModelWeights model = small_model();
    RegisterSchedule per_head = kSched;
    per_head.mode = ScheduleMode::per_head;
    per_head.head_count = model.head_count;
    TokenSequence prompt = TokenSequence::from_ids({1, 2, 3});

    DecodeResult run = decode(model, prompt, DecodeStrategy::make_greedy(),
                              MaskMode::farsight, per_head, 4);
    CHECK(run.generated.size() == 4);

    // a schedule sized for the wrong head count is refused inside the layers
    per_head.head_count = model.head_count + 1;
    CHECK_THROWS_AS(decode(model, prompt, DecodeStrategy::make_greedy(), MaskMode::farsight,
                           per_head, 4),
                    Error);
}
