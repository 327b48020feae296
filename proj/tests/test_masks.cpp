#include <doctest.h>

#include <cmath>

#include "farsight/masks.hpp"

using namespace farsight;

TEST_CASE("decay rate is the base-alpha log of the reference length") {
    // 256 = 1024^0.8, both powers of two, so the quotient of logs is exact
    CHECK(std::abs(decay_rate(256, 1024.0) - 0.8) < 1e-15);
    CHECK(decay_rate(1024, 1024.0) == 1.0);
    CHECK(decay_rate(32, 1024.0) == 0.5);
    CHECK(decay_rate(2, 2.0) == 1.0);

    CHECK_THROWS_AS(decay_rate(1, 1024.0), Error);
    CHECK_THROWS_AS(decay_rate(256, 1.0), Error);
    CHECK_THROWS_AS(decay_rate(256, 0.5), Error);
}

TEST_CASE("head slopes halve geometrically") {
    std::vector<double> s = head_slopes(8);
    const double expected[8] = {0.5,     0.25,      0.125,     0.0625,
                                0.03125, 0.015625, 0.0078125, 0.00390625};
    REQUIRE(s.size() == 8);
    for (std::size_t h = 0; h < 8; ++h) CHECK(s[h] == expected[h]);

    // single head gets 2^-8
    CHECK(head_slopes(1)[0] == 0.00390625);
    CHECK_THROWS_AS(head_slopes(0), Error);
}

TEST_CASE("register schedule construction and validation") {
    RegisterSchedule def;
    CHECK(def.sigma == 0.8);
    CHECK(def.mode == ScheduleMode::uniform);
    CHECK_FALSE(def.pseudocode_scaling);

    RegisterSchedule derived = RegisterSchedule::from_decay_rate(256, 1024.0);
    CHECK(std::abs(derived.sigma - 0.8) < 1e-15);
    CHECK(derived.ref_len == 256);
    CHECK(derived.alpha_base == 1024.0);

    RegisterSchedule explicit_sigma = RegisterSchedule::with_sigma(2.5);
    CHECK(explicit_sigma.sigma == 2.5);
    CHECK_THROWS_AS(RegisterSchedule::with_sigma(0.0), Error);
    CHECK_THROWS_AS(RegisterSchedule::with_sigma(-1.0), Error);

    RegisterSchedule bad;
    bad.sigma = -0.1;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad.sigma = 0.8;
    bad.mode = ScheduleMode::per_head;
    bad.head_count = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("slope_for_head: shared rate or per-head geometric slope") {
    RegisterSchedule uniform = RegisterSchedule::with_sigma(0.8);
    CHECK(uniform.slope_for_head(0) == 0.8);
    CHECK(uniform.slope_for_head(7) == 0.8);

    RegisterSchedule per_head = RegisterSchedule::with_sigma(0.8);
    per_head.mode = ScheduleMode::per_head;
    per_head.head_count = 4;
    CHECK(per_head.slope_for_head(0) == 0.25);
    CHECK(per_head.slope_for_head(3) == 0.00390625);
    CHECK_THROWS_AS(per_head.slope_for_head(4), Error);
}

TEST_CASE("causal ones matrix is lower triangular") {
    Matrix c = causal_ones(4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(c(i, j) == (j <= i ? 1.0 : 0.0));
    CHECK_THROWS_AS(causal_ones(0), Error);
}

TEST_CASE("register scores decay linearly with distance above the diagonal") {
    RegisterSchedule sched = RegisterSchedule::with_sigma(0.8);
    Matrix p = register_scores(4, sched);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            if (j <= i)
                CHECK(p(i, j) == 0.0);
            else
                CHECK(p(i, j) == -static_cast<double>(j - i) * 0.8);
        }
    CHECK(p(0, 3) == -2.4000000000000004);  // 3 * 0.8 in doubles
    CHECK_THROWS_AS(register_scores(0, sched), Error);
}

TEST_CASE("per-head register scores use each head's slope") {
    RegisterSchedule sched = RegisterSchedule::with_sigma(0.8);
    sched.mode = ScheduleMode::per_head;
    sched.head_count = 2;
    std::vector<Matrix> per_head = register_scores_per_head(3, sched);
    REQUIRE(per_head.size() == 2);
    CHECK(per_head[0](0, 1) == -0.0625);       // slope 2^-4
    CHECK(per_head[1](0, 1) == -0.00390625);   // slope 2^-8
    CHECK(per_head[0](0, 2) == -0.125);

    sched.mode = ScheduleMode::uniform;
    CHECK(register_scores_per_head(3, sched).size() == 1);
}

TEST_CASE("build_masks pairs the keep mask with the register scores") {
    RegisterSchedule sched = RegisterSchedule::with_sigma(1.0);
    MaskPair masks = build_masks(3, sched);
    CHECK(bits_equal(masks.keep, causal_ones(3)));
    CHECK(masks.registers(0, 2) == -2.0);
    CHECK(masks.registers(2, 0) == 0.0);
}
