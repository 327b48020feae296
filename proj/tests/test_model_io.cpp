#include <doctest.h>

#include <cstdio>
#include <string>

#include "farsight/decoder.hpp"
#include "farsight/model_io.hpp"

using namespace farsight;

namespace {

// small model with distinctive dimensions, handy for string surgery below
ModelWeights tiny_model() {
    return generate_synthetic_model(ModelConfig{8, 4, 2, 1, 3});
}

Error capture(const std::string& bytes) {
    try {
        deserialize_model(bytes);
    } catch (const Error& e) {
        return e;
    }
    FAIL("expected deserialize_model to throw");
    return Error(ErrorKind::format, "unreachable");
}

}  // namespace

TEST_CASE("model serialisation round trips bit for bit") {
    ModelWeights model = generate_synthetic_model(ModelConfig{});
    std::string bytes = serialize_model(model);
    ModelWeights loaded = deserialize_model(bytes);

    CHECK(loaded.vocab_size == model.vocab_size);
    CHECK(loaded.seed == model.seed);
    CHECK(bits_equal(loaded.embedding, model.embedding));
    CHECK(bits_equal(loaded.output_head, model.output_head));
    REQUIRE(loaded.layers.size() == model.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        CHECK(bits_equal(loaded.layers[l].attn.wq, model.layers[l].attn.wq));
        CHECK(bits_equal(loaded.layers[l].mlp_w2, model.layers[l].mlp_w2));
        CHECK(loaded.layers[l].attn_norm == model.layers[l].attn_norm);
    }
    CHECK(serialize_model(loaded) == bytes);
}

TEST_CASE("a model without a recorded seed stays seedless") {
    ModelWeights model = tiny_model();
    model.seed.reset();
    std::string bytes = serialize_model(model);
    CHECK(bytes.find("seed") == std::string::npos);
    CHECK_FALSE(deserialize_model(bytes).seed.has_value());
}

TEST_CASE("same seed, same bytes; different seed, different bytes") {
    std::string a = serialize_model(generate_synthetic_model(ModelConfig{8, 4, 2, 1, 3}));
    std::string b = serialize_model(generate_synthetic_model(ModelConfig{8, 4, 2, 1, 3}));
    std::string c = serialize_model(generate_synthetic_model(ModelConfig{8, 4, 2, 1, 4}));
    CHECK(a == b);
    CHECK(a != c);
    CHECK(fnv1a64(a) == fnv1a64(b));
    CHECK(fnv1a64(a) != fnv1a64(c));
}

TEST_CASE("deserialise rejects corrupted files with byte offsets") {
    std::string good = serialize_model(tiny_model());

    SUBCASE("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        Error e = capture(bad);
        CHECK(e.kind() == ErrorKind::format);
        CHECK(e.byte_offset() == 0);
    }
    SUBCASE("unparseable header") {
        std::string bad = good;
        std::size_t brace = bad.find('{');
        bad[brace] = '?';
        Error e = capture(bad);
        CHECK(e.kind() == ErrorKind::format);
        CHECK(e.byte_offset() == 10);  // header starts right after "FSMODEL 1\n"
    }
    SUBCASE("invalid header dimensions") {
        std::string bad = good;
        std::size_t at = bad.find("\"vocab_size\":8");
        REQUIRE(at != std::string::npos);
        bad.replace(at, 14, "\"vocab_size\":0");
        CHECK(capture(bad).kind() == ErrorKind::format);
    }
    SUBCASE("truncated payload") {
        std::string bad = good.substr(0, good.size() - 40);
        CHECK(capture(bad).kind() == ErrorKind::format);
    }
    SUBCASE("trailing bytes after end") {
        CHECK(capture(good + "junk").kind() == ErrorKind::format);
    }
    SUBCASE("shape disagrees with payload length") {
        std::string bad = good;
        std::size_t at = bad.find("tensor embedding 2 8 4 256");
        REQUIRE(at != std::string::npos);
        bad.replace(at, 26, "tensor embedding 2 8 4 128");
        CHECK(capture(bad).kind() == ErrorKind::format);
    }
    SUBCASE("transposed dimensions are caught at assembly") {
        std::string bad = good;
        std::size_t at = bad.find("tensor embedding 2 8 4 256");
        REQUIRE(at != std::string::npos);
        bad.replace(at, 26, "tensor embedding 2 4 8 256");
        CHECK(capture(bad).kind() == ErrorKind::format);
    }
    SUBCASE("duplicate and unexpected tensors") {
        // copy the final_norm record (header line, payload, newline)
        std::size_t from = good.find("tensor final_norm");
        std::size_t to = good.find("tensor output_head");
        REQUIRE(from != std::string::npos);
        REQUIRE(to != std::string::npos);
        std::string record = good.substr(from, to - from);
        std::size_t end_at = good.rfind("end\n");

        std::string dup = good;
        dup.insert(end_at, record);
        CHECK(capture(dup).kind() == ErrorKind::format);

        std::string extra = good;
        std::string renamed = record;
        renamed.replace(0, 17, "tensor spare_norm");
        extra.insert(end_at, renamed);
        CHECK(capture(extra).kind() == ErrorKind::format);
    }
    SUBCASE("missing terminator") {
        std::string bad = good.substr(0, good.rfind("end\n"));
        CHECK(capture(bad).kind() == ErrorKind::format);
    }
}

TEST_CASE("save and load work through files, with io errors for bad paths") {
    ModelWeights model = tiny_model();
    const char* path = "test_model_io_tmp.fsm";
    save_model(model, path);
    ModelWeights loaded = load_model(path);
    CHECK(serialize_model(loaded) == serialize_model(model));
    std::remove(path);

    try {
        load_model("/nonexistent/dir/m.fsm");
        FAIL("expected an io error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::io);
    }
    try {
        save_model(model, "/nonexistent/dir/m.fsm");
        FAIL("expected an io error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::io);
    }
}

TEST_CASE("fnv1a64 matches the reference test vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}
