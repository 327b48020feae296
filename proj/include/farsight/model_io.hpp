#pragma once

// Model container: a short text header followed by named tensors whose
// payloads are raw little-endian IEEE-754 doubles. Layout:
//
//   FSMODEL 1\n
//   {json header}\n
//   tensor <name> <ndim> <dims...> <nbytes>\n
//   <nbytes of payload>\n          (repeated per tensor)
//   end\n
//
// Round-trips are bit-exact. Loads either succeed completely or throw a
// format error carrying the byte offset of the problem; no partial models.

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "farsight/decoder.hpp"
#include "farsight/numerics.hpp"

namespace farsight {

namespace detail {

inline void append_f64_le(std::string& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

inline double read_f64_le(const std::string& bytes, std::size_t at) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b)
        bits = (bits << 8) | static_cast<std::uint8_t>(bytes[at + static_cast<std::size_t>(b)]);
    return std::bit_cast<double>(bits);
}

inline void append_tensor(std::string& out, const std::string& name,
                          const std::vector<std::size_t>& dims,
                          const std::vector<double>& data) {
    out += "tensor " + name + ' ' + std::to_string(dims.size());
    std::size_t count = 1;
    for (std::size_t d : dims) {
        out += ' ' + std::to_string(d);
        count *= d;
    }
    out += ' ' + std::to_string(count * 8) + '\n';
    for (double v : data) append_f64_le(out, v);
    out += '\n';
}

struct RawTensor {
    std::vector<std::size_t> dims;
    std::vector<double> data;
};

[[noreturn]] inline void model_fail(std::size_t offset, const std::string& what) {
    throw Error(ErrorKind::format,
                "model file, byte " + std::to_string(offset) + ": " + what, offset);
}

inline std::string take_line(const std::string& bytes, std::size_t& pos) {
    std::size_t start = pos;
    while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    if (pos >= bytes.size()) model_fail(start, "unterminated line");
    return bytes.substr(start, pos++ - start);
}

}  // namespace detail

inline std::string serialize_model(const ModelWeights& model) {
    model.validate();
    std::string out = "FSMODEL 1\n";
    nlohmann::json header;
    header["vocab_size"] = model.vocab_size;
    header["d_model"] = model.d_model;
    header["head_count"] = model.head_count;
    header["layer_count"] = model.layer_count;
    if (model.seed) header["seed"] = *model.seed;
    out += header.dump() + '\n';

    detail::append_tensor(out, "embedding", {model.vocab_size, model.d_model},
                          model.embedding.data);
    for (std::size_t l = 0; l < model.layer_count; ++l) {
        const LayerWeights& lw = model.layers[l];
        std::string p = "layers." + std::to_string(l) + '.';
        detail::append_tensor(out, p + "attn_norm", {model.d_model}, lw.attn_norm);
        detail::append_tensor(out, p + "attn.wq", {model.d_model, model.d_model}, lw.attn.wq.data);
        detail::append_tensor(out, p + "attn.wk", {model.d_model, model.d_model}, lw.attn.wk.data);
        detail::append_tensor(out, p + "attn.wv", {model.d_model, model.d_model}, lw.attn.wv.data);
        detail::append_tensor(out, p + "attn.wo", {model.d_model, model.d_model}, lw.attn.wo.data);
        detail::append_tensor(out, p + "mlp_norm", {model.d_model}, lw.mlp_norm);
        detail::append_tensor(out, p + "mlp.w1", {model.d_model, 4 * model.d_model},
                              lw.mlp_w1.data);
        detail::append_tensor(out, p + "mlp.w2", {4 * model.d_model, model.d_model},
                              lw.mlp_w2.data);
    }
    detail::append_tensor(out, "final_norm", {model.d_model}, model.final_norm);
    detail::append_tensor(out, "output_head", {model.d_model, model.vocab_size},
                          model.output_head.data);
    out += "end\n";
    return out;
}

inline ModelWeights deserialize_model(const std::string& bytes) {
    std::size_t pos = 0;
    if (detail::take_line(bytes, pos) != "FSMODEL 1")
        detail::model_fail(0, "bad magic, expected 'FSMODEL 1'");

    std::size_t header_at = pos;
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(detail::take_line(bytes, pos));
    } catch (const nlohmann::json::exception& e) {
        detail::model_fail(header_at, std::string("unparseable header: ") + e.what());
    }
    ModelWeights model;
    try {
        model.vocab_size = header.at("vocab_size").get<std::size_t>();
        model.d_model = header.at("d_model").get<std::size_t>();
        model.head_count = header.at("head_count").get<std::size_t>();
        model.layer_count = header.at("layer_count").get<std::size_t>();
        if (header.contains("seed")) model.seed = header["seed"].get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        detail::model_fail(header_at, std::string("bad header field: ") + e.what());
    }
    if (model.vocab_size == 0 || model.d_model == 0 || model.head_count == 0 ||
        model.layer_count == 0 || model.d_model % model.head_count != 0)
        detail::model_fail(header_at, "header dimensions are not a valid model shape");

    std::map<std::string, detail::RawTensor> tensors;
    while (true) {
        std::size_t line_at = pos;
        std::string line = detail::take_line(bytes, pos);
        if (line == "end") break;
        std::istringstream ss(line);
        std::string tag, name;
        std::size_t ndim = 0;
        if (!(ss >> tag >> name >> ndim) || tag != "tensor")
            detail::model_fail(line_at, "expected a tensor record or 'end'");
        if (ndim == 0 || ndim > 2) detail::model_fail(line_at, "unsupported tensor rank");
        detail::RawTensor t;
        std::size_t count = 1;
        for (std::size_t i = 0; i < ndim; ++i) {
            std::size_t d = 0;
            if (!(ss >> d) || d == 0) detail::model_fail(line_at, "bad tensor dimension");
            t.dims.push_back(d);
            count *= d;
        }
        std::size_t nbytes = 0;
        std::string rest;
        if (!(ss >> nbytes) || (ss >> rest))
            detail::model_fail(line_at, "malformed tensor record");
        if (nbytes != count * 8)
            detail::model_fail(line_at, "declared shape disagrees with payload length");
        if (pos + nbytes + 1 > bytes.size())
            detail::model_fail(pos, "tensor payload is truncated");
        t.data.resize(count);
        for (std::size_t i = 0; i < count; ++i)
            t.data[i] = detail::read_f64_le(bytes, pos + i * 8);
        pos += nbytes;
        if (bytes[pos] != '\n') detail::model_fail(pos, "missing newline after payload");
        ++pos;
        if (!tensors.emplace(name, std::move(t)).second)
            detail::model_fail(line_at, "duplicate tensor '" + name + "'");
    }
    if (pos != bytes.size()) detail::model_fail(pos, "trailing bytes after 'end'");

    std::size_t consumed = 0;
    auto take = [&](const std::string& name, std::vector<std::size_t> dims) {
        auto it = tensors.find(name);
        if (it == tensors.end())
            detail::model_fail(bytes.size(), "missing tensor '" + name + "'");
        if (it->second.dims != dims)
            detail::model_fail(bytes.size(), "tensor '" + name + "' has the wrong shape");
        ++consumed;
        return std::move(it->second.data);
    };
    auto take_matrix = [&](const std::string& name, std::size_t r, std::size_t c) {
        Matrix m(r, c);
        m.data = take(name, {r, c});
        return m;
    };

    std::size_t d = model.d_model;
    model.embedding = take_matrix("embedding", model.vocab_size, d);
    model.layers.resize(model.layer_count);
    for (std::size_t l = 0; l < model.layer_count; ++l) {
        LayerWeights& lw = model.layers[l];
        std::string p = "layers." + std::to_string(l) + '.';
        lw.attn_norm = take(p + "attn_norm", {d});
        lw.attn.wq = take_matrix(p + "attn.wq", d, d);
        lw.attn.wk = take_matrix(p + "attn.wk", d, d);
        lw.attn.wv = take_matrix(p + "attn.wv", d, d);
        lw.attn.wo = take_matrix(p + "attn.wo", d, d);
        lw.mlp_norm = take(p + "mlp_norm", {d});
        lw.mlp_w1 = take_matrix(p + "mlp.w1", d, 4 * d);
        lw.mlp_w2 = take_matrix(p + "mlp.w2", 4 * d, d);
    }
    model.final_norm = take("final_norm", {d});
    model.output_head = take_matrix("output_head", d, model.vocab_size);
    if (consumed != tensors.size())
        detail::model_fail(bytes.size(), "file contains unexpected extra tensors");
    model.validate();
    return model;
}

inline void save_model(const ModelWeights& model, const std::string& path) {
    std::string bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(ErrorKind::io, "save_model: cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.good())
        throw Error(ErrorKind::io, "save_model: write failed for " + path);
}

inline ModelWeights load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::io, "load_model: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_model(buf.str());
}

// FNV-1a over the serialised bytes; stable fingerprint for generated files.
inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace farsight
