#pragma once

// Attention traces: per (layer, head, step) probability matrices captured
// during forward passes, plus CSV serialisation. The CSV stores only the
// on-or-below-diagonal entries, one per line, with 9 significant digits.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "farsight/numerics.hpp"

namespace farsight {

enum class Modality { vision, text };

struct TraceEntry {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t step = 0;
    Matrix probs;              // seq_len x seq_len at this step, zeros above diagonal
    std::vector<double> beta;  // row sums of probs
};

struct AttentionTrace {
    std::size_t layer_count = 0;
    std::size_t head_count = 0;
    std::vector<std::size_t> step_lengths;  // sequence length at each decode step
    std::vector<Modality> modality;         // tags of the final sequence
    std::vector<TraceEntry> entries;

    std::size_t steps() const { return step_lengths.size(); }

    const TraceEntry* find(std::size_t layer, std::size_t head, std::size_t step) const {
        for (const TraceEntry& e : entries)
            if (e.layer == layer && e.head == head && e.step == step) return &e;
        return nullptr;
    }
};

inline std::string format_sig9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline void write_trace_csv(const AttentionTrace& trace, std::ostream& out) {
    out << "layer,head,step,query_pos,key_pos,prob\n";
    for (const TraceEntry& e : trace.entries)
        for (std::size_t i = 0; i < e.probs.rows; ++i)
            for (std::size_t j = 0; j <= i; ++j)
                out << e.layer << ',' << e.head << ',' << e.step << ',' << i << ',' << j
                    << ',' << format_sig9(e.probs(i, j)) << '\n';
}

inline void write_trace_csv(const AttentionTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorKind::io, "write_trace_csv: cannot open " + path);
    write_trace_csv(trace, out);
    if (!out.good())
        throw Error(ErrorKind::io, "write_trace_csv: write failed for " + path);
}

namespace detail {

[[noreturn]] inline void trace_fail(std::size_t line, const std::string& what) {
    throw Error(ErrorKind::format,
                "trace csv line " + std::to_string(line) + ": " + what, std::nullopt, line);
}

inline std::size_t parse_index(const std::string& field, std::size_t line) {
    if (field.empty()) trace_fail(line, "empty index field");
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(field, &pos);
    } catch (const std::exception&) {
        trace_fail(line, "bad index '" + field + "'");
    }
    if (pos != field.size()) trace_fail(line, "bad index '" + field + "'");
    return static_cast<std::size_t>(v);
}

}  // namespace detail

// Rebuilds a trace from its CSV form. Every (layer, head, step) group must
// contain a full lower triangle; anything else is a format error naming the
// offending line.
inline AttentionTrace read_trace_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || line != "layer,head,step,query_pos,key_pos,prob")
        detail::trace_fail(1, "missing or wrong header");

    struct Cell { std::size_t i, j; double p; };
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::vector<Cell>> groups;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() != 6) detail::trace_fail(line_no, "expected 6 fields");
        std::size_t layer = detail::parse_index(fields[0], line_no);
        std::size_t head = detail::parse_index(fields[1], line_no);
        std::size_t step = detail::parse_index(fields[2], line_no);
        std::size_t qp = detail::parse_index(fields[3], line_no);
        std::size_t kp = detail::parse_index(fields[4], line_no);
        char* end = nullptr;
        double p = std::strtod(fields[5].c_str(), &end);
        if (end != fields[5].c_str() + fields[5].size() || fields[5].empty())
            detail::trace_fail(line_no, "bad probability '" + fields[5] + "'");
        if (kp > qp) detail::trace_fail(line_no, "key_pos above the diagonal");
        groups[{step, layer, head}].push_back(Cell{qp, kp, p});
    }
    if (groups.empty()) detail::trace_fail(line_no, "no data rows");

    AttentionTrace trace;
    std::map<std::size_t, std::size_t> length_by_step;
    for (auto& [key, cells] : groups) {
        auto [step, layer, head] = key;
        std::size_t len = 0;
        for (const Cell& c : cells) len = std::max(len, c.i + 1);
        if (cells.size() != len * (len + 1) / 2)
            detail::trace_fail(line_no, "incomplete lower triangle for step " +
                                            std::to_string(step));
        TraceEntry e{layer, head, step, Matrix(len, len), std::vector<double>(len, 0.0)};
        for (const Cell& c : cells) e.probs(c.i, c.j) = c.p;
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j <= i; ++j) e.beta[i] += e.probs(i, j);
        auto [it, inserted] = length_by_step.try_emplace(step, len);
        if (!inserted && it->second != len)
            detail::trace_fail(line_no, "inconsistent lengths within step " +
                                            std::to_string(step));
        trace.layer_count = std::max(trace.layer_count, layer + 1);
        trace.head_count = std::max(trace.head_count, head + 1);
        trace.entries.push_back(std::move(e));
    }
    std::size_t expected_step = 0;
    for (auto& [step, len] : length_by_step) {
        if (step != expected_step++)
            detail::trace_fail(line_no, "steps are not contiguous from 0");
        trace.step_lengths.push_back(len);
    }
    for (std::size_t s = 0; s < trace.steps(); ++s)
        for (std::size_t l = 0; l < trace.layer_count; ++l)
            for (std::size_t h = 0; h < trace.head_count; ++h)
                if (!trace.find(l, h, s))
                    detail::trace_fail(line_no, "missing layer/head group in step " +
                                                    std::to_string(s));
    return trace;
}

inline AttentionTrace read_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorKind::io, "read_trace_csv: cannot open " + path);
    return read_trace_csv(in);
}

}  // namespace farsight
