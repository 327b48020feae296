#pragma once

// Dense double-precision primitives shared by the rest of the library:
// row-major matrices, numerically stable softmax, seeded randomness and
// central finite differences. Everything above this header builds on it.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace farsight {

enum class ErrorKind {
    dimension,  // shape mismatch or empty operand
    domain,     // parameter outside its documented range
    numeric,    // non-finite value where a finite one is required
    index,      // out-of-range row / column / lookup key
    format,     // malformed file content
    input,      // well-formed file or argument with invalid payload
    io,         // unreadable or unwritable path
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message,
          std::optional<std::size_t> byte_offset = std::nullopt,
          std::optional<std::size_t> line = std::nullopt)
        : std::runtime_error(std::move(message)),
          kind_(kind),
          byte_offset_(byte_offset),
          line_(line) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::optional<std::size_t> byte_offset() const noexcept { return byte_offset_; }
    std::optional<std::size_t> line() const noexcept { return line_; }

private:
    ErrorKind kind_;
    std::optional<std::size_t> byte_offset_;
    std::optional<std::size_t> line_;
};

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, rows*cols entries

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool operator==(const Matrix& o) const = default;
};

// Exact bit-pattern equality; distinguishes -0.0 from +0.0 and never
// compares NaN as unequal to itself the way operator== would.
inline bool bits_equal(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) return false;
    return a.data.empty() ||
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw Error(ErrorKind::dimension, "max_abs_diff: shape mismatch");
    double dev = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        dev = std::max(dev, std::abs(a.data[i] - b.data[i]));
    return dev;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw Error(ErrorKind::dimension, "max_abs_diff: length mismatch");
    double dev = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        dev = std::max(dev, std::abs(a[i] - b[i]));
    return dev;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) acc += a[c] * b[c];
    return acc;
}

// out[j] = sum_k row[k] * m(k, j). Kept as the single accumulation order for
// every matrix product in the library so that row-at-a-time evaluation (the
// KV-cached decode path) reproduces full products bit for bit.
inline std::vector<double> row_times_matrix(std::span<const double> r, const Matrix& m) {
    if (r.size() != m.rows)
        throw Error(ErrorKind::dimension, "row_times_matrix: inner dimension mismatch");
    std::vector<double> out(m.cols, 0.0);
    for (std::size_t j = 0; j < m.cols; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < m.rows; ++k) acc += r[k] * m(k, j);
        out[j] = acc;
    }
    return out;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw Error(ErrorKind::dimension, "matmul: inner dimension mismatch");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        std::vector<double> r = row_times_matrix(a.row(i), b);
        std::copy(r.begin(), r.end(), out.data.begin() + i * out.cols);
    }
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
    return out;
}

// Stable softmax: subtracts the row maximum before exponentiating, so adding
// one constant to every score leaves the result unchanged to the last bit.
inline std::vector<double> softmax_row(std::span<const double> scores) {
    if (scores.empty())
        throw Error(ErrorKind::dimension, "softmax_row: empty input");
    double mx = scores[0];
    for (double s : scores) {
        if (!std::isfinite(s))
            throw Error(ErrorKind::numeric, "softmax_row: non-finite score");
        mx = std::max(mx, s);
    }
    std::vector<double> out(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - mx);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

inline std::vector<double> softmax_row(const std::vector<double>& scores) {
    return softmax_row(std::span<const double>(scores));
}

// Deterministic source of randomness. mt19937_64 output is pinned by the
// standard, and the uniform / normal transforms below avoid the
// implementation-defined std::*_distribution adapters, so a seed identifies
// one byte-exact stream on every platform.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform on [0, 1) with 53 random mantissa bits
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline Matrix random_normal(std::size_t rows, std::size_t cols, SeededRng& rng,
                            double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = scale * rng.normal();
    return m;
}

// Central differences: grad_i ~= (f(x + h e_i) - f(x - h e_i)) / (2h).
template <typename F>
std::vector<double> finite_difference_grad(F&& f, std::vector<double> x, double h) {
    if (!(h > 0.0))
        throw Error(ErrorKind::domain, "finite_difference_grad: step must be positive");
    std::vector<double> grad(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        double saved = x[i];
        x[i] = saved + h;
        double up = f(x);
        x[i] = saved - h;
        double down = f(x);
        x[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw Error(ErrorKind::numeric, "finite_difference_grad: non-finite evaluation");
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

}  // namespace farsight
