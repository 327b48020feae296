#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "farsight/numerics.hpp"

using namespace farsight;

TEST_CASE("matrix basics: construction, indexing, identity") {
    Matrix m(2, 3, 0.5);
    CHECK(m.rows == 2);
    CHECK(m.cols == 3);
    CHECK(m(1, 2) == 0.5);
    m(0, 1) = -2.0;
    CHECK(m.row(0)[1] == -2.0);

    Matrix eye = Matrix::identity(3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(eye(i, j) == (i == j ? 1.0 : 0.0));

    CHECK(m.same_shape(Matrix(2, 3)));
    CHECK_FALSE(m.same_shape(Matrix(3, 2)));
}

TEST_CASE("bits_equal distinguishes signed zero, operator== does not") {
    Matrix a(1, 1), b(1, 1);
    a(0, 0) = 0.0;
    b(0, 0) = -0.0;
    CHECK(a == b);
    CHECK_FALSE(bits_equal(a, b));
    b(0, 0) = 0.0;
    CHECK(bits_equal(a, b));
}

TEST_CASE("max_abs_diff over matrices and spans") {
    Matrix a(2, 2, 1.0), b(2, 2, 1.0);
    b(1, 1) = 1.25;
    CHECK(max_abs_diff(a, b) == 0.25);
    CHECK_THROWS_AS(max_abs_diff(a, Matrix(1, 2)), Error);

    std::vector<double> x{1.0, 2.0}, y{1.0, 2.5};
    CHECK(max_abs_diff(std::span<const double>(x), std::span<const double>(y)) == 0.5);
}

TEST_CASE("dot and row_times_matrix against hand values") {
    std::vector<double> r{1.0, 2.0};
    Matrix m(2, 3);
    m(0, 0) = 1.0; m(0, 1) = 0.0; m(0, 2) = -1.0;
    m(1, 0) = 0.5; m(1, 1) = 2.0; m(1, 2) = 1.0;

    std::vector<double> out = row_times_matrix(r, m);
    CHECK(out[0] == 2.0);
    CHECK(out[1] == 4.0);
    CHECK(out[2] == 1.0);

    CHECK(dot(std::span<const double>(r), std::span<const double>(r)) == 5.0);
    CHECK_THROWS_AS(row_times_matrix(std::vector<double>{1.0}, m), Error);
}

TEST_CASE("matmul agrees with the identity and rejects bad shapes") {
    SeededRng rng(3);
    Matrix a = random_normal(4, 5, rng);
    CHECK(bits_equal(matmul(a, Matrix::identity(5)), a));
    CHECK(bits_equal(matmul(Matrix::identity(4), a), a));
    CHECK_THROWS_AS(matmul(a, Matrix(4, 2)), Error);
}

TEST_CASE("transpose round trip") {
    SeededRng rng(11);
    Matrix a = random_normal(3, 7, rng);
    Matrix t = transpose(a);
    CHECK(t.rows == 7);
    CHECK(t(4, 2) == a(2, 4));
    CHECK(bits_equal(transpose(t), a));
}

TEST_CASE("softmax_row reference values for scores [0, -0.8]") {
    // exp(-0.8) / (1 + exp(-0.8)) and its complement
    std::vector<double> p = softmax_row(std::vector<double>{0.0, -0.8});
    CHECK(std::abs(p[0] - 0.6899744811276125) < 1e-15);
    CHECK(std::abs(p[1] - 0.31002551887238755) < 1e-15);
    CHECK(std::abs(p[0] + p[1] - 1.0) < 1e-15);
}

TEST_CASE("softmax_row shift invariance") {
    // dyadic inputs plus a power-of-two shift: the max subtraction cancels
    // the shift without rounding, so the outputs are bit-identical
    std::vector<double> base{0.25, -1.5, 2.5, 0.0};
    std::vector<double> shifted{512.25, 510.5, 514.5, 512.0};
    std::vector<double> a = softmax_row(base);
    std::vector<double> b = softmax_row(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    // decimal shifts round each entry first, which costs at most an ulp or so
    std::vector<double> c = softmax_row(std::vector<double>{0.3, -1.2, 2.5, 0.0});
    std::vector<double> d = softmax_row(std::vector<double>{100.3, 98.8, 102.5, 100.0});
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(std::abs(c[i] - d[i]) < 1e-15);
}

TEST_CASE("softmax_row rejects empty and non-finite input") {
    CHECK_THROWS_AS(softmax_row(std::vector<double>{}), Error);
    try {
        softmax_row(std::vector<double>{});
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::dimension);
    }
    CHECK_THROWS_AS(softmax_row(std::vector<double>{1.0, std::nan("")}), Error);
    try {
        softmax_row(std::vector<double>{1.0, std::numeric_limits<double>::infinity()});
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::numeric);
    }
}

TEST_CASE("softmax_row handles extreme score gaps without overflow") {
    std::vector<double> p = softmax_row(std::vector<double>{1000.0, 0.0});
    CHECK(p[0] == 1.0);
    CHECK(p[1] == 0.0);
    double total = 0.0;
    for (double v : softmax_row(std::vector<double>{-1000.0, -1000.5, -999.0})) total += v;
    CHECK(std::abs(total - 1.0) < 1e-15);
}

TEST_CASE("seeded rng streams are reproducible and seed-sensitive") {
    SeededRng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        double x = a.normal();
        if (x != b.normal()) all_equal = false;
        if (x != c.normal()) any_diff = true;
    }
    CHECK(all_equal);
    CHECK(any_diff);

    SeededRng u(7);
    for (int i = 0; i < 1000; ++i) {
        double v = u.uniform01();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("random_normal shape, scale and determinism") {
    SeededRng a(5), b(5);
    Matrix m1 = random_normal(6, 4, a, 0.25);
    Matrix m2 = random_normal(6, 4, b, 0.25);
    CHECK(m1.rows == 6);
    CHECK(m1.cols == 4);
    CHECK(bits_equal(m1, m2));
}

TEST_CASE("finite differences recover the gradient of a quadratic") {
    // f(x) = sum x_i^2 has gradient 2x
    auto f = [](const std::vector<double>& x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
    };
    std::vector<double> x{0.5, -1.5, 2.0};
    std::vector<double> g = finite_difference_grad(f, x, 1e-6);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(g[i] - 2.0 * x[i]) < 1e-8);

    CHECK_THROWS_AS(finite_difference_grad(f, x, 0.0), Error);
    CHECK_THROWS_AS(finite_difference_grad(f, x, -1e-6), Error);
}
