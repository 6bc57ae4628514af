#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "xmd/matrix.hpp"
#include "xmd/matrix_io.hpp"
#include "xmd/rng.hpp"

using namespace xmd;

namespace {

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    DenseMatrix m(rows, cols);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

}  // namespace

TEST_CASE("brace construction rejects ragged rows") {
    CHECK_THROWS_AS((DenseMatrix{{1.0, 2.0}, {3.0}}), std::invalid_argument);
    const DenseMatrix m{{1.0, 2.0}, {3.0, 4.0}};
    CHECK(m.rows() == 2);
    CHECK(m(1, 0) == 3.0);
}

TEST_CASE("l2_normalize_rows zeroes degenerate rows instead of dividing by ~0") {
    DenseMatrix m{{3.0, 4.0}, {0.0, 0.0}, {1e-200, 0.0}};
    const DenseMatrix n = l2_normalize_rows(m);
    CHECK(n(0, 0) == doctest::Approx(0.6));
    CHECK(n(0, 1) == doctest::Approx(0.8));
    // exact zeros, not NaN
    CHECK(n(1, 0) == 0.0);
    CHECK(n(1, 1) == 0.0);
    CHECK(n(2, 0) == 0.0);
}

TEST_CASE("gram matches the explicit double loop") {
    Rng rng(7);
    const DenseMatrix a = random_matrix(5, 3, rng);
    const DenseMatrix b = random_matrix(4, 3, rng);
    const DenseMatrix g = gram(a, b);
    REQUIRE(g.rows() == 5);
    REQUIRE(g.cols() == 4);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < 3; ++c) dot += a(i, c) * b(j, c);
            CHECK(g(i, j) == doctest::Approx(dot).epsilon(1e-14));
        }
    }
    CHECK_THROWS_AS(gram(a, random_matrix(4, 2, rng)), std::invalid_argument);
}

TEST_CASE("matmul agrees with gram-of-transpose") {
    Rng rng(11);
    const DenseMatrix a = random_matrix(6, 4, rng);
    const DenseMatrix b = random_matrix(4, 5, rng);
    const DenseMatrix prod = matmul(a, b);
    const DenseMatrix ref = gram(a, transpose(b));
    REQUIRE(prod.rows() == ref.rows());
    REQUIRE(prod.cols() == ref.cols());
    CHECK(approx_equal(prod, ref, 1e-12));
}

TEST_CASE("segment_mean_pool averages by group and rejects empty groups") {
    const DenseMatrix x{{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}};
    const std::vector<std::size_t> labels{1, 0, 1};
    const DenseMatrix pooled = segment_mean_pool(x, labels, 2);
    CHECK(pooled(0, 0) == 3.0);
    CHECK(pooled(0, 1) == 4.0);
    CHECK(pooled(1, 0) == 3.0);  // mean of rows 0 and 2
    CHECK(pooled(1, 1) == 4.0);

    const std::vector<std::size_t> gap{0, 0, 2};  // group 1 never appears
    CHECK_THROWS_AS(segment_mean_pool(x, gap, 3), std::invalid_argument);
}

TEST_CASE("logsumexp_row survives large logits and collapses on all -inf") {
    const std::vector<double> large{1000.0, 1000.0};
    CHECK(logsumexp_row(large) == doctest::Approx(1000.0 + std::log(2.0)));
    const std::vector<double> empty_like{-INFINITY, -INFINITY};
    CHECK(logsumexp_row(empty_like) == -INFINITY);
    CHECK_THROWS_AS(logsumexp_row(std::span<const double>{}), std::invalid_argument);
}

TEST_CASE("StableSum recovers mass that naive summation loses") {
    StableSum s;
    s.add(1.0);
    s.add(1e100);
    s.add(1.0);
    s.add(-1e100);
    CHECK(s.value() == 2.0);  // naive left-to-right gives 0
}

TEST_CASE("cholesky_solve inverts an SPD system and rejects indefinite input") {
    Rng rng(3);
    const DenseMatrix b = random_matrix(4, 4, rng);
    // b^T b + I is SPD by construction
    DenseMatrix spd = matmul(transpose(b), b);
    for (std::size_t i = 0; i < 4; ++i) spd(i, i) += 1.0;
    const DenseMatrix x_true = random_matrix(4, 2, rng);
    const DenseMatrix rhs = matmul(spd, x_true);
    const DenseMatrix x = cholesky_solve(spd, rhs);
    CHECK(approx_equal(x, x_true, 1e-9));

    DenseMatrix indefinite{{1.0, 2.0}, {2.0, 1.0}};  // eigenvalues 3, -1
    CHECK_THROWS_AS(cholesky_solve(indefinite, DenseMatrix(2, 1)), std::invalid_argument);
}

TEST_CASE("matrix text round-trip preserves every bit") {
    Rng rng(19);
    DenseMatrix m = random_matrix(7, 3, rng, 1e8);
    m(0, 0) = 0.1;  // not exactly representable; stresses shortest-form output
    m(1, 1) = -0.0;
    m(2, 2) = 1e-300;
    std::stringstream buf;
    write_matrix_text(buf, m);
    const DenseMatrix back = read_matrix_text(buf);
    REQUIRE(back.rows() == m.rows());
    REQUIRE(back.cols() == m.cols());
    for (std::size_t i = 0; i < m.data().size(); ++i) {
        CHECK(back.data()[i] == m.data()[i]);
    }
}

TEST_CASE("matrix binary round-trip preserves every bit") {
    namespace fs = std::filesystem;
    Rng rng(23);
    const DenseMatrix m = random_matrix(5, 4, rng, 1e-4);
    const std::string path = (fs::temp_directory_path() / "xmd_matrix_bin_test.xmd").string();
    write_matrix_binary(path, m);
    const DenseMatrix back = read_matrix_binary(path);
    fs::remove(path);
    REQUIRE(back.rows() == 5);
    REQUIRE(back.cols() == 4);
    for (std::size_t i = 0; i < m.data().size(); ++i) {
        CHECK(back.data()[i] == m.data()[i]);
    }
}

TEST_CASE("format_double emits the shortest exact decimal form") {
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(1.0) == "1");
    CHECK(format_double(-0.0) == "-0");
    // property: strtod(format_double(v)) == v for awkward values
    Rng rng(31);
    for (int i = 0; i < 200; ++i) {
        const double v = std::ldexp(rng.uniform(-1.0, 1.0), static_cast<int>(rng.uniform_index(600)) - 300);
        const std::string s = format_double(v);
        CHECK(std::stod(s) == v);
    }
}
