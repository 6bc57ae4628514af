#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace xmd {

/// Row-major dense matrix of doubles. The single carrier type for embeddings,
/// similarity matrices, masks and gradients throughout the library.
class DenseMatrix {
public:
    DenseMatrix() = default;

    /// Zero-initialized rows x cols matrix.
    DenseMatrix(std::size_t rows, std::size_t cols);

    /// Adopts `values` as the row-major payload; values.size() must equal rows*cols.
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    /// Brace construction for small literals: DenseMatrix{{1.0, 2.0}, {3.0, 4.0}}.
    /// All rows must have equal length.
    DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

    std::span<const double> row(std::size_t i) const;
    std::span<double> row(std::size_t i);

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool all_finite() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Entry-wise comparison with absolute tolerance; shapes must match exactly.
bool approx_equal(const DenseMatrix& a, const DenseMatrix& b, double tol);

/// Neumaier-compensated accumulator. Used wherever a sum feeds a reported loss
/// value or a gradient so results do not drift with summation order tweaks.
class StableSum {
public:
    void add(double v);
    double value() const { return sum_ + compensation_; }

private:
    double sum_ = 0.0;
    double compensation_ = 0.0;
};

/// Scales each row to unit Euclidean norm. Rows with norm < eps become all-zero
/// rows instead of dividing by a vanishing norm.
DenseMatrix l2_normalize_rows(const DenseMatrix& m, double eps = 1e-12);

/// Pairwise inner products: out(i, j) = <a.row(i), b.row(j)>.
/// Requires a.cols() == b.cols().
DenseMatrix gram(const DenseMatrix& a, const DenseMatrix& b);

/// Plain matrix product a (n x k) times b (k x m).
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

DenseMatrix transpose(const DenseMatrix& m);

/// Mean-pools rows of x by group label: out.row(g) = mean of x rows with
/// labels[i] == g. Labels must cover [0, num_groups) with no empty group.
DenseMatrix segment_mean_pool(const DenseMatrix& x,
                              std::span<const std::size_t> labels,
                              std::size_t num_groups);

/// log(sum_j exp(values[j])) with the usual max-shift so large logits do not
/// overflow. values must be non-empty.
double logsumexp_row(std::span<const double> values);

/// Solves spd * x = rhs for a symmetric positive-definite system via Cholesky.
/// Throws invalid_argument when the factorization hits a non-positive pivot.
DenseMatrix cholesky_solve(const DenseMatrix& spd, const DenseMatrix& rhs);

}  // namespace xmd
