#include "xmd/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace xmd {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_) {
        throw std::invalid_argument("DenseMatrix: payload size " + std::to_string(data_.size()) +
                                    " does not match " + std::to_string(rows_) + "x" +
                                    std::to_string(cols_));
    }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw std::invalid_argument("DenseMatrix: ragged initializer rows");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

std::span<const double> DenseMatrix::row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
}

std::span<double> DenseMatrix::row(std::size_t i) {
    return {data_.data() + i * cols_, cols_};
}

bool DenseMatrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool approx_equal(const DenseMatrix& a, const DenseMatrix& b, double tol) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        if (std::abs(a.data()[i] - b.data()[i]) > tol) return false;
    }
    return true;
}

void StableSum::add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
        compensation_ += (sum_ - t) + v;
    } else {
        compensation_ += (v - t) + sum_;
    }
    sum_ = t;
}

DenseMatrix l2_normalize_rows(const DenseMatrix& m, double eps) {
    if (m.cols() == 0) {
        throw std::invalid_argument("l2_normalize_rows: matrix has no columns");
    }
    DenseMatrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double sq = 0.0;
        for (double v : m.row(i)) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm < eps) continue;  // degenerate row stays all-zero
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j) / norm;
    }
    return out;
}

DenseMatrix gram(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("gram: column counts differ (" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.cols()) + ")");
    }
    DenseMatrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const auto bj = b.row(j);
            double dot = 0.0;
            for (std::size_t c = 0; c < a.cols(); ++c) dot += ai[c] * bj[c];
            out(i, j) = dot;
        }
    }
    return out;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ (" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                    ")");
    }
    DenseMatrix out(a.rows(), b.cols());
    // ikj order keeps the inner loop contiguous in both b and out.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const auto bk = b.row(k);
            auto oi = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) oi[j] += aik * bk[j];
        }
    }
    return out;
}

DenseMatrix transpose(const DenseMatrix& m) {
    DenseMatrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    }
    return out;
}

DenseMatrix segment_mean_pool(const DenseMatrix& x,
                              std::span<const std::size_t> labels,
                              std::size_t num_groups) {
    if (labels.size() != x.rows()) {
        throw std::invalid_argument("segment_mean_pool: need one label per row");
    }
    DenseMatrix out(num_groups, x.cols());
    std::vector<std::size_t> counts(num_groups, 0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const std::size_t g = labels[i];
        if (g >= num_groups) {
            throw std::invalid_argument("segment_mean_pool: label " + std::to_string(g) +
                                        " out of range for " + std::to_string(num_groups) +
                                        " groups");
        }
        ++counts[g];
        auto og = out.row(g);
        const auto xi = x.row(i);
        for (std::size_t c = 0; c < x.cols(); ++c) og[c] += xi[c];
    }
    for (std::size_t g = 0; g < num_groups; ++g) {
        if (counts[g] == 0) {
            throw std::invalid_argument("segment_mean_pool: group " + std::to_string(g) +
                                        " is empty");
        }
        auto og = out.row(g);
        for (std::size_t c = 0; c < x.cols(); ++c) og[c] /= static_cast<double>(counts[g]);
    }
    return out;
}

DenseMatrix cholesky_solve(const DenseMatrix& spd, const DenseMatrix& rhs) {
    const std::size_t n = spd.rows();
    if (spd.cols() != n) {
        throw std::invalid_argument("cholesky_solve: matrix must be square");
    }
    if (rhs.rows() != n) {
        throw std::invalid_argument("cholesky_solve: rhs has " + std::to_string(rhs.rows()) +
                                    " rows, expected " + std::to_string(n));
    }
    // Lower-triangular factor, spd = L L^T.
    DenseMatrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = spd(i, j);
            for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
            if (i == j) {
                if (!(acc > 0.0)) {
                    throw std::invalid_argument(
                        "cholesky_solve: matrix is not positive definite (pivot " +
                        std::to_string(acc) + " at " + std::to_string(i) + ")");
                }
                l(i, i) = std::sqrt(acc);
            } else {
                l(i, j) = acc / l(j, j);
            }
        }
    }
    // Forward then back substitution, one rhs column at a time.
    DenseMatrix x(n, rhs.cols());
    std::vector<double> y(n);
    for (std::size_t c = 0; c < rhs.cols(); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = rhs(i, c);
            for (std::size_t k = 0; k < i; ++k) acc -= l(i, k) * y[k];
            y[i] = acc / l(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double acc = y[ii];
            for (std::size_t k = ii + 1; k < n; ++k) acc -= l(k, ii) * x(k, c);
            x(ii, c) = acc / l(ii, ii);
        }
    }
    return x;
}

double logsumexp_row(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("logsumexp_row: empty input");
    }
    const double mx = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(mx)) {
        // All -inf (fully masked) collapses to -inf; a NaN or +inf propagates.
        return mx;
    }
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - mx);
    return mx + std::log(acc);
}

}  // namespace xmd
