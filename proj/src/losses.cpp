#include "xmd/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace xmd {

std::string_view variant_name(LossVariant v) {
    switch (v) {
        case LossVariant::slidr: return "slidr";
        case LossVariant::alpha: return "alpha";
        case LossVariant::knn: return "knn";
        case LossVariant::st: return "st";
    }
    throw std::logic_error("variant_name: unknown variant");
}

LossVariant variant_from_name(std::string_view name) {
    if (name == "slidr") return LossVariant::slidr;
    if (name == "alpha") return LossVariant::alpha;
    if (name == "knn") return LossVariant::knn;
    if (name == "st") return LossVariant::st;
    throw std::invalid_argument("unknown loss variant '" + std::string(name) +
                                "' (expected slidr|alpha|knn|st)");
}

namespace {

void validate_inputs(const DenseMatrix& q, const DenseMatrix& k, const LossInputs& in,
                     const LossConfig& cfg) {
    const std::size_t m = q.rows();
    if (k.rows() != m || k.cols() != q.cols()) {
        throw std::invalid_argument("loss: q is " + std::to_string(m) + "x" +
                                    std::to_string(q.cols()) + " but k is " +
                                    std::to_string(k.rows()) + "x" + std::to_string(k.cols()));
    }
    if (m < 2) {
        throw std::invalid_argument("loss: need at least 2 anchors so every row has a negative");
    }
    if (q.cols() == 0) {
        throw std::invalid_argument("loss: embeddings must have at least one dimension");
    }
    if (!(cfg.temperature > 0.0)) {
        throw std::invalid_argument("loss: temperature must be positive");
    }
    if (!q.all_finite() || !k.all_finite()) {
        throw std::invalid_argument("loss: non-finite embedding entries");
    }
    if (in.alpha) {
        if (in.alpha->rows() != m || in.alpha->cols() != m) {
            throw std::invalid_argument("loss: alpha must be " + std::to_string(m) + "x" +
                                        std::to_string(m));
        }
        for (double v : in.alpha->data()) {
            if (!(v >= -1.0 - 1e-9 && v <= 1.0 + 1e-9)) {
                throw std::invalid_argument("loss: alpha entries must lie in [-1, 1]");
            }
        }
    }
    if (in.mask) {
        if (in.mask->rows() != m || in.mask->cols() != m) {
            throw std::invalid_argument("loss: mask must be " + std::to_string(m) + "x" +
                                        std::to_string(m));
        }
        for (double v : in.mask->data()) {
            if (v != 0.0 && v != 1.0) {
                throw std::invalid_argument("loss: mask entries must be exactly 0 or 1");
            }
        }
    }
    if (!in.weights.empty()) {
        if (in.weights.size() != m) {
            throw std::invalid_argument("loss: need one balance weight per anchor");
        }
        StableSum s;
        for (double w : in.weights) {
            if (!(w >= 0.0)) {
                throw std::invalid_argument("loss: balance weights must be non-negative");
            }
            s.add(w);
        }
        if (!(in.weight_sum > 0.0)) {
            throw std::invalid_argument("loss: weight_sum must be positive");
        }
        if (std::abs(s.value() - in.weight_sum) > 1e-9 * std::max(1.0, in.weight_sum)) {
            throw std::invalid_argument("loss: weight_sum does not match the weights");
        }
    }
}

/// Shared kernel. All four variants differ only in (a) the per-entry logit
/// scale c_ij, (b) which negatives survive, and (c) the per-anchor weight:
///
///   z_ij   = c_ij * s_ij / t            c_ij = 1 - alpha_ij off-diagonal (alpha
///                                       variant), 1 otherwise
///   L      = sum_i w_i * (logsumexp_j z_ij - z_ii)   over kept j
///   dL/ds_ij = w_i * c_ij * (P_ij - [i==j]) / t      P = row softmax of kept z
///
/// dL/ds then chains onto the unit-sphere embeddings (grad_qh = dS * Kh,
/// grad_kh = dS^T * Qh) and finally through the row normalization
/// (I - qh qh^T)/|q| per row. Rows the normalization zeroed out (norm < eps)
/// receive zero gradient.
LossResult kernel(const DenseMatrix& q, const DenseMatrix& k, const LossInputs& in,
                  const LossConfig& cfg) {
    validate_inputs(q, k, in, cfg);
    const std::size_t m = q.rows();
    const std::size_t e = q.cols();
    const double t = cfg.temperature;

    const DenseMatrix qh = l2_normalize_rows(q, cfg.eps);
    const DenseMatrix kh = l2_normalize_rows(k, cfg.eps);

    LossResult res;
    res.probs = DenseMatrix(m, m);
    DenseMatrix gqh(m, e);  // gradient wrt the normalized rows
    DenseMatrix gkh(m, e);

    std::vector<double> z(m);
    std::vector<double> scale(m);
    std::vector<char> kept(m);
    StableSum total;

    for (std::size_t i = 0; i < m; ++i) {
        const auto qi = qh.row(i);
        double zmax = -std::numeric_limits<double>::infinity();
        std::size_t negatives = 0;
        for (std::size_t j = 0; j < m; ++j) {
            kept[j] = (j == i) || !in.mask || (*in.mask)(i, j) != 0.0;
            if (!kept[j]) continue;
            if (j != i) ++negatives;
            const auto kj = kh.row(j);
            double s = 0.0;
            for (std::size_t c = 0; c < e; ++c) s += qi[c] * kj[c];
            scale[j] = (in.alpha && j != i) ? (1.0 - (*in.alpha)(i, j)) : 1.0;
            z[j] = scale[j] * s / t;
            zmax = std::max(zmax, z[j]);
        }
        if (negatives == 0) {
            throw std::runtime_error("loss: anchor " + std::to_string(i) +
                                     " has no surviving negatives");
        }
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (kept[j]) acc += std::exp(z[j] - zmax);
        }
        const double lse = zmax + std::log(acc);
        const double omega = in.weights.empty() ? 1.0 / static_cast<double>(m)
                                                : in.weights[i] / in.weight_sum;
        total.add(omega * (lse - z[i]));

        auto gi = gqh.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            if (!kept[j]) continue;  // probs stays exactly 0.0
            const double p = std::exp(z[j] - lse);
            res.probs(i, j) = p;
            const double ds = omega * scale[j] * (p - (j == i ? 1.0 : 0.0)) / t;
            const auto kj = kh.row(j);
            auto gj = gkh.row(j);
            for (std::size_t c = 0; c < e; ++c) {
                gi[c] += ds * kj[c];
                gj[c] += ds * qi[c];
            }
        }
    }
    res.value = total.value();

    // Chain through the row normalization: for y = x/|x|,
    // dL/dx = (g - (g . y) y) / |x|, and exactly zero on degenerate rows.
    const auto chain = [&](const DenseMatrix& raw, const DenseMatrix& unit,
                           const DenseMatrix& gunit) {
        DenseMatrix out(m, e);
        for (std::size_t i = 0; i < m; ++i) {
            double sq = 0.0;
            for (double v : raw.row(i)) sq += v * v;
            const double norm = std::sqrt(sq);
            if (norm < cfg.eps) continue;
            const auto y = unit.row(i);
            const auto g = gunit.row(i);
            double proj = 0.0;
            for (std::size_t c = 0; c < e; ++c) proj += g[c] * y[c];
            auto o = out.row(i);
            for (std::size_t c = 0; c < e; ++c) o[c] = (g[c] - proj * y[c]) / norm;
        }
        return out;
    };
    res.grad_q = chain(q, qh, gqh);
    res.grad_k = chain(k, kh, gkh);
    return res;
}

}  // namespace

LossResult loss_slidr(const DenseMatrix& q, const DenseMatrix& k, const LossConfig& cfg) {
    return kernel(q, k, LossInputs{LossVariant::slidr, nullptr, nullptr, {}, 0.0}, cfg);
}

LossResult loss_alpha(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& alpha,
                      const LossConfig& cfg) {
    return kernel(q, k, LossInputs{LossVariant::alpha, &alpha, nullptr, {}, 0.0}, cfg);
}

LossResult loss_knn(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& mask,
                    const LossConfig& cfg) {
    return kernel(q, k, LossInputs{LossVariant::knn, nullptr, &mask, {}, 0.0}, cfg);
}

LossResult loss_st(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& mask,
                   std::span<const double> weights, double weight_sum, const LossConfig& cfg) {
    if (weights.empty()) {
        throw std::invalid_argument("loss_st: weights must be provided");
    }
    return kernel(q, k, LossInputs{LossVariant::st, nullptr, &mask, weights, weight_sum}, cfg);
}

LossResult evaluate_loss(const DenseMatrix& q, const DenseMatrix& k, const LossInputs& inputs,
                         const LossConfig& cfg) {
    switch (inputs.variant) {
        case LossVariant::slidr:
            return loss_slidr(q, k, cfg);
        case LossVariant::alpha:
            if (!inputs.alpha) throw std::invalid_argument("evaluate_loss: alpha variant needs alpha");
            return loss_alpha(q, k, *inputs.alpha, cfg);
        case LossVariant::knn:
            if (!inputs.mask) throw std::invalid_argument("evaluate_loss: knn variant needs a mask");
            return loss_knn(q, k, *inputs.mask, cfg);
        case LossVariant::st:
            if (!inputs.mask) throw std::invalid_argument("evaluate_loss: st variant needs a mask");
            return loss_st(q, k, *inputs.mask, inputs.weights, inputs.weight_sum, cfg);
    }
    throw std::logic_error("evaluate_loss: unknown variant");
}

GradCheckReport finite_difference_check(const DenseMatrix& q, const DenseMatrix& k,
                                        const LossInputs& inputs, const LossConfig& cfg,
                                        double epsilon) {
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("finite_difference_check: epsilon must be positive");
    }
    const LossResult base = evaluate_loss(q, k, inputs, cfg);

    GradCheckReport report;
    const auto probe = [&](const DenseMatrix& which, bool on_q) {
        DenseMatrix perturbed = which;
        for (std::size_t i = 0; i < which.rows(); ++i) {
            for (std::size_t j = 0; j < which.cols(); ++j) {
                const double saved = perturbed(i, j);
                perturbed(i, j) = saved + epsilon;
                const double up = on_q ? evaluate_loss(perturbed, k, inputs, cfg).value
                                       : evaluate_loss(q, perturbed, inputs, cfg).value;
                perturbed(i, j) = saved - epsilon;
                const double down = on_q ? evaluate_loss(perturbed, k, inputs, cfg).value
                                         : evaluate_loss(q, perturbed, inputs, cfg).value;
                perturbed(i, j) = saved;
                const double numeric = (up - down) / (2.0 * epsilon);
                const double analytic = on_q ? base.grad_q(i, j) : base.grad_k(i, j);
                const double rel =
                    std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
                if (rel > report.max_rel_error) {
                    report.max_rel_error = rel;
                    report.worst_row = i;
                    report.worst_col = j;
                    report.worst_on_q = on_q;
                }
            }
        }
    };
    probe(q, true);
    probe(k, false);
    return report;
}

}  // namespace xmd
