#include "xmd/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace xmd {

DenseMatrix superpixel_similarity(const DenseMatrix& features) {
    if (features.rows() == 0 || features.cols() == 0) {
        throw std::invalid_argument("superpixel_similarity: empty feature matrix");
    }
    if (!features.all_finite()) {
        throw std::invalid_argument("superpixel_similarity: non-finite feature entries");
    }
    const DenseMatrix unit = l2_normalize_rows(features);
    return gram(unit, unit);
}

DenseMatrix rescale_unit_interval(const DenseMatrix& alpha) {
    DenseMatrix out(alpha.rows(), alpha.cols());
    for (std::size_t i = 0; i < alpha.data().size(); ++i) {
        out.data()[i] = std::clamp((alpha.data()[i] + 1.0) * 0.5, 0.0, 1.0);
    }
    return out;
}

std::size_t percent_to_k(double percent, std::size_t m) {
    if (!(percent >= 0.0 && percent <= 100.0)) {
        throw std::invalid_argument("percent_to_k: percent must lie in [0, 100], got " +
                                    std::to_string(percent));
    }
    if (m < 2) {
        throw std::invalid_argument("percent_to_k: need at least 2 anchors");
    }
    // percent * m first: dividing percent by 100 up front under-floors exact
    // inputs (30% of 10 would come out as floor(2.999...) = 2).
    auto k = static_cast<std::size_t>(std::floor(percent * static_cast<double>(m) / 100.0));
    return std::min(k, m - 2);
}

DenseMatrix knn_mask(const DenseMatrix& alpha, std::size_t k) {
    const std::size_t m = alpha.rows();
    if (alpha.cols() != m) {
        throw std::invalid_argument("knn_mask: alpha must be square");
    }
    if (m < 2) {
        throw std::invalid_argument("knn_mask: need at least 2 anchors");
    }
    if (k > m - 2) {
        throw std::invalid_argument("knn_mask: k = " + std::to_string(k) +
                                    " leaves no negatives for m = " + std::to_string(m));
    }
    DenseMatrix mask(m, m);
    std::vector<std::pair<double, std::size_t>> order(m - 1);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t n = 0;
        for (std::size_t j = 0; j < m; ++j) {
            if (j != i) order[n++] = {alpha(i, j), j};
        }
        // Highest alpha first, ties resolved towards the smaller column index
        // so the excluded set is unambiguous.
        const auto more_similar = [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        };
        if (k > 0 && k < order.size()) {
            std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), more_similar);
        }
        for (std::size_t r = 0; r < order.size(); ++r) {
            mask(i, order[r].second) = (r < k) ? 0.0 : 1.0;
        }
    }
    return mask;
}

DenseMatrix threshold_alpha(const DenseMatrix& alpha, double alpha_min) {
    DenseMatrix out(alpha.rows(), alpha.cols());
    for (std::size_t i = 0; i < alpha.data().size(); ++i) {
        const double v = alpha.data()[i];
        out.data()[i] = (v < alpha_min) ? 0.0 : v;
    }
    return out;
}

BalanceResult balance_weights(const DenseMatrix& alpha, BalanceNormalization mode) {
    const std::size_t m = alpha.rows();
    if (alpha.cols() != m || m == 0) {
        throw std::invalid_argument("balance_weights: alpha must be square and non-empty");
    }
    BalanceResult res;
    res.votes.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        StableSum s;
        for (std::size_t j = 0; j < m; ++j) s.add(alpha(i, j));
        res.votes[i] = s.value();
    }
    const auto [lo_it, hi_it] = std::minmax_element(res.votes.begin(), res.votes.end());
    const double v_min = *lo_it, v_max = *hi_it;

    res.weights.resize(m);
    if (v_max == v_min) {
        // Every anchor is equally represented; nothing to balance.
        std::fill(res.weights.begin(), res.weights.end(), 1.0 / static_cast<double>(m));
        res.weight_sum = 1.0;
        return res;
    }
    double normalized;
    StableSum wsum;
    for (std::size_t i = 0; i < m; ++i) {
        if (mode == BalanceNormalization::paper) {
            // Shift by the minimum, then divide by the max of the shifted votes.
            const double shifted_max = v_max - v_min;
            if (shifted_max < 0.0) {
                throw std::runtime_error("balance_weights: negative vote range; rescale alpha");
            }
            normalized = (res.votes[i] - v_min) / shifted_max;
        } else {
            normalized = (res.votes[i] - v_min) / (v_max - v_min);
        }
        res.weights[i] = 1.0 - normalized;
        wsum.add(res.weights[i]);
    }
    res.weight_sum = wsum.value();
    return res;
}

SimilarityBundle build_bundle(const DenseMatrix& features, const BundleOptions& opts) {
    SimilarityBundle bundle;
    DenseMatrix alpha = superpixel_similarity(features);
    bundle.alpha = opts.rescale ? rescale_unit_interval(alpha) : std::move(alpha);
    bundle.mask = knn_mask(bundle.alpha, percent_to_k(opts.k_percent, bundle.alpha.rows()));
    BalanceResult bal = balance_weights(bundle.alpha, opts.balance_mode);
    bundle.votes = std::move(bal.votes);
    bundle.weights = std::move(bal.weights);
    bundle.weight_sum = bal.weight_sum;
    return bundle;
}

}  // namespace xmd
