#pragma once

#include <cstddef>
#include <vector>

#include "xmd/matrix.hpp"

namespace xmd {

/// How the per-anchor vote totals are squashed into [0, 1] before weights are
/// formed. Both modes first shift votes by their minimum; `paper` then divides
/// by the maximum of the shifted votes (the normalization spelled out alongside
/// the balanced loss), `conventional` divides by (max - min) of the raw votes.
/// The two are numerically identical; the switch exists so the distinction
/// stays visible and testable.
enum class BalanceNormalization { paper, conventional };

/// Everything the loss variants need that derives from the frozen 2D features:
/// the semantic similarity matrix, the KNN exclusion mask and the class-agnostic
/// balance weights.
struct SimilarityBundle {
    DenseMatrix alpha;      // M x M cosine similarities (optionally rescaled to [0,1])
    DenseMatrix mask;       // M x M keep-mask for negatives; diagonal stored as 0
    std::vector<double> votes;    // v_i = sum_j alpha_ij (raw, including the diagonal)
    std::vector<double> weights;  // w_i, pre-normalization
    double weight_sum = 0.0;      // w = sum_i w_i
};

struct BundleOptions {
    double k_percent = 1.0;     // share of anchors excluded as too-similar negatives
    double alpha_min = 0.0;     // kept here for config plumbing; applied at loss time
    bool rescale = true;        // map cosines from [-1,1] to [0,1] first
    BalanceNormalization balance_mode = BalanceNormalization::paper;
};

/// Pairwise cosine similarity of the (frozen) superpixel features.
/// Degenerate all-zero rows produce zero similarity against everything,
/// including themselves.
DenseMatrix superpixel_similarity(const DenseMatrix& features);

/// Affine map [-1, 1] -> [0, 1]: keeps "opposite" pairs from contributing
/// negative votes or flipping the sign of the similarity-weighted logit scale.
DenseMatrix rescale_unit_interval(const DenseMatrix& alpha);

/// Number of excluded nearest neighbours for a row length m at the given
/// percentage: floor(percent * m / 100), clamped to [0, m-2] so at least one
/// negative always survives. percent must lie in [0, 100], m must be >= 2.
std::size_t percent_to_k(double percent, std::size_t m);

/// Keep-mask for negatives: per row, the k off-diagonal entries with the
/// highest alpha (ties broken towards the smaller column index) are set to 0,
/// everything else off-diagonal to 1. The diagonal is stored as 0 but the loss
/// always keeps the positive term regardless of the mask.
DenseMatrix knn_mask(const DenseMatrix& alpha, std::size_t k);

/// Zeroes entries strictly below alpha_min; used by the similarity-weighted
/// loss to ignore weak semantic matches.
DenseMatrix threshold_alpha(const DenseMatrix& alpha, double alpha_min);

struct BalanceResult {
    std::vector<double> votes;    // raw per-anchor vote totals
    std::vector<double> weights;  // w_i = 1 - normalized vote
    double weight_sum = 0.0;
};

/// Class-agnostic balance weights: anchors that collect many similarity votes
/// (over-represented content) are down-weighted. Equal votes across the batch
/// fall back to uniform w_i = 1/M with weight_sum 1.
BalanceResult balance_weights(const DenseMatrix& alpha,
                              BalanceNormalization mode = BalanceNormalization::paper);

/// One-stop construction used by the trainer and CLI.
SimilarityBundle build_bundle(const DenseMatrix& features, const BundleOptions& opts);

}  // namespace xmd
