#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "xmd/matrix.hpp"

namespace xmd {

/// The four members of the contrastive loss family. All share one kernel:
///   slidr  - plain cross-modal InfoNCE over matched (point, pixel) groups
///   alpha  - similarity-weighted: negative logits scaled by (1 - alpha_ij)
///   knn    - hardest (most similar) negatives removed from the denominator
///   st     - knn plus class-agnostic per-anchor balance weights
enum class LossVariant { slidr, alpha, knn, st };

std::string_view variant_name(LossVariant v);
LossVariant variant_from_name(std::string_view name);

struct LossConfig {
    double temperature = 0.07;  // logit scale; must be positive
    double eps = 1e-12;         // row-norm threshold for the normalization rule
};

struct LossResult {
    double value = 0.0;
    DenseMatrix grad_q;  // d value / d q, chained through row normalization
    DenseMatrix grad_k;  // d value / d k, same chain
    DenseMatrix probs;   // per-anchor softmax over kept logits; masked entries exactly 0
};

/// InfoNCE with the diagonal as the positive:
///   L = -(1/M) sum_i log( exp(s_ii/t) / sum_{kept j} exp(z_ij) )
/// where s_ij = <normalized q_i, normalized k_j> and z is the (possibly
/// similarity-scaled) logit. Requires M >= 2 so every anchor has a negative.
LossResult loss_slidr(const DenseMatrix& q, const DenseMatrix& k, const LossConfig& cfg = {});

/// Similarity-weighted variant: off-diagonal logits become (1 - alpha_ij) * s_ij / t,
/// so semantically close negatives contribute with a flattened scale instead of
/// being fought head-on. alpha must be M x M with entries in [-1, 1].
LossResult loss_alpha(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& alpha,
                      const LossConfig& cfg = {});

/// KNN-masked variant: mask(i, j) == 0 removes negative j from anchor i's
/// denominator. Every row must keep at least one negative. The diagonal term
/// is always kept regardless of the mask.
LossResult loss_knn(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& mask,
                    const LossConfig& cfg = {});

/// Balanced variant: anchor i contributes with weight weights[i] / weight_sum
/// instead of 1/M, on top of the KNN mask.
LossResult loss_st(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& mask,
                   std::span<const double> weights, double weight_sum,
                   const LossConfig& cfg = {});

/// Variant-dispatching view used by the gradient checker and the CLI: alpha,
/// mask and weights may be null/empty when the variant does not consume them.
struct LossInputs {
    LossVariant variant = LossVariant::slidr;
    const DenseMatrix* alpha = nullptr;
    const DenseMatrix* mask = nullptr;
    std::span<const double> weights;
    double weight_sum = 0.0;
};

LossResult evaluate_loss(const DenseMatrix& q, const DenseMatrix& k, const LossInputs& inputs,
                         const LossConfig& cfg = {});

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_row = 0;
    std::size_t worst_col = 0;
    bool worst_on_q = true;  // whether the worst entry sits in grad_q or grad_k
};

/// Central-difference check of grad_q / grad_k against the analytic gradients,
/// entry by entry. Relative error uses max(1, |numeric|) as denominator.
GradCheckReport finite_difference_check(const DenseMatrix& q, const DenseMatrix& k,
                                        const LossInputs& inputs, const LossConfig& cfg,
                                        double epsilon);

}  // namespace xmd
