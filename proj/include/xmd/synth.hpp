#pragma once

#include <cstdint>
#include <vector>

#include "xmd/correspond.hpp"
#include "xmd/matrix.hpp"

namespace xmd {

/// Desk-scale synthetic world. Each class owns one direction in feature space
/// and a different one in point space (two independent random rotations of the
/// coordinate axes), so 2D appearance and 3D geometry are correlated through
/// the class but not identical. Samples are the class mean plus isotropic
/// Gaussian noise, which makes same-class items highly similar to each other
/// (the self-similarity pathology) while class proportions control imbalance.
struct Scenario {
    std::size_t num_classes = 4;
    std::vector<double> class_proportions;   // strictly positive, sums to 1
    std::size_t feature_dim = 16;            // 2D feature channels (C)
    std::size_t point_dim = 8;               // raw point attribute channels
    double cluster_separation = 1.0;         // class mean norm
    double within_class_spread = 0.1;        // isotropic noise sigma, both spaces
    std::size_t superpixels_per_batch = 64;  // M
    std::size_t points_per_superpixel_min = 2;
    std::size_t points_per_superpixel_max = 6;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticBatch {
    DenseMatrix superpixel_features;        // M x C, the frozen 2D side
    DenseMatrix point_features;             // N x point_dim, raw encoder input
    PairSet pair_set;                       // group g pools its points; pixel side is {g}
    std::vector<std::size_t> class_labels;  // per group (hidden from the losses)
};

/// 16-class proportion preset shaped like a real outdoor lidar benchmark: two
/// named heavy classes at 22.81% and 22.19% (45% jointly), a rare class at
/// 0.25%, two at 0.025% (0.05% jointly), and the remaining 54.7% spread over
/// 11 classes as a geometric ramp with ratio 2. Exactly 5 classes sit above
/// a 5% share, leaving 11 minority classes.
std::vector<double> nuscenes_like_proportions();

/// Scenario preset on those proportions with the noise scale chosen so that
/// same-class cosine similarity lands near 0.9 (spread = separation / (3 sqrt(C))).
Scenario nuscenes_like_scenario(std::size_t superpixels_per_batch, std::size_t feature_dim,
                                std::size_t point_dim, std::uint64_t seed);

/// Deterministic batch draw. The class arrangement (the two rotations) depends
/// only on scenario.seed; labels, group sizes and noise also fold in
/// batch_index, so different batches of one scenario share geometry but not
/// samples. Warns on stderr when M < 2 * num_classes.
SyntheticBatch generate_batch(const Scenario& scenario, std::uint64_t batch_index = 0);

/// Share of ordered off-diagonal group pairs with equal class labels — the
/// rate at which vanilla InfoNCE would fight a semantically-matching negative.
double false_negative_rate(const SyntheticBatch& batch);

/// Re-expresses a superpixel-granularity batch as individual (point, pixel)
/// pairs: every pooled point becomes its own group carrying its superpixel's
/// feature row and label. pair_cap > 0 bounds the pair count by seeded uniform
/// subsampling before the expansion is materialized.
SyntheticBatch to_point_granularity(const SyntheticBatch& batch, std::size_t pair_cap,
                                    std::uint64_t seed);

}  // namespace xmd
