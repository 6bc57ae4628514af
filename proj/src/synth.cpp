#include "xmd/synth.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "xmd/rng.hpp"

namespace xmd {

void Scenario::validate() const {
    if (num_classes < 2) {
        throw std::invalid_argument("scenario: need at least 2 classes");
    }
    if (class_proportions.size() != num_classes) {
        throw std::invalid_argument("scenario: expected " + std::to_string(num_classes) +
                                    " proportions, got " +
                                    std::to_string(class_proportions.size()));
    }
    StableSum sum;
    for (double p : class_proportions) {
        if (!(p > 0.0)) {
            throw std::invalid_argument("scenario: class proportions must be strictly positive");
        }
        sum.add(p);
    }
    if (std::abs(sum.value() - 1.0) > 1e-9) {
        throw std::invalid_argument("scenario: proportions sum to " +
                                    std::to_string(sum.value()) + ", expected 1");
    }
    if (feature_dim < num_classes || point_dim < num_classes) {
        throw std::invalid_argument(
            "scenario: feature_dim and point_dim must be >= num_classes so every class "
            "gets its own direction");
    }
    if (!(cluster_separation > 0.0) || !(within_class_spread > 0.0)) {
        throw std::invalid_argument("scenario: separation and spread must be positive");
    }
    if (superpixels_per_batch < 2) {
        throw std::invalid_argument("scenario: need at least 2 superpixels per batch");
    }
    if (points_per_superpixel_min < 1 || points_per_superpixel_min > points_per_superpixel_max) {
        throw std::invalid_argument("scenario: bad points-per-superpixel range");
    }
}

std::vector<double> nuscenes_like_proportions() {
    std::vector<double> p;
    p.reserve(16);
    p.push_back(0.2281);   // dominant flat surface
    p.push_back(0.2219);   // dominant vegetation-like mass
    // 54.7% over 11 classes, geometric ramp with ratio 2 (largest first).
    const double ramp_total = 0.547;
    double denom = 0.0;
    for (int i = 0; i < 11; ++i) denom += std::pow(2.0, i);
    for (int i = 10; i >= 0; --i) p.push_back(ramp_total * std::pow(2.0, i) / denom);
    p.push_back(0.0025);   // rare thin class (pedestrian-like)
    p.push_back(0.00025);  // two ultra-rare two-wheeler-like classes
    p.push_back(0.00025);
    return p;
}

Scenario nuscenes_like_scenario(std::size_t superpixels_per_batch, std::size_t feature_dim,
                                std::size_t point_dim, std::uint64_t seed) {
    Scenario s;
    s.class_proportions = nuscenes_like_proportions();
    s.num_classes = s.class_proportions.size();
    s.feature_dim = feature_dim;
    s.point_dim = point_dim;
    s.cluster_separation = 1.0;
    // Same-class cosine ~= sep^2 / (sep^2 + C * sigma^2); sigma = sep/(3 sqrt(C))
    // puts it near 0.9.
    s.within_class_spread =
        s.cluster_separation / (3.0 * std::sqrt(static_cast<double>(feature_dim)));
    s.superpixels_per_batch = superpixels_per_batch;
    s.seed = seed;
    s.validate();
    return s;
}

namespace {

/// Random rotation: Gaussian square matrix orthonormalized row by row
/// (modified Gram-Schmidt). Deterministic in the stream.
DenseMatrix random_rotation(std::size_t dim, Rng& rng) {
    DenseMatrix r(dim, dim);
    for (double& v : r.data()) v = rng.normal();
    for (std::size_t i = 0; i < dim; ++i) {
        auto ri = r.row(i);
        for (std::size_t prev = 0; prev < i; ++prev) {
            const auto rp = r.row(prev);
            double dot = 0.0;
            for (std::size_t c = 0; c < dim; ++c) dot += ri[c] * rp[c];
            for (std::size_t c = 0; c < dim; ++c) ri[c] -= dot * rp[c];
        }
        double sq = 0.0;
        for (double v : ri) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm < 1e-10) {
            throw std::runtime_error("random_rotation: degenerate draw; reseed the scenario");
        }
        for (std::size_t c = 0; c < dim; ++c) ri[c] /= norm;
    }
    return r;
}

/// Class means: separation * (rotation applied to coordinate axis c), i.e.
/// column c of the rotation matrix scaled by the separation.
DenseMatrix class_means(std::size_t num_classes, std::size_t dim, double separation, Rng& rng) {
    const DenseMatrix rot = random_rotation(dim, rng);
    DenseMatrix means(num_classes, dim);
    for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t d = 0; d < dim; ++d) means(c, d) = separation * rot(d, c);
    }
    return means;
}

std::size_t draw_class(const std::vector<double>& proportions, Rng& rng) {
    const double u = rng.uniform();
    double cum = 0.0;
    for (std::size_t c = 0; c < proportions.size(); ++c) {
        cum += proportions[c];
        if (u < cum) return c;
    }
    return proportions.size() - 1;  // absorb the rounding sliver at the top
}

}  // namespace

SyntheticBatch generate_batch(const Scenario& scenario, std::uint64_t batch_index) {
    scenario.validate();
    const std::size_t m = scenario.superpixels_per_batch;
    if (m < 2 * scenario.num_classes) {
        std::fprintf(stderr,
                     "warning: batch of %zu superpixels over %zu classes; expect missing "
                     "classes per batch\n",
                     m, scenario.num_classes);
    }

    // Geometry (the two rotations) depends on the scenario seed only, so every
    // batch of a scenario lives in the same world.
    Rng feat_rot = Rng::substream(scenario.seed, "feature-rotation");
    Rng point_rot = Rng::substream(scenario.seed, "point-rotation");
    const DenseMatrix feat_means =
        class_means(scenario.num_classes, scenario.feature_dim, scenario.cluster_separation,
                    feat_rot);
    const DenseMatrix point_means =
        class_means(scenario.num_classes, scenario.point_dim, scenario.cluster_separation,
                    point_rot);

    Rng labels_rng = Rng::substream(scenario.seed, "labels", batch_index);
    Rng sizes_rng = Rng::substream(scenario.seed, "group-sizes", batch_index);
    Rng feat_noise = Rng::substream(scenario.seed, "feature-noise", batch_index);
    Rng point_noise = Rng::substream(scenario.seed, "point-noise", batch_index);

    SyntheticBatch batch;
    batch.class_labels.resize(m);
    for (std::size_t g = 0; g < m; ++g) {
        batch.class_labels[g] = draw_class(scenario.class_proportions, labels_rng);
    }

    batch.superpixel_features = DenseMatrix(m, scenario.feature_dim);
    for (std::size_t g = 0; g < m; ++g) {
        const auto mean = feat_means.row(batch.class_labels[g]);
        auto row = batch.superpixel_features.row(g);
        for (std::size_t c = 0; c < scenario.feature_dim; ++c) {
            row[c] = mean[c] + scenario.within_class_spread * feat_noise.normal();
        }
    }

    const std::size_t span =
        scenario.points_per_superpixel_max - scenario.points_per_superpixel_min + 1;
    std::vector<std::size_t> group_sizes(m);
    std::size_t total_points = 0;
    for (std::size_t g = 0; g < m; ++g) {
        group_sizes[g] =
            scenario.points_per_superpixel_min + static_cast<std::size_t>(sizes_rng.uniform_index(span));
        total_points += group_sizes[g];
    }

    batch.point_features = DenseMatrix(total_points, scenario.point_dim);
    batch.pair_set.granularity = Granularity::superpixel;
    batch.pair_set.num_groups = m;
    batch.pair_set.point_groups.resize(m);
    batch.pair_set.pixel_groups.resize(m);
    std::size_t next_point = 0;
    for (std::size_t g = 0; g < m; ++g) {
        const auto mean = point_means.row(batch.class_labels[g]);
        auto& members = batch.pair_set.point_groups[g];
        members.reserve(group_sizes[g]);
        for (std::size_t p = 0; p < group_sizes[g]; ++p) {
            auto row = batch.point_features.row(next_point);
            for (std::size_t d = 0; d < scenario.point_dim; ++d) {
                row[d] = mean[d] + scenario.within_class_spread * point_noise.normal();
            }
            members.push_back(next_point++);
        }
        batch.pair_set.pixel_groups[g] = {g};
    }
    return batch;
}

double false_negative_rate(const SyntheticBatch& batch) {
    const std::size_t m = batch.class_labels.size();
    if (m < 2) return 0.0;
    std::size_t same = 0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (i != j && batch.class_labels[i] == batch.class_labels[j]) ++same;
        }
    }
    return static_cast<double>(same) / static_cast<double>(m * (m - 1));
}

SyntheticBatch to_point_granularity(const SyntheticBatch& batch, std::size_t pair_cap,
                                    std::uint64_t seed) {
    if (batch.pair_set.granularity != Granularity::superpixel) {
        throw std::invalid_argument("to_point_granularity: batch is already point-granular");
    }
    // Flatten (point, superpixel) memberships in group order.
    std::vector<std::pair<std::size_t, std::size_t>> flat;
    for (std::size_t g = 0; g < batch.pair_set.num_groups; ++g) {
        for (std::size_t p : batch.pair_set.point_groups[g]) flat.emplace_back(p, g);
    }
    if (flat.empty()) {
        throw std::runtime_error("to_point_granularity: batch has no point memberships");
    }
    std::vector<std::size_t> keep(flat.size());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    if (pair_cap > 0 && flat.size() > pair_cap) {
        Rng rng = Rng::substream(seed, "point-pairs");
        keep = sample_without_replacement(flat.size(), pair_cap, rng);
    }

    SyntheticBatch out;
    out.point_features = batch.point_features;  // groups index into the original rows
    out.superpixel_features = DenseMatrix(keep.size(), batch.superpixel_features.cols());
    out.class_labels.resize(keep.size());
    out.pair_set.granularity = Granularity::point;
    out.pair_set.num_groups = keep.size();
    out.pair_set.point_groups.resize(keep.size());
    out.pair_set.pixel_groups.resize(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
        const auto [point, group] = flat[keep[i]];
        const auto src = batch.superpixel_features.row(group);
        std::copy(src.begin(), src.end(), out.superpixel_features.row(i).begin());
        out.class_labels[i] = batch.class_labels[group];
        out.pair_set.point_groups[i] = {point};
        out.pair_set.pixel_groups[i] = {i};
    }
    return out;
}

}  // namespace xmd
