#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "xmd/matrix.hpp"

namespace xmd {

/// Pinhole camera: 3x3 intrinsics, 4x4 lidar-to-camera extrinsics (row-major,
/// last row 0 0 0 1) and the image size in pixels.
struct CameraModel {
    DenseMatrix intrinsics;  // 3x3
    DenseMatrix extrinsics;  // 4x4
    std::size_t width = 0;
    std::size_t height = 0;

    /// Throws invalid_argument on wrong shapes, non-orthonormal rotation,
    /// non-positive focal lengths or a degenerate image size.
    void validate() const;
};

/// Per-pixel superpixel ids, row-major. Ids must form a contiguous range
/// starting at 0 (every id below the maximum appears somewhere).
struct SegmentMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::size_t> ids;

    std::size_t num_segments() const;
    void validate() const;
};

struct Projection {
    std::size_t point_index = 0;
    std::size_t row = 0;
    std::size_t col = 0;
};

enum class Granularity { superpixel, point };

/// Matched (point side, pixel side) index groups. At superpixel granularity a
/// group is one superpixel: every visible point that landed in it plus the
/// superpixel's full pixel footprint. At point granularity a group is a single
/// (point, pixel) pair.
struct PairSet {
    Granularity granularity = Granularity::superpixel;
    std::size_t num_groups = 0;
    std::vector<std::vector<std::size_t>> point_groups;
    std::vector<std::vector<std::size_t>> pixel_groups;
};

/// Projects N x 3 lidar points through the camera. A point survives when its
/// camera-frame depth is strictly positive and its pixel (floor of the
/// continuous image coordinates) lies inside the image.
std::vector<Projection> project_points(const DenseMatrix& points, const CameraModel& cam);

/// Groups projections into a PairSet. Superpixels that caught no point are
/// dropped and the remaining groups re-indexed densely in ascending order of
/// the original segment id. At point granularity, pair_cap > 0 bounds the
/// number of pairs via seeded uniform subsampling. Throws runtime_error when
/// nothing is visible.
PairSet build_pairs(const std::vector<Projection>& projections, const SegmentMap& segments,
                    Granularity granularity, std::size_t pair_cap = 0, std::uint64_t seed = 0);

/// Uniform without-replacement subsample of whole groups (identity when the
/// set already fits the cap). Deterministic in the seed.
PairSet subsample_pairs(const PairSet& pairs, std::size_t cap, std::uint64_t seed);

/// Mean-pools raw embeddings over each group: q_raw from the point rows,
/// k_raw from the pixel rows. Result rows align with pair-set group order.
std::pair<DenseMatrix, DenseMatrix> pool_pair_embeddings(const DenseMatrix& point_emb,
                                                         const DenseMatrix& pixel_emb,
                                                         const PairSet& pairs);

CameraModel read_camera_model(const std::string& path);
void write_camera_model(const std::string& path, const CameraModel& cam);
SegmentMap read_segment_map(const std::string& path);
void write_segment_map(const std::string& path, const SegmentMap& segments);

}  // namespace xmd
