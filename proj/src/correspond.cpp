#include "xmd/correspond.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "xmd/matrix_io.hpp"
#include "xmd/rng.hpp"

namespace xmd {

void CameraModel::validate() const {
    if (intrinsics.rows() != 3 || intrinsics.cols() != 3) {
        throw std::invalid_argument("camera: intrinsics must be 3x3");
    }
    if (extrinsics.rows() != 4 || extrinsics.cols() != 4) {
        throw std::invalid_argument("camera: extrinsics must be 4x4");
    }
    if (!intrinsics.all_finite() || !extrinsics.all_finite()) {
        throw std::invalid_argument("camera: non-finite entries");
    }
    if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0)) {
        throw std::invalid_argument("camera: focal lengths must be positive");
    }
    for (std::size_t j = 0; j < 4; ++j) {
        const double expected = (j == 3) ? 1.0 : 0.0;
        if (std::abs(extrinsics(3, j) - expected) > 1e-9) {
            throw std::invalid_argument("camera: extrinsics last row must be 0 0 0 1");
        }
    }
    // Rotation block must be orthonormal: R^T R = I.
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            double dot = 0.0;
            for (std::size_t r = 0; r < 3; ++r) dot += extrinsics(r, a) * extrinsics(r, b);
            if (std::abs(dot - (a == b ? 1.0 : 0.0)) > 1e-6) {
                throw std::invalid_argument("camera: extrinsic rotation is not orthonormal");
            }
        }
    }
    if (width == 0 || height == 0) {
        throw std::invalid_argument("camera: image size must be at least 1x1");
    }
}

std::size_t SegmentMap::num_segments() const {
    if (ids.empty()) return 0;
    return *std::max_element(ids.begin(), ids.end()) + 1;
}

void SegmentMap::validate() const {
    if (width == 0 || height == 0) {
        throw std::invalid_argument("segment map: size must be at least 1x1");
    }
    if (ids.size() != width * height) {
        throw std::invalid_argument("segment map: expected " + std::to_string(width * height) +
                                    " ids, got " + std::to_string(ids.size()));
    }
    const std::size_t n = num_segments();
    std::vector<char> seen(n, 0);
    for (std::size_t id : ids) seen[id] = 1;
    for (std::size_t s = 0; s < n; ++s) {
        if (!seen[s]) {
            throw std::invalid_argument("segment map: id " + std::to_string(s) +
                                        " missing; ids must be contiguous from 0");
        }
    }
}

std::vector<Projection> project_points(const DenseMatrix& points, const CameraModel& cam) {
    cam.validate();
    if (points.cols() != 3) {
        throw std::invalid_argument("project_points: points must be N x 3");
    }
    if (!points.all_finite()) {
        throw std::invalid_argument("project_points: non-finite point coordinates");
    }
    std::vector<Projection> out;
    out.reserve(points.rows());
    for (std::size_t i = 0; i < points.rows(); ++i) {
        const auto p = points.row(i);
        double cam_xyz[3];
        for (std::size_t r = 0; r < 3; ++r) {
            cam_xyz[r] = cam.extrinsics(r, 0) * p[0] + cam.extrinsics(r, 1) * p[1] +
                         cam.extrinsics(r, 2) * p[2] + cam.extrinsics(r, 3);
        }
        const double depth = cam_xyz[2];
        if (!(depth > 0.0)) continue;  // behind or exactly on the image plane
        double uvw[3];
        for (std::size_t r = 0; r < 3; ++r) {
            uvw[r] = cam.intrinsics(r, 0) * cam_xyz[0] + cam.intrinsics(r, 1) * cam_xyz[1] +
                     cam.intrinsics(r, 2) * cam_xyz[2];
        }
        const double col_f = std::floor(uvw[0] / uvw[2]);
        const double row_f = std::floor(uvw[1] / uvw[2]);
        if (col_f < 0.0 || col_f >= static_cast<double>(cam.width)) continue;
        if (row_f < 0.0 || row_f >= static_cast<double>(cam.height)) continue;
        out.push_back({i, static_cast<std::size_t>(row_f), static_cast<std::size_t>(col_f)});
    }
    return out;
}

PairSet build_pairs(const std::vector<Projection>& projections, const SegmentMap& segments,
                    Granularity granularity, std::size_t pair_cap, std::uint64_t seed) {
    segments.validate();
    if (projections.empty()) {
        throw std::runtime_error("build_pairs: empty batch (no visible correspondences)");
    }
    PairSet out;
    out.granularity = granularity;

    if (granularity == Granularity::point) {
        for (const auto& pr : projections) {
            if (pr.row >= segments.height || pr.col >= segments.width) {
                throw std::invalid_argument("build_pairs: projection outside the segment map");
            }
            out.point_groups.push_back({pr.point_index});
            out.pixel_groups.push_back({pr.row * segments.width + pr.col});
        }
        out.num_groups = out.point_groups.size();
        if (pair_cap > 0 && out.num_groups > pair_cap) {
            out = subsample_pairs(out, pair_cap, seed);
        }
        return out;
    }

    const std::size_t num_segments = segments.num_segments();
    std::vector<std::vector<std::size_t>> seg_points(num_segments);
    for (const auto& pr : projections) {
        if (pr.row >= segments.height || pr.col >= segments.width) {
            throw std::invalid_argument("build_pairs: projection outside the segment map");
        }
        seg_points[segments.ids[pr.row * segments.width + pr.col]].push_back(pr.point_index);
    }
    std::vector<std::vector<std::size_t>> seg_pixels(num_segments);
    for (std::size_t px = 0; px < segments.ids.size(); ++px) {
        seg_pixels[segments.ids[px]].push_back(px);
    }
    // Empty superpixels vanish; survivors are re-indexed densely in ascending
    // order of the original segment id.
    for (std::size_t s = 0; s < num_segments; ++s) {
        if (seg_points[s].empty()) continue;
        out.point_groups.push_back(std::move(seg_points[s]));
        out.pixel_groups.push_back(std::move(seg_pixels[s]));
    }
    out.num_groups = out.point_groups.size();
    return out;
}

PairSet subsample_pairs(const PairSet& pairs, std::size_t cap, std::uint64_t seed) {
    if (cap == 0) {
        throw std::invalid_argument("subsample_pairs: cap must be positive");
    }
    if (pairs.num_groups <= cap) return pairs;
    Rng rng = Rng::substream(seed, "pair-subsample");
    const std::vector<std::size_t> keep = sample_without_replacement(pairs.num_groups, cap, rng);
    PairSet out;
    out.granularity = pairs.granularity;
    out.num_groups = keep.size();
    out.point_groups.reserve(keep.size());
    out.pixel_groups.reserve(keep.size());
    for (std::size_t g : keep) {
        out.point_groups.push_back(pairs.point_groups[g]);
        out.pixel_groups.push_back(pairs.pixel_groups[g]);
    }
    return out;
}

namespace {

DenseMatrix pool_side(const DenseMatrix& emb, const std::vector<std::vector<std::size_t>>& groups,
                      const char* side) {
    std::size_t total = 0;
    for (const auto& g : groups) {
        if (g.empty()) {
            throw std::invalid_argument(std::string("pool_pair_embeddings: empty ") + side +
                                        " group");
        }
        total += g.size();
    }
    DenseMatrix gathered(total, emb.cols());
    std::vector<std::size_t> labels(total);
    std::size_t r = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::size_t idx : groups[g]) {
            if (idx >= emb.rows()) {
                throw std::invalid_argument(std::string("pool_pair_embeddings: ") + side +
                                            " index " + std::to_string(idx) + " out of range");
            }
            std::copy(emb.row(idx).begin(), emb.row(idx).end(), gathered.row(r).begin());
            labels[r] = g;
            ++r;
        }
    }
    return segment_mean_pool(gathered, labels, groups.size());
}

}  // namespace

std::pair<DenseMatrix, DenseMatrix> pool_pair_embeddings(const DenseMatrix& point_emb,
                                                         const DenseMatrix& pixel_emb,
                                                         const PairSet& pairs) {
    if (pairs.num_groups == 0) {
        throw std::invalid_argument("pool_pair_embeddings: empty pair set");
    }
    return {pool_side(point_emb, pairs.point_groups, "point"),
            pool_side(pixel_emb, pairs.pixel_groups, "pixel")};
}

CameraModel read_camera_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    // Token-based: 9 intrinsic values, 16 extrinsic values (row-major), then
    // width and height. Line breaks are irrelevant.
    CameraModel cam;
    cam.intrinsics = DenseMatrix(3, 3);
    cam.extrinsics = DenseMatrix(4, 4);
    for (double& v : cam.intrinsics.data()) {
        if (!(in >> v)) throw std::runtime_error("camera file " + path + ": truncated intrinsics");
    }
    for (double& v : cam.extrinsics.data()) {
        if (!(in >> v)) throw std::runtime_error("camera file " + path + ": truncated extrinsics");
    }
    if (!(in >> cam.width >> cam.height)) {
        throw std::runtime_error("camera file " + path + ": missing image size");
    }
    cam.validate();
    return cam;
}

void write_camera_model(const std::string& path, const CameraModel& cam) {
    cam.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) out << (j ? " " : "") << format_double(cam.intrinsics(i, j));
        out << '\n';
    }
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) out << (j ? " " : "") << format_double(cam.extrinsics(i, j));
        out << '\n';
    }
    out << cam.width << ' ' << cam.height << '\n';
    if (!out) throw std::runtime_error("write failed for " + path);
}

SegmentMap read_segment_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    SegmentMap seg;
    std::size_t declared_segments = 0;
    if (!(in >> seg.height >> seg.width >> declared_segments)) {
        throw std::runtime_error("segment map " + path + ": missing 'height width num_segments'");
    }
    seg.ids.resize(seg.height * seg.width);
    for (std::size_t& id : seg.ids) {
        if (!(in >> id)) throw std::runtime_error("segment map " + path + ": truncated grid");
    }
    seg.validate();
    if (seg.num_segments() != declared_segments) {
        throw std::runtime_error("segment map " + path + ": header declares " +
                                 std::to_string(declared_segments) + " segments, grid has " +
                                 std::to_string(seg.num_segments()));
    }
    return seg;
}

void write_segment_map(const std::string& path, const SegmentMap& segments) {
    segments.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << segments.height << ' ' << segments.width << ' ' << segments.num_segments() << '\n';
    for (std::size_t r = 0; r < segments.height; ++r) {
        for (std::size_t c = 0; c < segments.width; ++c) {
            out << (c ? " " : "") << segments.ids[r * segments.width + c];
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace xmd
