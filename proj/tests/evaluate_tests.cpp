#include <doctest.h>

#include <cmath>
#include <vector>

#include "xmd/evaluate.hpp"
#include "xmd/rng.hpp"

using namespace xmd;

namespace {

/// Three well-separated Gaussian blobs in 4D; trivially linearly separable.
std::pair<DenseMatrix, std::vector<std::size_t>> blobs(std::size_t per_class,
                                                       std::uint64_t seed) {
    Rng rng(seed);
    DenseMatrix x(3 * per_class, 4);
    std::vector<std::size_t> labels(3 * per_class);
    for (std::size_t i = 0; i < 3 * per_class; ++i) {
        const std::size_t cls = i / per_class;
        labels[i] = cls;
        for (std::size_t c = 0; c < 4; ++c) {
            x(i, c) = (c == cls ? 5.0 : 0.0) + 0.3 * rng.normal();
        }
    }
    return {std::move(x), std::move(labels)};
}

}  // namespace

TEST_CASE("probe separates clean blobs perfectly") {
    const auto [x, labels] = blobs(20, 3);
    const ProbeReport report = linear_probe(x, labels, 1e-3, 7);
    CHECK(report.accuracy == 1.0);
    REQUIRE(report.per_class_recall.size() == 3);
    for (const auto& [cls, recall] : report.per_class_recall) CHECK(recall == 1.0);
    CHECK(report.train_size == 48);  // floor(0.8 * 20) = 16 per class
    CHECK(report.test_size == 12);
    CHECK(report.dropped_classes.empty());
}

TEST_CASE("split is stratified, deterministic and clamped per class") {
    // class sizes 10 / 5 / 2 -> train 8 / 4 / 1, test 2 / 1 / 1
    Rng rng(11);
    DenseMatrix x(17, 3);
    for (double& v : x.data()) v = rng.normal();
    std::vector<std::size_t> labels(17, 0);
    for (std::size_t i = 10; i < 15; ++i) labels[i] = 1;
    labels[15] = labels[16] = 2;

    const ProbeReport a = linear_probe(x, labels, 1.0, 99);
    CHECK(a.train_size == 13);
    CHECK(a.test_size == 4);
    CHECK(a.test_counts.at(0) == 2);
    CHECK(a.test_counts.at(1) == 1);
    CHECK(a.test_counts.at(2) == 1);

    const ProbeReport b = linear_probe(x, labels, 1.0, 99);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.per_class_recall == b.per_class_recall);
}

TEST_CASE("huge regularization collapses to the train-set prior") {
    // 14 samples of class 0, 6 of class 1: the prior predicts class 0
    Rng rng(13);
    DenseMatrix x(20, 3);
    for (double& v : x.data()) v = rng.normal();
    std::vector<std::size_t> labels(20, 0);
    for (std::size_t i = 14; i < 20; ++i) labels[i] = 1;

    const ProbeReport report = linear_probe(x, labels, 1e12, 5);
    CHECK(report.per_class_recall.at(0) == 1.0);
    CHECK(report.per_class_recall.at(1) == 0.0);
    // accuracy equals the share of class-0 samples in the test split
    const double want = static_cast<double>(report.test_counts.at(0)) /
                        static_cast<double>(report.test_size);
    CHECK(report.accuracy == doctest::Approx(want));
}

TEST_CASE("classes below two samples are dropped but reported") {
    const auto [x_base, labels_base] = blobs(10, 17);
    DenseMatrix x = x_base;
    std::vector<std::size_t> labels = labels_base;
    labels[29] = 9;  // a singleton class appears once

    const ProbeReport report = linear_probe(x, labels, 1e-3, 3);
    REQUIRE(report.dropped_classes == std::vector<std::size_t>{9});
    CHECK(report.per_class_recall.count(9) == 0);

    // probing needs at least two surviving classes
    std::vector<std::size_t> mono(x.rows(), 0);
    CHECK_THROWS_AS(linear_probe(x, mono, 1e-3, 3), std::runtime_error);
}

TEST_CASE("an unregularized singular system asks for more lambda") {
    // duplicated feature column makes the normal equations rank-deficient
    DenseMatrix x(8, 2);
    Rng rng(19);
    for (std::size_t i = 0; i < 8; ++i) {
        const double v = rng.normal();
        x(i, 0) = v;
        x(i, 1) = v;
    }
    std::vector<std::size_t> labels = {0, 0, 0, 0, 1, 1, 1, 1};
    CHECK_THROWS_WITH_AS(linear_probe(x, labels, 0.0, 1),
                         doctest::Contains("increase lambda"), std::runtime_error);
}

TEST_CASE("mean_recall_over skips classes the probe never saw") {
    ProbeReport report;
    report.per_class_recall = {{0, 1.0}, {2, 0.5}};
    const std::vector<std::size_t> classes = {0, 1, 2};
    CHECK(mean_recall_over(report, classes) == doctest::Approx(0.75));
    const std::vector<std::size_t> absent = {1, 7};
    CHECK(mean_recall_over(report, absent) == 0.0);
}

TEST_CASE("minority_majority_split applies the share threshold") {
    const std::vector<double> proportions = {0.3, 0.04, 0.66};
    const auto [minority, majority] = minority_majority_split(proportions);
    CHECK(minority == std::vector<std::size_t>{1});
    CHECK(majority == std::vector<std::size_t>{0, 2});
    // exactly at the threshold counts as minority ("strictly above" majority)
    const std::vector<double> edge = {0.05, 0.95};
    const auto [edge_minority, edge_majority] = minority_majority_split(edge);
    CHECK(edge_minority == std::vector<std::size_t>{0});
}

TEST_CASE("uniformity is exact on antipodal and coincident pairs") {
    const DenseMatrix antipodal{{2.0, 0.0}, {-3.0, 0.0}};  // normalize to +/- e1
    CHECK(uniformity(antipodal) == doctest::Approx(-8.0));  // |x-y|^2 = 4, log exp(-8)
    const DenseMatrix coincident{{1.0, 0.0}, {5.0, 0.0}};
    CHECK(uniformity(coincident) == doctest::Approx(0.0));
}

TEST_CASE("tolerance averages same-class cosines only") {
    const DenseMatrix x{{1.0, 0.0}, {2.0, 0.0}, {0.0, 1.0}};
    const std::vector<std::size_t> same_first = {0, 0, 1};
    CHECK(tolerance(x, same_first) == doctest::Approx(1.0));  // rows 0,1 align
    const std::vector<std::size_t> orthogonal = {0, 1, 0};    // rows 0,2 same class
    CHECK(tolerance(x, orthogonal) == doctest::Approx(0.0));
    const std::vector<std::size_t> all_distinct = {0, 1, 2};
    CHECK(tolerance(x, all_distinct) == 0.0);  // no same-class pair
}

TEST_CASE("probe report serializes its headline numbers") {
    const auto [x, labels] = blobs(10, 23);
    const ProbeReport report = linear_probe(x, labels, 1e-3, 7);
    const std::string json = probe_report_json(report);
    CHECK(json.find("\"accuracy\"") != std::string::npos);
    CHECK(json.find("\"per_class_recall\"") != std::string::npos);
    CHECK(json.find("\"test_size\"") != std::string::npos);
    CHECK(json.back() == '\n');
}
