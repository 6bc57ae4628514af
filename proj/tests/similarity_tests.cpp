#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "xmd/rng.hpp"
#include "xmd/similarity.hpp"

using namespace xmd;

namespace {

DenseMatrix random_features(std::size_t m, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    DenseMatrix f(m, c);
    for (double& v : f.data()) v = rng.normal();
    return f;
}

}  // namespace

TEST_CASE("superpixel_similarity is the cosine matrix") {
    // orthogonal rows -> identity
    const DenseMatrix basis{{1.0, 0.0, 0.0}, {0.0, 2.0, 0.0}};
    const DenseMatrix eye = superpixel_similarity(basis);
    CHECK(eye(0, 0) == doctest::Approx(1.0));
    CHECK(eye(0, 1) == doctest::Approx(0.0));
    CHECK(eye(1, 1) == doctest::Approx(1.0));

    // identical rows -> all ones
    const DenseMatrix same{{1.0, 2.0}, {2.0, 4.0}};
    const DenseMatrix ones = superpixel_similarity(same);
    for (double v : ones.data()) CHECK(v == doctest::Approx(1.0));

    // random case against the explicit cosine loop
    const DenseMatrix f = random_features(6, 8, 5);
    const DenseMatrix alpha = superpixel_similarity(f);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 6; ++j) {
            double dot = 0.0, ni = 0.0, nj = 0.0;
            for (std::size_t c = 0; c < 8; ++c) {
                dot += f(i, c) * f(j, c);
                ni += f(i, c) * f(i, c);
                nj += f(j, c) * f(j, c);
            }
            const double want = dot / (std::sqrt(ni) * std::sqrt(nj));
            CHECK(alpha(i, j) == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("rescale_unit_interval maps [-1,1] onto [0,1]") {
    const DenseMatrix alpha{{-1.0, 0.0}, {1.0, 0.5}};
    const DenseMatrix r = rescale_unit_interval(alpha);
    CHECK(r(0, 0) == 0.0);
    CHECK(r(0, 1) == 0.5);
    CHECK(r(1, 0) == 1.0);
    CHECK(r(1, 1) == 0.75);
}

TEST_CASE("percent_to_k floors and clamps") {
    CHECK(percent_to_k(1.0, 4096) == 40);  // floor(40.96)
    CHECK(percent_to_k(5.0, 100) == 5);
    CHECK(percent_to_k(50.0, 3) == 1);  // floor(1.5), still leaves one negative
    CHECK(percent_to_k(0.0, 16) == 0);
    CHECK(percent_to_k(100.0, 10) == 8);  // clamped to m-2
    CHECK_THROWS_AS(percent_to_k(-1.0, 16), std::invalid_argument);
    CHECK_THROWS_AS(percent_to_k(101.0, 16), std::invalid_argument);
    CHECK_THROWS_AS(percent_to_k(5.0, 1), std::invalid_argument);
}

TEST_CASE("knn_mask removes the k most similar negatives per row") {
    // single nearest removed
    const DenseMatrix alpha{{1.0, 0.9, 0.1}, {0.9, 1.0, 0.2}, {0.1, 0.2, 1.0}};
    const DenseMatrix m1 = knn_mask(alpha, 1);
    CHECK(m1(0, 0) == 0.0);  // diagonal stored as 0
    CHECK(m1(0, 1) == 0.0);  // the nearest neighbour
    CHECK(m1(0, 2) == 1.0);
    CHECK(m1(2, 1) == 0.0);  // row 2's nearest is column 1
    CHECK(m1(2, 0) == 1.0);

    // k=0 keeps every negative
    const DenseMatrix m0 = knn_mask(alpha, 0);
    CHECK(m0(0, 1) == 1.0);
    CHECK(m0(0, 2) == 1.0);

    CHECK_THROWS_AS(knn_mask(alpha, 2), std::invalid_argument);  // nothing would survive
}

TEST_CASE("knn_mask ties at the cut are broken towards the smaller column") {
    // row 0: columns 1, 2, 3 all equally similar; k=2 must drop columns 1 and 2
    const DenseMatrix alpha{{1.0, 0.5, 0.5, 0.5, 0.2},
                            {0.5, 1.0, 0.1, 0.1, 0.1},
                            {0.5, 0.1, 1.0, 0.1, 0.1},
                            {0.5, 0.1, 0.1, 1.0, 0.1},
                            {0.2, 0.1, 0.1, 0.1, 1.0}};
    const DenseMatrix m = knn_mask(alpha, 2);
    CHECK(m(0, 1) == 0.0);
    CHECK(m(0, 2) == 0.0);
    CHECK(m(0, 3) == 1.0);  // the tie survivor with the largest index
    CHECK(m(0, 4) == 1.0);
}

TEST_CASE("knn_mask matches a full-sort oracle on random input") {
    const DenseMatrix f = random_features(8, 6, 11);
    const DenseMatrix alpha = superpixel_similarity(f);
    const std::size_t k = 2;
    const DenseMatrix mask = knn_mask(alpha, k);
    for (std::size_t i = 0; i < 8; ++i) {
        // oracle: sort negatives by (alpha desc, index asc), drop the first k
        std::vector<std::size_t> order;
        for (std::size_t j = 0; j < 8; ++j) {
            if (j != i) order.push_back(j);
        }
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (alpha(i, a) != alpha(i, b)) return alpha(i, a) > alpha(i, b);
            return a < b;
        });
        for (std::size_t r = 0; r < order.size(); ++r) {
            const double want = r < k ? 0.0 : 1.0;
            CHECK(mask(i, order[r]) == want);
        }
        // row sum invariant: exactly M-1-k survivors
        double survivors = 0.0;
        for (std::size_t j = 0; j < 8; ++j) survivors += mask(i, j);
        CHECK(survivors == static_cast<double>(8 - 1 - k));
    }
}

TEST_CASE("threshold_alpha zeroes entries strictly below the floor") {
    const DenseMatrix alpha{{0.9, 0.3, 0.6}, {0.5, 0.49999, 1.0}};
    const DenseMatrix t = threshold_alpha(alpha, 0.5);
    CHECK(t(0, 0) == 0.9);
    CHECK(t(0, 1) == 0.0);
    CHECK(t(0, 2) == 0.6);
    CHECK(t(1, 0) == 0.5);  // exactly at the floor survives
    CHECK(t(1, 1) == 0.0);
}

TEST_CASE("balance_weights reproduces the hand-evaluated example") {
    // row sums (votes): 3.0, 1.5, 1.5 -> shifted (1.5, 0, 0), divided by 1.5
    // -> normalized (1, 0, 0) -> weights (0, 1, 1), weight_sum 2
    const DenseMatrix alpha{{1.0, 1.0, 1.0}, {0.5, 1.0, 0.0}, {0.0, 0.5, 1.0}};
    const BalanceResult r = balance_weights(alpha);
    REQUIRE(r.votes.size() == 3);
    CHECK(r.votes[0] == doctest::Approx(3.0));
    CHECK(r.votes[1] == doctest::Approx(1.5));
    CHECK(r.votes[2] == doctest::Approx(1.5));
    CHECK(r.weights[0] == doctest::Approx(0.0));
    CHECK(r.weights[1] == doctest::Approx(1.0));
    CHECK(r.weights[2] == doctest::Approx(1.0));
    CHECK(r.weight_sum == doctest::Approx(2.0));
}

TEST_CASE("balance_weights falls back to uniform on equal votes") {
    const DenseMatrix eye{{1.0, 0.0}, {0.0, 1.0}};
    const BalanceResult r = balance_weights(eye);
    CHECK(r.weights[0] == 0.5);
    CHECK(r.weights[1] == 0.5);
    CHECK(r.weight_sum == 1.0);
}

TEST_CASE("balance modes agree and weights fall with votes") {
    const DenseMatrix f = random_features(12, 5, 21);
    const DenseMatrix alpha = rescale_unit_interval(superpixel_similarity(f));
    const BalanceResult paper = balance_weights(alpha, BalanceNormalization::paper);
    const BalanceResult conv = balance_weights(alpha, BalanceNormalization::conventional);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(paper.weights[i] == doctest::Approx(conv.weights[i]).epsilon(1e-14));
        CHECK(paper.weights[i] >= 0.0);
    }
    // rank check: sorting anchors by vote descending must sort weights ascending
    std::vector<std::size_t> by_vote(12);
    std::iota(by_vote.begin(), by_vote.end(), 0);
    std::sort(by_vote.begin(), by_vote.end(),
              [&](std::size_t a, std::size_t b) { return paper.votes[a] > paper.votes[b]; });
    for (std::size_t r = 1; r < 12; ++r) {
        CHECK(paper.weights[by_vote[r - 1]] <= paper.weights[by_vote[r]] + 1e-12);
    }
}

TEST_CASE("balance_weights handles negative similarities via the fallback") {
    // all-negative off-diagonals give every anchor the same vote (-0.8);
    // equal votes take the uniform fallback rather than dividing by zero
    const DenseMatrix hostile{{1.0, -0.9, -0.9}, {-0.9, 1.0, -0.9}, {-0.9, -0.9, 1.0}};
    const BalanceResult r = balance_weights(hostile);
    CHECK(r.weight_sum == 1.0);
    CHECK(r.weights[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("build_bundle wires rescale, mask and weights together") {
    const DenseMatrix f = random_features(10, 4, 33);
    BundleOptions opts;
    opts.k_percent = 30.0;  // floor(3) neighbours masked
    const SimilarityBundle bundle = build_bundle(f, opts);
    CHECK(bundle.alpha.rows() == 10);
    // rescaled alpha lives in [0,1]
    for (double v : bundle.alpha.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-12);
    }
    // mask row sums match percent_to_k
    const std::size_t k = percent_to_k(30.0, 10);
    for (std::size_t i = 0; i < 10; ++i) {
        double survivors = 0.0;
        for (std::size_t j = 0; j < 10; ++j) survivors += bundle.mask(i, j);
        CHECK(survivors == static_cast<double>(10 - 1 - k));
    }
    CHECK(bundle.weights.size() == 10);
    CHECK(bundle.weight_sum > 0.0);

    BundleOptions raw = opts;
    raw.rescale = false;
    const SimilarityBundle unscaled = build_bundle(f, raw);
    // without rescaling some cosines stay negative
    CHECK(std::any_of(unscaled.alpha.data().begin(), unscaled.alpha.data().end(),
                      [](double v) { return v < 0.0; }));
}
