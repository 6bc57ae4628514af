#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "xmd/rng.hpp"

using namespace xmd;

// Pinned stream values. Seeds and substream labels are a compatibility
// contract: batches, inits and subsamples must replay bit-identically across
// releases, so any change to these constants is a deliberate format break.
TEST_CASE("generator streams are pinned") {
    Rng r(42);
    CHECK(r.next_u64() == 13679457532755275413ull);
    CHECK(r.next_u64() == 2949826092126892291ull);
    CHECK(Rng::substream(42, "labels", 3).next_u64() == 7992136073470512161ull);
    CHECK(Rng(7).uniform() == 0.38982974839127149);
    CHECK(Rng(7).normal() == 0.98847433231873527);
    CHECK(fnv1a64("labels") == 11975350379375999464ull);
}

TEST_CASE("substreams with different purpose or index do not collide") {
    std::set<std::uint64_t> firsts;
    for (const char* purpose : {"labels", "noise", "init", "subsample"}) {
        for (std::uint64_t index = 0; index < 8; ++index) {
            firsts.insert(Rng::substream(99, purpose, index).next_u64());
        }
    }
    CHECK(firsts.size() == 32);  // no two substreams started identically
}

TEST_CASE("uniform stays in [0,1) and fills the range") {
    Rng rng(5);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double v = rng.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("uniform_index covers [0,n) roughly evenly") {
    Rng rng(17);
    const std::uint64_t n = 7;
    std::vector<std::size_t> counts(n, 0);
    const int draws = 70000;
    for (int i = 0; i < draws; ++i) ++counts[rng.uniform_index(n)];
    for (std::size_t b = 0; b < n; ++b) {
        // expectation 10000; 4 sigma is ~±390
        CHECK(counts[b] > 9500);
        CHECK(counts[b] < 10500);
    }
    CHECK_THROWS_AS(rng.uniform_index(0), std::invalid_argument);
}

TEST_CASE("normal has roughly standard moments") {
    Rng rng(23);
    double sum = 0.0, sumsq = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("sample_without_replacement returns sorted distinct indices") {
    Rng rng(3);
    const auto picks = sample_without_replacement(100, 10, rng);
    REQUIRE(picks.size() == 10);
    CHECK(std::is_sorted(picks.begin(), picks.end()));
    CHECK(std::adjacent_find(picks.begin(), picks.end()) == picks.end());
    for (std::size_t p : picks) CHECK(p < 100);

    Rng full(3);
    const auto everything = sample_without_replacement(5, 5, full);
    CHECK(everything == std::vector<std::size_t>{0, 1, 2, 3, 4});

    Rng bad(3);
    CHECK_THROWS_AS(sample_without_replacement(3, 4, bad), std::invalid_argument);
}

TEST_CASE("sample_without_replacement is unbiased over positions") {
    // every index should appear with probability k/n
    const std::size_t n = 20, k = 5;
    std::vector<int> hits(n, 0);
    Rng rng(77);
    const int trials = 40000;
    for (int t = 0; t < trials; ++t) {
        for (std::size_t p : sample_without_replacement(n, k, rng)) ++hits[p];
    }
    const double expect = trials * static_cast<double>(k) / n;  // 10000
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(hits[i] > expect * 0.95);
        CHECK(hits[i] < expect * 1.05);
    }
}
