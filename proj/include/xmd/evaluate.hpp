#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xmd/matrix.hpp"

namespace xmd {

struct ProbeReport {
    double accuracy = 0.0;  // held-out accuracy over all test samples
    std::map<std::size_t, double> per_class_recall;
    std::map<std::size_t, std::size_t> test_counts;
    std::vector<std::size_t> dropped_classes;  // fewer than 2 samples, not probed
    std::size_t train_size = 0;
    std::size_t test_size = 0;
};

/// One-vs-all ridge classifier on frozen embeddings, solved in closed form via
/// the normal equations (Cholesky). The bias column is not regularized, so
/// lambda -> infinity degrades gracefully to predicting the train-set prior.
/// The 80/20 split is stratified per class and deterministic in split_seed.
ProbeReport linear_probe(const DenseMatrix& embeddings, std::span<const std::size_t> labels,
                         double lambda, std::uint64_t split_seed);

/// Mean recall over the given classes; classes absent from the report are
/// skipped. Returns 0 when none of them were probed.
double mean_recall_over(const ProbeReport& report, std::span<const std::size_t> classes);

/// Splits class ids by share: majority when proportion > threshold, minority
/// otherwise. Returns {minority, majority}.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> minority_majority_split(
    std::span<const double> proportions, double threshold = 0.05);

/// log of the mean over ordered pairs i != j of exp(-2 |x_i - x_j|^2), rows
/// normalized first. More negative = embeddings spread more evenly over the
/// sphere. Needs at least 2 rows.
double uniformity(const DenseMatrix& embeddings);

/// Mean cosine similarity over ordered same-class pairs i != j (rows
/// normalized first). 0 when no same-class pair exists.
double tolerance(const DenseMatrix& embeddings, std::span<const std::size_t> labels);

std::string probe_report_json(const ProbeReport& report);

}  // namespace xmd
