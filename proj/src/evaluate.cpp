#include "xmd/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "xmd/rng.hpp"

namespace xmd {

ProbeReport linear_probe(const DenseMatrix& embeddings, std::span<const std::size_t> labels,
                         double lambda, std::uint64_t split_seed) {
    if (labels.size() != embeddings.rows()) {
        throw std::invalid_argument("linear_probe: need one label per embedding row");
    }
    if (embeddings.rows() < 2 || embeddings.cols() == 0) {
        throw std::invalid_argument("linear_probe: need at least 2 samples and 1 dimension");
    }
    if (!(lambda >= 0.0)) {
        throw std::invalid_argument("linear_probe: lambda must be >= 0");
    }

    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    ProbeReport report;
    std::vector<std::size_t> class_ids;  // probed classes, ascending
    std::vector<std::size_t> train_rows, test_rows;
    for (auto& [cls, members] : by_class) {
        if (members.size() < 2) {
            report.dropped_classes.push_back(cls);
            continue;
        }
        class_ids.push_back(cls);
        // Stratified shuffle per class, deterministic in (seed, class).
        Rng rng = Rng::substream(split_seed, "probe-split", cls);
        for (std::size_t i = members.size(); i > 1; --i) {
            std::swap(members[i - 1], members[rng.uniform_index(i)]);
        }
        std::size_t n_train = static_cast<std::size_t>(
            std::floor(0.8 * static_cast<double>(members.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
        train_rows.insert(train_rows.end(), members.begin(), members.begin() + n_train);
        test_rows.insert(test_rows.end(), members.begin() + n_train, members.end());
    }
    if (class_ids.size() < 2) {
        throw std::runtime_error("linear_probe: need at least 2 classes with 2+ samples");
    }
    report.train_size = train_rows.size();
    report.test_size = test_rows.size();

    const std::size_t e = embeddings.cols();
    const std::size_t d = e + 1;  // trailing bias column of ones
    const std::size_t n_cls = class_ids.size();
    std::map<std::size_t, std::size_t> class_pos;
    for (std::size_t c = 0; c < n_cls; ++c) class_pos[class_ids[c]] = c;

    DenseMatrix x(train_rows.size(), d);
    DenseMatrix y(train_rows.size(), n_cls);  // one-hot targets
    for (std::size_t r = 0; r < train_rows.size(); ++r) {
        const auto src = embeddings.row(train_rows[r]);
        auto dst = x.row(r);
        std::copy(src.begin(), src.end(), dst.begin());
        dst[e] = 1.0;
        y(r, class_pos.at(labels[train_rows[r]])) = 1.0;
    }

    // Normal equations with the bias left unregularized.
    DenseMatrix gram_x = matmul(transpose(x), x);
    for (std::size_t i = 0; i < e; ++i) gram_x(i, i) += lambda;
    DenseMatrix w;
    try {
        w = cholesky_solve(gram_x, matmul(transpose(x), y));
    } catch (const std::invalid_argument&) {
        throw std::runtime_error(
            "linear_probe: normal equations are singular; increase lambda");
    }

    std::map<std::size_t, std::size_t> correct;
    for (std::size_t cls : class_ids) {
        correct[cls] = 0;
        report.test_counts[cls] = 0;
    }
    std::size_t hits = 0;
    std::vector<double> score(n_cls);
    for (std::size_t row : test_rows) {
        const auto xe = embeddings.row(row);
        for (std::size_t c = 0; c < n_cls; ++c) {
            double s = w(e, c);  // bias
            for (std::size_t k = 0; k < e; ++k) s += xe[k] * w(k, c);
            score[c] = s;
        }
        // Ties resolve to the smaller class id (first maximum).
        const std::size_t best =
            static_cast<std::size_t>(std::max_element(score.begin(), score.end()) - score.begin());
        const std::size_t truth = labels[row];
        ++report.test_counts[truth];
        if (class_ids[best] == truth) {
            ++hits;
            ++correct[truth];
        }
    }
    report.accuracy = static_cast<double>(hits) / static_cast<double>(test_rows.size());
    for (std::size_t cls : class_ids) {
        report.per_class_recall[cls] = static_cast<double>(correct[cls]) /
                                       static_cast<double>(report.test_counts[cls]);
    }
    return report;
}

double mean_recall_over(const ProbeReport& report, std::span<const std::size_t> classes) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t cls : classes) {
        auto it = report.per_class_recall.find(cls);
        if (it == report.per_class_recall.end()) continue;
        sum += it->second;
        ++n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> minority_majority_split(
    std::span<const double> proportions, double threshold) {
    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
    for (std::size_t c = 0; c < proportions.size(); ++c) {
        (proportions[c] > threshold ? out.second : out.first).push_back(c);
    }
    return out;
}

double uniformity(const DenseMatrix& embeddings) {
    const std::size_t m = embeddings.rows();
    if (m < 2) {
        throw std::invalid_argument("uniformity: need at least 2 rows");
    }
    const DenseMatrix unit = l2_normalize_rows(embeddings);
    StableSum acc;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (i == j) continue;
            double sq = 0.0;
            for (std::size_t c = 0; c < unit.cols(); ++c) {
                const double d = unit(i, c) - unit(j, c);
                sq += d * d;
            }
            acc.add(std::exp(-2.0 * sq));
        }
    }
    return std::log(acc.value() / static_cast<double>(m * (m - 1)));
}

double tolerance(const DenseMatrix& embeddings, std::span<const std::size_t> labels) {
    if (labels.size() != embeddings.rows()) {
        throw std::invalid_argument("tolerance: need one label per row");
    }
    const DenseMatrix unit = l2_normalize_rows(embeddings);
    StableSum acc;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < unit.rows(); ++i) {
        for (std::size_t j = 0; j < unit.rows(); ++j) {
            if (i == j || labels[i] != labels[j]) continue;
            double dot = 0.0;
            for (std::size_t c = 0; c < unit.cols(); ++c) dot += unit(i, c) * unit(j, c);
            acc.add(dot);
            ++pairs;
        }
    }
    return pairs == 0 ? 0.0 : acc.value() / static_cast<double>(pairs);
}

std::string probe_report_json(const ProbeReport& report) {
    nlohmann::ordered_json j;
    j["accuracy"] = report.accuracy;
    j["train_size"] = report.train_size;
    j["test_size"] = report.test_size;
    nlohmann::ordered_json recall = nlohmann::ordered_json::object();
    for (const auto& [cls, r] : report.per_class_recall) {
        recall[std::to_string(cls)] = r;
    }
    j["per_class_recall"] = recall;
    nlohmann::ordered_json counts = nlohmann::ordered_json::object();
    for (const auto& [cls, n] : report.test_counts) {
        counts[std::to_string(cls)] = n;
    }
    j["test_counts"] = counts;
    j["dropped_classes"] = report.dropped_classes;
    return j.dump(2) + "\n";
}

}  // namespace xmd
