#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "xmd/config.hpp"
#include "xmd/evaluate.hpp"
#include "xmd/trainer.hpp"

namespace xmd {

/// Worker-thread budget for grid commands: XMD_THREADS when set (>= 1),
/// otherwise the detected core count. Results never depend on it.
std::size_t thread_budget();

/// Train + probe for one experiment cell. Used by the compare/sweep commands
/// and directly by integration tests.
struct PipelineResult {
    std::string label;
    LossVariant variant = LossVariant::slidr;
    double k_percent = 0.0;
    double alpha_min = 0.0;
    bool balanced = false;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    ProbeReport probe;
    double minority_recall = 0.0;
    double majority_recall = 0.0;
    double uniformity_value = 0.0;
    double tolerance_value = 0.0;
};

/// Trains opts on cfg.scenario, then probes held-out batches of the same
/// scenario (always embedded at superpixel granularity so cells stay
/// comparable). Deterministic in (cfg, opts).
PipelineResult run_pipeline(const RunConfig& cfg, const TrainOptions& opts,
                            const std::string& label);

/// Embeds cfg.probe_eval_batches held-out batches with the given parameters;
/// returns pooled per-superpixel embeddings and their class labels.
std::pair<DenseMatrix, std::vector<std::size_t>> build_eval_embeddings(const RunConfig& cfg,
                                                                       const ModelParams& params);

/// Full command-line surface of the tool. args[0] is the program name.
/// Normal output goes to `out`; errors are reported on stderr via the return
/// code. Never throws for user errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out);
int run_cli(int argc, char** argv);

}  // namespace xmd
