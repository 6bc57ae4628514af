#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xmd/losses.hpp"
#include "xmd/matrix.hpp"
#include "xmd/rng.hpp"
#include "xmd/similarity.hpp"
#include "xmd/synth.hpp"

namespace xmd {

/// Affine map x -> x W + b with W laid out in x out.
struct LinearHead {
    DenseMatrix weight;
    std::vector<double> bias;

    /// Uniform init in [-1/sqrt(in), 1/sqrt(in)] for both weight and bias;
    /// draw order is weight (row-major) then bias, so streams stay stable.
    static LinearHead init(std::size_t in, std::size_t out, Rng& rng);

    DenseMatrix apply(const DenseMatrix& x) const;
};

/// Trainable point side (encoder -> optional tanh -> projection head) plus the
/// image-side projection head. The 2D features themselves stay frozen; only
/// these three maps learn.
struct ModelParams {
    LinearHead encoder;     // point_dim -> hidden
    LinearHead point_head;  // hidden -> embed
    LinearHead image_head;  // feature_dim -> embed
    bool use_tanh = false;

    std::vector<std::vector<double>*> flat_tensors();
    std::vector<const std::vector<double>*> flat_tensors() const;
};

struct TrainOptions {
    LossVariant variant = LossVariant::st;
    Granularity granularity = Granularity::superpixel;
    double temperature = 0.0;  // 0 picks the granularity default (0.07 / 0.04)
    double k_percent = 1.0;
    double alpha_min = 0.0;
    bool rescale_alpha = true;
    BalanceNormalization balance_mode = BalanceNormalization::paper;
    std::size_t pair_cap = 4096;  // point granularity only

    std::size_t total_steps = 200;
    std::size_t scenes = 1;  // fixed pool of batches, cycled step by step
    double lr0 = 0.5;
    double momentum = 0.9;
    double dampening = 0.1;
    double weight_decay = 1e-4;

    std::size_t hidden_dim = 32;
    std::size_t embed_dim = 16;
    bool use_tanh = false;
    std::uint64_t seed = 0;  // parameter init; data randomness lives in the scenario

    void validate() const;
};

/// 0.07 at superpixel granularity, 0.04 at point granularity, unless the
/// options pin an explicit positive value.
double effective_temperature(const TrainOptions& opts);

/// Cosine annealing evaluated per step: lr0 * 0.5 * (1 + cos(pi * step / total)).
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

struct StepStats {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    LossVariant variant = LossVariant::slidr;
};

struct TrainResult {
    ModelParams params;
    std::vector<StepStats> history;
};

/// Thrown when the loss stops being finite; carries the offending step.
struct DivergenceError : std::runtime_error {
    DivergenceError(std::size_t step_, double value_);
    std::size_t step;
    double value;
};

struct ForwardCache {
    DenseMatrix enc_pre;    // N x hidden
    DenseMatrix enc_out;    // N x hidden (tanh applied when enabled)
    DenseMatrix point_emb;  // N x embed
    DenseMatrix image_emb;  // per pixel-side row x embed
    DenseMatrix q_raw;      // per group x embed, mean-pooled point side
    DenseMatrix k_raw;      // per group x embed, mean-pooled image side
};

ForwardCache forward(const SyntheticBatch& batch, const ModelParams& params);

struct ParamGrads {
    DenseMatrix d_encoder_w;
    std::vector<double> d_encoder_b;
    DenseMatrix d_point_head_w;
    std::vector<double> d_point_head_b;
    DenseMatrix d_image_head_w;
    std::vector<double> d_image_head_b;

    std::vector<const std::vector<double>*> flat_tensors() const;
};

/// Pushes d loss / d q_raw and d loss / d k_raw back through the pooling, the
/// heads and the encoder.
ParamGrads backward(const SyntheticBatch& batch, const ModelParams& params,
                    const ForwardCache& cache, const DenseMatrix& grad_q,
                    const DenseMatrix& grad_k);

/// Momentum SGD, uniform from the first step:
///   b <- momentum * b + (1 - dampening) * (g + weight_decay * p)
///   p <- p - lr * b
/// with b starting at zero. (Deliberately not the PyTorch variant, which skips
/// dampening on a buffer's first update.)
struct SgdState {
    std::vector<std::vector<double>> momentum;
};

void sgd_step(ModelParams& params, const ParamGrads& grads, SgdState& state, double lr,
              double momentum, double dampening, double weight_decay);

/// Builds the per-scene similarity bundle the way the training loop does:
/// optional [0,1] rescale, then the KNN mask and balance weights.
SimilarityBundle bundle_for_batch(const SyntheticBatch& batch, const TrainOptions& opts);

/// Full training loop over a fixed pool of `opts.scenes` batches generated
/// from the scenario (converted to point pairs first when requested). One SGD
/// step per iteration, scenes visited round-robin. Bit-identical for equal
/// (scenario, options).
TrainResult train(const Scenario& scenario, const TrainOptions& opts);

/// Central-difference check of the full parameter gradient (loss -> pooling ->
/// heads -> encoder chain) on one batch. Returns the max relative error with
/// the same max(1, |numeric|) convention as the loss-level checker.
double trainer_gradient_check(const SyntheticBatch& batch, const ModelParams& params,
                              const TrainOptions& opts, double epsilon);

/// History CSV: optional leading "# ..." comment, then "step,lr,loss,variant".
void write_history_csv(std::ostream& out, std::span<const StepStats> history,
                       std::string_view comment = {});
std::vector<StepStats> read_history_csv(std::istream& in);

/// Checkpoint = manifest.txt plus one binary matrix file per tensor.
void save_checkpoint(const std::string& dir, const ModelParams& params);
ModelParams load_checkpoint(const std::string& dir);

}  // namespace xmd
