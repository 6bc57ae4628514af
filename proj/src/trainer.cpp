#include "xmd/trainer.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "xmd/matrix_io.hpp"

namespace xmd {

LinearHead LinearHead::init(std::size_t in, std::size_t out, Rng& rng) {
    if (in == 0 || out == 0) {
        throw std::invalid_argument("LinearHead::init: zero dimension");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    LinearHead head;
    head.weight = DenseMatrix(in, out);
    for (double& v : head.weight.data()) v = rng.uniform(-bound, bound);
    head.bias.resize(out);
    for (double& v : head.bias) v = rng.uniform(-bound, bound);
    return head;
}

DenseMatrix LinearHead::apply(const DenseMatrix& x) const {
    if (x.cols() != weight.rows()) {
        throw std::invalid_argument("LinearHead: input has " + std::to_string(x.cols()) +
                                    " columns, weight expects " + std::to_string(weight.rows()));
    }
    DenseMatrix out = matmul(x, weight);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto row = out.row(i);
        for (std::size_t j = 0; j < out.cols(); ++j) row[j] += bias[j];
    }
    return out;
}

std::vector<std::vector<double>*> ModelParams::flat_tensors() {
    return {&encoder.weight.data(),    &encoder.bias,    &point_head.weight.data(),
            &point_head.bias,          &image_head.weight.data(), &image_head.bias};
}

std::vector<const std::vector<double>*> ModelParams::flat_tensors() const {
    return {&encoder.weight.data(),    &encoder.bias,    &point_head.weight.data(),
            &point_head.bias,          &image_head.weight.data(), &image_head.bias};
}

std::vector<const std::vector<double>*> ParamGrads::flat_tensors() const {
    return {&d_encoder_w.data(),    &d_encoder_b,    &d_point_head_w.data(),
            &d_point_head_b,        &d_image_head_w.data(), &d_image_head_b};
}

void TrainOptions::validate() const {
    if (!(temperature >= 0.0)) {
        throw std::invalid_argument("train: temperature must be >= 0 (0 = granularity default)");
    }
    if (!(k_percent >= 0.0 && k_percent <= 100.0)) {
        throw std::invalid_argument("train: k_percent must lie in [0, 100]");
    }
    if (!(lr0 >= 0.0) || !(weight_decay >= 0.0)) {
        throw std::invalid_argument("train: lr0 and weight_decay must be >= 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("train: momentum must lie in [0, 1)");
    }
    if (!(dampening >= 0.0 && dampening <= 1.0)) {
        throw std::invalid_argument("train: dampening must lie in [0, 1]");
    }
    if (total_steps == 0 || scenes == 0) {
        throw std::invalid_argument("train: need at least one step and one scene");
    }
    if (hidden_dim == 0 || embed_dim == 0) {
        throw std::invalid_argument("train: hidden_dim and embed_dim must be positive");
    }
    if (granularity == Granularity::point && pair_cap < 2) {
        throw std::invalid_argument("train: point granularity needs a pair cap of at least 2");
    }
}

double effective_temperature(const TrainOptions& opts) {
    if (opts.temperature > 0.0) return opts.temperature;
    return opts.granularity == Granularity::point ? 0.04 : 0.07;
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
    if (total_steps == 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

DivergenceError::DivergenceError(std::size_t step_, double value_)
    : std::runtime_error("training diverged at step " + std::to_string(step_) +
                         ": loss = " + std::to_string(value_)),
      step(step_),
      value(value_) {}

ForwardCache forward(const SyntheticBatch& batch, const ModelParams& params) {
    ForwardCache cache;
    cache.enc_pre = params.encoder.apply(batch.point_features);
    if (params.use_tanh) {
        cache.enc_out = cache.enc_pre;
        for (double& v : cache.enc_out.data()) v = std::tanh(v);
    } else {
        cache.enc_out = cache.enc_pre;
    }
    cache.point_emb = params.point_head.apply(cache.enc_out);
    cache.image_emb = params.image_head.apply(batch.superpixel_features);
    auto pooled = pool_pair_embeddings(cache.point_emb, cache.image_emb, batch.pair_set);
    cache.q_raw = std::move(pooled.first);
    cache.k_raw = std::move(pooled.second);
    return cache;
}

namespace {

/// Splits a pooled-group gradient back onto member rows: mean pooling sends
/// grad/|group| to each member.
DenseMatrix unpool(const DenseMatrix& grad_groups,
                   const std::vector<std::vector<std::size_t>>& groups, std::size_t rows) {
    DenseMatrix out(rows, grad_groups.cols());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const double inv = 1.0 / static_cast<double>(groups[g].size());
        const auto gg = grad_groups.row(g);
        for (std::size_t idx : groups[g]) {
            auto o = out.row(idx);
            for (std::size_t c = 0; c < out.cols(); ++c) o[c] += inv * gg[c];
        }
    }
    return out;
}

std::vector<double> column_sums(const DenseMatrix& m) {
    std::vector<double> out(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += r[j];
    }
    return out;
}

}  // namespace

ParamGrads backward(const SyntheticBatch& batch, const ModelParams& params,
                    const ForwardCache& cache, const DenseMatrix& grad_q,
                    const DenseMatrix& grad_k) {
    ParamGrads grads;

    // Pooling is a straight mean over group members on both sides.
    const DenseMatrix d_point_emb =
        unpool(grad_q, batch.pair_set.point_groups, cache.point_emb.rows());
    const DenseMatrix d_image_emb =
        unpool(grad_k, batch.pair_set.pixel_groups, cache.image_emb.rows());

    grads.d_image_head_w = matmul(transpose(batch.superpixel_features), d_image_emb);
    grads.d_image_head_b = column_sums(d_image_emb);

    grads.d_point_head_w = matmul(transpose(cache.enc_out), d_point_emb);
    grads.d_point_head_b = column_sums(d_point_emb);

    DenseMatrix d_enc = matmul(d_point_emb, transpose(params.point_head.weight));
    if (params.use_tanh) {
        for (std::size_t i = 0; i < d_enc.data().size(); ++i) {
            const double y = cache.enc_out.data()[i];
            d_enc.data()[i] *= 1.0 - y * y;
        }
    }
    grads.d_encoder_w = matmul(transpose(batch.point_features), d_enc);
    grads.d_encoder_b = column_sums(d_enc);
    return grads;
}

void sgd_step(ModelParams& params, const ParamGrads& grads, SgdState& state, double lr,
              double momentum, double dampening, double weight_decay) {
    auto tensors = params.flat_tensors();
    auto gradients = grads.flat_tensors();
    if (state.momentum.empty()) {
        state.momentum.resize(tensors.size());
        for (std::size_t t = 0; t < tensors.size(); ++t) {
            state.momentum[t].assign(tensors[t]->size(), 0.0);
        }
    }
    if (state.momentum.size() != tensors.size()) {
        throw std::invalid_argument("sgd_step: optimizer state does not match the model");
    }
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        auto& p = *tensors[t];
        const auto& g = *gradients[t];
        auto& buf = state.momentum[t];
        if (g.size() != p.size() || buf.size() != p.size()) {
            throw std::invalid_argument("sgd_step: tensor shape mismatch");
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            // Same recurrence from the very first step; the buffer simply
            // starts at zero.
            const double grad = g[i] + weight_decay * p[i];
            buf[i] = momentum * buf[i] + (1.0 - dampening) * grad;
            p[i] -= lr * buf[i];
        }
    }
}

SimilarityBundle bundle_for_batch(const SyntheticBatch& batch, const TrainOptions& opts) {
    BundleOptions bopts;
    bopts.k_percent = opts.k_percent;
    bopts.alpha_min = opts.alpha_min;
    bopts.rescale = opts.rescale_alpha;
    bopts.balance_mode = opts.balance_mode;
    return build_bundle(batch.superpixel_features, bopts);
}

namespace {

LossResult loss_for_bundle(const DenseMatrix& q, const DenseMatrix& k,
                           const SimilarityBundle& bundle, const TrainOptions& opts) {
    const LossConfig cfg{effective_temperature(opts), 1e-12};
    switch (opts.variant) {
        case LossVariant::slidr:
            return loss_slidr(q, k, cfg);
        case LossVariant::alpha: {
            const DenseMatrix thr = threshold_alpha(bundle.alpha, opts.alpha_min);
            return loss_alpha(q, k, thr, cfg);
        }
        case LossVariant::knn:
            return loss_knn(q, k, bundle.mask, cfg);
        case LossVariant::st:
            return loss_st(q, k, bundle.mask, bundle.weights, bundle.weight_sum, cfg);
    }
    throw std::logic_error("loss_for_bundle: unknown variant");
}

}  // namespace

TrainResult train(const Scenario& scenario, const TrainOptions& opts) {
    opts.validate();
    scenario.validate();

    std::vector<SyntheticBatch> scenes;
    scenes.reserve(opts.scenes);
    for (std::size_t s = 0; s < opts.scenes; ++s) {
        SyntheticBatch batch = generate_batch(scenario, s);
        if (opts.granularity == Granularity::point) {
            const std::uint64_t cap_seed =
                Rng::substream(scenario.seed, "scene-cap", s).next_u64();
            batch = to_point_granularity(batch, opts.pair_cap, cap_seed);
        }
        scenes.push_back(std::move(batch));
    }

    // The 2D side is frozen, so each scene's similarity bundle is fixed for
    // the whole run and computed once.
    std::vector<SimilarityBundle> bundles;
    bundles.reserve(scenes.size());
    for (const auto& scene : scenes) bundles.push_back(bundle_for_batch(scene, opts));

    Rng init_rng = Rng::substream(opts.seed, "init");
    TrainResult result;
    result.params.encoder = LinearHead::init(scenario.point_dim, opts.hidden_dim, init_rng);
    result.params.point_head = LinearHead::init(opts.hidden_dim, opts.embed_dim, init_rng);
    result.params.image_head = LinearHead::init(scenario.feature_dim, opts.embed_dim, init_rng);
    result.params.use_tanh = opts.use_tanh;

    SgdState state;
    result.history.reserve(opts.total_steps);
    for (std::size_t step = 0; step < opts.total_steps; ++step) {
        const std::size_t scene_idx = step % scenes.size();
        const SyntheticBatch& scene = scenes[scene_idx];
        const ForwardCache cache = forward(scene, result.params);
        // Row normalization bounds the logits, so a blow-up surfaces as
        // non-finite embeddings or parameters before the loss itself does.
        if (!cache.q_raw.all_finite() || !cache.k_raw.all_finite()) {
            throw DivergenceError(step, std::numeric_limits<double>::quiet_NaN());
        }
        const LossResult loss = loss_for_bundle(cache.q_raw, cache.k_raw, bundles[scene_idx], opts);
        if (!std::isfinite(loss.value)) {
            throw DivergenceError(step, loss.value);
        }
        const double lr = cosine_lr(step, opts.total_steps, opts.lr0);
        result.history.push_back({step, lr, loss.value, opts.variant});
        const ParamGrads grads = backward(scene, result.params, cache, loss.grad_q, loss.grad_k);
        sgd_step(result.params, grads, state, lr, opts.momentum, opts.dampening,
                 opts.weight_decay);
    }
    return result;
}

double trainer_gradient_check(const SyntheticBatch& batch, const ModelParams& params,
                              const TrainOptions& opts, double epsilon) {
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("trainer_gradient_check: epsilon must be positive");
    }
    const SimilarityBundle bundle = bundle_for_batch(batch, opts);

    const ForwardCache cache = forward(batch, params);
    const LossResult loss = loss_for_bundle(cache.q_raw, cache.k_raw, bundle, opts);
    const ParamGrads grads = backward(batch, params, cache, loss.grad_q, loss.grad_k);

    ModelParams probe = params;
    auto tensors = probe.flat_tensors();
    auto analytic = grads.flat_tensors();
    const auto value_at = [&]() {
        const ForwardCache c = forward(batch, probe);
        return loss_for_bundle(c.q_raw, c.k_raw, bundle, opts).value;
    };

    double max_rel = 0.0;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        auto& tensor = *tensors[t];
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const double saved = tensor[i];
            tensor[i] = saved + epsilon;
            const double up = value_at();
            tensor[i] = saved - epsilon;
            const double down = value_at();
            tensor[i] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double rel = std::abs((*analytic[t])[i] - numeric) /
                               std::max(1.0, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

void write_history_csv(std::ostream& out, std::span<const StepStats> history,
                       std::string_view comment) {
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "step,lr,loss,variant\n";
    for (const auto& s : history) {
        out << s.step << ',' << format_double(s.lr) << ',' << format_double(s.loss) << ','
            << variant_name(s.variant) << '\n';
    }
}

std::vector<StepStats> read_history_csv(std::istream& in) {
    std::vector<StepStats> history;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("step,", 0) == 0) continue;
        std::istringstream row(line);
        StepStats s;
        std::string field;
        if (!std::getline(row, field, ',')) continue;
        s.step = std::stoull(field);
        if (!std::getline(row, field, ',')) {
            throw std::runtime_error("history csv: truncated row '" + line + "'");
        }
        s.lr = std::stod(field);
        if (!std::getline(row, field, ',')) {
            throw std::runtime_error("history csv: truncated row '" + line + "'");
        }
        s.loss = std::stod(field);
        if (!std::getline(row, field, ',')) {
            throw std::runtime_error("history csv: truncated row '" + line + "'");
        }
        s.variant = variant_from_name(field);
        history.push_back(s);
    }
    return history;
}

namespace {

DenseMatrix bias_as_matrix(const std::vector<double>& bias) {
    return DenseMatrix(1, bias.size(), bias);
}

const std::array<const char*, 6> kTensorNames = {
    "encoder.weight",    "encoder.bias",    "point_head.weight",
    "point_head.bias",   "image_head.weight", "image_head.bias",
};

std::string tensor_filename(const char* name) {
    std::string file(name);
    for (char& c : file) {
        if (c == '.') c = '_';
    }
    return file + ".xmd";
}

}  // namespace

void save_checkpoint(const std::string& dir, const ModelParams& params) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::array<DenseMatrix, 6> tensors = {
        params.encoder.weight,    bias_as_matrix(params.encoder.bias),
        params.point_head.weight, bias_as_matrix(params.point_head.bias),
        params.image_head.weight, bias_as_matrix(params.image_head.bias)};
    std::ofstream manifest(dir + "/manifest.txt");
    if (!manifest) throw std::runtime_error("cannot open " + dir + "/manifest.txt for writing");
    manifest << "xmd-checkpoint 1\n";
    manifest << "use_tanh " << (params.use_tanh ? 1 : 0) << '\n';
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        const std::string file = tensor_filename(kTensorNames[t]);
        write_matrix_binary(dir + "/" + file, tensors[t]);
        manifest << "tensor " << kTensorNames[t] << ' ' << file << '\n';
    }
    if (!manifest) throw std::runtime_error("write failed for " + dir + "/manifest.txt");
}

ModelParams load_checkpoint(const std::string& dir) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw std::runtime_error("cannot open " + dir + "/manifest.txt");
    std::string magic;
    int version = 0;
    if (!(manifest >> magic >> version) || magic != "xmd-checkpoint" || version != 1) {
        throw std::runtime_error("checkpoint " + dir + ": unrecognized manifest header");
    }
    std::string key;
    int tanh_flag = 0;
    if (!(manifest >> key >> tanh_flag) || key != "use_tanh") {
        throw std::runtime_error("checkpoint " + dir + ": missing use_tanh line");
    }
    std::map<std::string, DenseMatrix> tensors;
    std::string word, name, file;
    while (manifest >> word >> name >> file) {
        if (word != "tensor") {
            throw std::runtime_error("checkpoint " + dir + ": unexpected manifest line '" + word +
                                     "'");
        }
        tensors[name] = read_matrix_binary(dir + "/" + file);
    }
    ModelParams params;
    params.use_tanh = tanh_flag != 0;
    const auto take_weight = [&](const std::string& n) {
        auto it = tensors.find(n);
        if (it == tensors.end()) {
            throw std::runtime_error("checkpoint " + dir + ": missing tensor " + n);
        }
        return std::move(it->second);
    };
    const auto take_bias = [&](const std::string& n) {
        DenseMatrix m = take_weight(n);
        if (m.rows() != 1) {
            throw std::runtime_error("checkpoint " + dir + ": bias " + n + " must have one row");
        }
        return m.data();
    };
    params.encoder.weight = take_weight("encoder.weight");
    params.encoder.bias = take_bias("encoder.bias");
    params.point_head.weight = take_weight("point_head.weight");
    params.point_head.bias = take_bias("point_head.bias");
    params.image_head.weight = take_weight("image_head.weight");
    params.image_head.bias = take_bias("image_head.bias");
    for (const auto* head : {&params.encoder, &params.point_head, &params.image_head}) {
        if (head->bias.size() != head->weight.cols()) {
            throw std::runtime_error("checkpoint " + dir + ": bias length does not match weight");
        }
    }
    return params;
}

}  // namespace xmd
