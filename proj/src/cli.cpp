#include "xmd/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "xmd/matrix_io.hpp"

namespace fs = std::filesystem;

namespace xmd {

std::size_t thread_budget() {
    std::size_t n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("XMD_THREADS")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0') {
            std::cerr << "warning: ignoring non-numeric XMD_THREADS='" << env << "'\n";
        } else {
            n = v == 0 ? 1 : static_cast<std::size_t>(v);
        }
    }
    return n;
}

namespace {

/// Runs fn(0..tasks-1) on up to thread_budget() workers. Task outputs must be
/// written to per-task slots so results never depend on scheduling.
void run_parallel(std::size_t tasks, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(thread_budget(), tasks);
    if (workers <= 1) {
        for (std::size_t i = 0; i < tasks; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= tasks) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string format_sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3e", v);
    return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
    std::string variant = "all";  // slidr|alpha|knn|st|chain|all
    std::size_t seeds = 5;
    double epsilon = 1e-5;
    double tolerance = 1e-6;
};

DenseMatrix random_normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    DenseMatrix m(rows, cols);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

int cmd_gradcheck(const RunConfig& cfg, const GradcheckArgs& args, std::ostream& out) {
    std::vector<std::string> checks;
    if (args.variant == "all") {
        checks = {"slidr", "alpha", "knn", "st", "chain"};
    } else {
        checks = {args.variant};
    }
    out << "# gradcheck epsilon=" << format_double(args.epsilon)
        << " tolerance=" << format_double(args.tolerance) << '\n';
    out << "seed,check,max_rel_err,status\n";
    std::size_t failures = 0;

    for (std::size_t s = 0; s < args.seeds; ++s) {
        // A fresh random instance per seed: embeddings off the sphere, a
        // similarity bundle derived from random frozen features.
        const std::size_t m = 6 + 2 * (s % 3);
        const std::size_t e = 5;
        Rng rq = Rng::substream(cfg.master_seed, "gradcheck-q", s);
        Rng rk = Rng::substream(cfg.master_seed, "gradcheck-k", s);
        Rng rf = Rng::substream(cfg.master_seed, "gradcheck-f", s);
        const DenseMatrix q = random_normal_matrix(m, e, rq);
        const DenseMatrix k = random_normal_matrix(m, e, rk);
        const DenseMatrix feats = random_normal_matrix(m, 6, rf);
        const DenseMatrix alpha = rescale_unit_interval(superpixel_similarity(feats));
        const DenseMatrix mask = knn_mask(alpha, percent_to_k(20.0, m));
        const BalanceResult bal = balance_weights(alpha);
        const LossConfig lcfg{0.07, 1e-12};

        for (const std::string& check : checks) {
            double err = 0.0;
            if (check == "chain") {
                // Whole trainer backward: pooling, heads, encoder, tanh.
                Scenario scenario;
                scenario.num_classes = 3;
                scenario.class_proportions = {0.5, 0.3, 0.2};
                scenario.feature_dim = 5;
                scenario.point_dim = 4;
                scenario.superpixels_per_batch = 6;
                scenario.within_class_spread = 0.2;
                scenario.seed = Rng::substream(cfg.master_seed, "gradcheck-scn", s).next_u64();
                const SyntheticBatch batch = generate_batch(scenario, 0);
                TrainOptions opts;
                opts.variant = LossVariant::st;
                opts.k_percent = 20.0;
                opts.hidden_dim = 5;
                opts.embed_dim = 4;
                opts.use_tanh = true;
                Rng init = Rng::substream(cfg.master_seed, "gradcheck-init", s);
                ModelParams params;
                params.encoder = LinearHead::init(scenario.point_dim, opts.hidden_dim, init);
                params.point_head = LinearHead::init(opts.hidden_dim, opts.embed_dim, init);
                params.image_head = LinearHead::init(scenario.feature_dim, opts.embed_dim, init);
                params.use_tanh = true;
                err = trainer_gradient_check(batch, params, opts, args.epsilon);
            } else {
                LossInputs inputs;
                inputs.variant = variant_from_name(check);
                if (inputs.variant == LossVariant::alpha) inputs.alpha = &alpha;
                if (inputs.variant == LossVariant::knn || inputs.variant == LossVariant::st) {
                    inputs.mask = &mask;
                }
                if (inputs.variant == LossVariant::st) {
                    inputs.weights = bal.weights;
                    inputs.weight_sum = bal.weight_sum;
                }
                err = finite_difference_check(q, k, inputs, lcfg, args.epsilon).max_rel_error;
            }
            const bool ok = err < args.tolerance;
            if (!ok) ++failures;
            out << s << ',' << check << ',' << format_sci(err) << ',' << (ok ? "ok" : "FAIL")
                << '\n';
        }
    }
    out << "# " << (args.seeds * checks.size() - failures) << '/' << args.seeds * checks.size()
        << " checks passed\n";
    return failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const RunConfig& cfg, std::uint64_t batch_index, std::ostream& out) {
    SyntheticBatch batch = generate_batch(cfg.scenario, batch_index);
    if (cfg.train.granularity == Granularity::point) {
        const std::uint64_t cap_seed =
            Rng::substream(cfg.scenario.seed, "scene-cap", batch_index).next_u64();
        batch = to_point_granularity(batch, cfg.train.pair_cap, cap_seed);
    }
    fs::create_directories(cfg.output_dir);
    write_matrix_text_file(cfg.output_dir + "/features.txt", batch.superpixel_features);
    write_matrix_text_file(cfg.output_dir + "/points.txt", batch.point_features);

    std::ostringstream labels;
    for (std::size_t l : batch.class_labels) labels << l << '\n';
    write_text_file(cfg.output_dir + "/labels.txt", labels.str());

    std::ostringstream pairs;
    pairs << "granularity "
          << (batch.pair_set.granularity == Granularity::point ? "point" : "superpixel") << '\n';
    pairs << "groups " << batch.pair_set.num_groups << '\n';
    for (std::size_t g = 0; g < batch.pair_set.num_groups; ++g) {
        pairs << g << ':';
        for (std::size_t p : batch.pair_set.point_groups[g]) pairs << ' ' << p;
        pairs << " |";
        for (std::size_t px : batch.pair_set.pixel_groups[g]) pairs << ' ' << px;
        pairs << '\n';
    }
    write_text_file(cfg.output_dir + "/pairs.txt", pairs.str());

    std::map<std::size_t, std::size_t> histogram;
    for (std::size_t l : batch.class_labels) ++histogram[l];
    nlohmann::ordered_json j;
    j["groups"] = batch.pair_set.num_groups;
    j["points"] = batch.point_features.rows();
    j["classes_present"] = histogram.size();
    j["false_negative_rate"] = false_negative_rate(batch);
    nlohmann::ordered_json hist = nlohmann::ordered_json::object();
    for (const auto& [cls, count] : histogram) hist[std::to_string(cls)] = count;
    j["class_histogram"] = hist;
    write_text_file(cfg.output_dir + "/metrics.json", j.dump(2) + "\n");

    out << "synth: " << batch.pair_set.num_groups << " groups, " << batch.point_features.rows()
        << " points, " << histogram.size() << " classes present, false-negative rate "
        << format_double(false_negative_rate(batch)) << '\n';
    out << "wrote " << cfg.output_dir << "/{features,points,labels,pairs}.txt, metrics.json\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    const TrainOptions opts = effective_train_options(cfg);
    TrainResult result;
    try {
        result = train(cfg.scenario, opts);
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    fs::create_directories(cfg.output_dir);
    {
        std::ofstream hist(cfg.output_dir + "/history.csv");
        if (!hist) throw std::runtime_error("cannot open " + cfg.output_dir + "/history.csv");
        write_history_csv(hist, result.history, "config_hash=" + config_hash_hex(cfg));
    }
    save_checkpoint(cfg.output_dir + "/checkpoint", result.params);
    write_text_file(cfg.output_dir + "/config.txt", canonical_config_text(cfg));

    out << "trained " << result.history.size() << " steps (variant "
        << variant_name(opts.variant) << "): loss " << format_double(result.history.front().loss)
        << " -> " << format_double(result.history.back().loss) << '\n';
    out << "wrote " << cfg.output_dir << "/history.csv and " << cfg.output_dir << "/checkpoint\n";
    return 0;
}

// ---------------------------------------------------------------------------
// compare

void append_metrics_columns(std::ostream& csv, const PipelineResult& r) {
    csv << format_double(r.final_loss) << ',' << format_double(r.probe.accuracy) << ','
        << format_double(r.minority_recall) << ',' << format_double(r.majority_recall) << ','
        << format_double(r.uniformity_value) << ',' << format_double(r.tolerance_value) << '\n';
}

int cmd_compare(const RunConfig& cfg, std::ostream& out) {
    struct Cell {
        const char* name;
        LossVariant variant;
        double k_percent;
    };
    // 2x2 ablation: masking off/on x balancing off/on. "balance" keeps the
    // full denominator (k = 0) so the weights are the only change.
    const Cell cells[4] = {
        {"base", LossVariant::slidr, 0.0},
        {"mask", LossVariant::knn, cfg.train.k_percent},
        {"balance", LossVariant::st, 0.0},
        {"st", LossVariant::st, cfg.train.k_percent},
    };
    std::vector<PipelineResult> results(4);
    run_parallel(4, [&](std::size_t i) {
        TrainOptions opts = cfg.train;
        opts.variant = cells[i].variant;
        opts.k_percent = cells[i].k_percent;
        results[i] = run_pipeline(cfg, opts, cells[i].name);
    });

    std::ostringstream csv;
    csv << "# config_hash=" << config_hash_hex(cfg) << '\n';
    csv << "cell,variant,k_percent,balanced,final_loss,probe_accuracy,minority_recall,"
           "majority_recall,uniformity,tolerance\n";
    for (const auto& r : results) {
        csv << r.label << ',' << variant_name(r.variant) << ',' << format_double(r.k_percent)
            << ',' << (r.balanced ? "true" : "false") << ',';
        append_metrics_columns(csv, r);
    }
    fs::create_directories(cfg.output_dir);
    write_text_file(cfg.output_dir + "/compare.csv", csv.str());
    out << csv.str();
    return 0;
}

// ---------------------------------------------------------------------------
// sweep

std::vector<double> parse_grid(const std::string& text, const char* what) {
    std::vector<double> grid;
    std::istringstream in(text);
    std::string token;
    while (std::getline(in, token, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(token, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != token.size()) {
            throw std::invalid_argument(std::string(what) + ": cannot parse '" + token + "'");
        }
        grid.push_back(v);
    }
    if (grid.empty()) {
        throw std::invalid_argument(std::string(what) + ": empty grid");
    }
    return grid;
}

int cmd_sweep(const RunConfig& cfg, const std::vector<double>& alpha_grid,
              const std::vector<double>& k_grid, std::ostream& out) {
    struct Task {
        const char* sweep;
        double value;
        LossVariant variant;
    };
    std::vector<Task> tasks;
    for (double a : alpha_grid) tasks.push_back({"alpha_min", a, LossVariant::alpha});
    for (double k : k_grid) tasks.push_back({"k_percent", k, LossVariant::knn});

    std::vector<PipelineResult> results(tasks.size());
    run_parallel(tasks.size(), [&](std::size_t i) {
        TrainOptions opts = cfg.train;
        opts.variant = tasks[i].variant;
        if (tasks[i].variant == LossVariant::alpha) {
            opts.alpha_min = tasks[i].value;
        } else {
            opts.k_percent = tasks[i].value;
        }
        results[i] = run_pipeline(cfg, opts,
                                  std::string(tasks[i].sweep) + "=" +
                                      format_double(tasks[i].value));
    });

    std::ostringstream csv;
    csv << "# config_hash=" << config_hash_hex(cfg) << '\n';
    csv << "sweep,value,variant,final_loss,probe_accuracy,minority_recall,majority_recall,"
           "uniformity,tolerance\n";
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        csv << tasks[i].sweep << ',' << format_double(tasks[i].value) << ','
            << variant_name(tasks[i].variant) << ',';
        append_metrics_columns(csv, results[i]);
    }
    fs::create_directories(cfg.output_dir);
    write_text_file(cfg.output_dir + "/sweep.csv", csv.str());
    out << csv.str();
    return 0;
}

// ---------------------------------------------------------------------------
// probe

int cmd_probe(const RunConfig& cfg, const std::string& checkpoint_dir, std::ostream& out) {
    const ModelParams params = load_checkpoint(checkpoint_dir);
    const auto [embeddings, labels] = build_eval_embeddings(cfg, params);
    const ProbeReport report =
        linear_probe(embeddings, labels, cfg.probe_lambda,
                     Rng::substream(cfg.master_seed, "probe-split-root").next_u64());
    const auto [minority, majority] = minority_majority_split(cfg.scenario.class_proportions);

    fs::create_directories(cfg.output_dir);
    write_text_file(cfg.output_dir + "/probe.json", probe_report_json(report));

    out << "probe: accuracy " << format_double(report.accuracy) << " on " << report.test_size
        << " held-out samples\n";
    out << "minority mean recall " << format_double(mean_recall_over(report, minority))
        << ", majority mean recall " << format_double(mean_recall_over(report, majority)) << '\n';
    out << "uniformity " << format_double(uniformity(embeddings)) << ", tolerance "
        << format_double(tolerance(embeddings, labels)) << '\n';
    if (!report.dropped_classes.empty()) {
        out << "dropped classes (fewer than 2 samples):";
        for (std::size_t c : report.dropped_classes) out << ' ' << c;
        out << '\n';
    }
    out << "wrote " << cfg.output_dir << "/probe.json\n";
    return 0;
}

}  // namespace

std::pair<DenseMatrix, std::vector<std::size_t>> build_eval_embeddings(const RunConfig& cfg,
                                                                       const ModelParams& params) {
    // Held-out batch indices far above anything the trainer cycles through.
    constexpr std::uint64_t kEvalOffset = 1000000;
    std::vector<DenseMatrix> chunks;
    std::vector<std::size_t> labels;
    std::size_t total = 0;
    for (std::size_t b = 0; b < cfg.probe_eval_batches; ++b) {
        const SyntheticBatch batch = generate_batch(cfg.scenario, kEvalOffset + b);
        ForwardCache cache = forward(batch, params);
        total += cache.q_raw.rows();
        labels.insert(labels.end(), batch.class_labels.begin(), batch.class_labels.end());
        chunks.push_back(std::move(cache.q_raw));
    }
    DenseMatrix embeddings(total, chunks.front().cols());
    std::size_t offset = 0;
    for (const auto& chunk : chunks) {
        std::copy(chunk.data().begin(), chunk.data().end(), embeddings.data().begin() + offset);
        offset += chunk.data().size();
    }
    return {std::move(embeddings), std::move(labels)};
}

PipelineResult run_pipeline(const RunConfig& cfg, const TrainOptions& opts,
                            const std::string& label) {
    PipelineResult r;
    r.label = label;
    r.variant = opts.variant;
    r.k_percent = opts.k_percent;
    r.alpha_min = opts.alpha_min;
    r.balanced = opts.variant == LossVariant::st;

    const TrainResult trained = train(cfg.scenario, opts);
    r.initial_loss = trained.history.front().loss;
    r.final_loss = trained.history.back().loss;

    const auto [embeddings, labels] = build_eval_embeddings(cfg, trained.params);
    r.probe = linear_probe(embeddings, labels, cfg.probe_lambda,
                           Rng::substream(cfg.master_seed, "probe-split-root").next_u64());
    const auto [minority, majority] = minority_majority_split(cfg.scenario.class_proportions);
    r.minority_recall = mean_recall_over(r.probe, minority);
    r.majority_recall = mean_recall_over(r.probe, majority);
    r.uniformity_value = uniformity(embeddings);
    r.tolerance_value = tolerance(embeddings, labels);
    return r;
}

namespace {

struct CommonFlags {
    std::string config;
    std::string out;
    std::string variant;
    std::string balance;
    std::string granularity;
    std::uint64_t seed = 0;
    double k_percent = 0.0;
    double alpha_min = 0.0;
    double temperature = 0.0;
};

void add_common_options(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config, "flat 'key = value' config file");
    sub->add_option("--seed", f.seed, "master seed (overrides run.seed)");
    sub->add_option("--out", f.out, "output directory (overrides run.out)");
    sub->add_option("--variant", f.variant, "loss variant")
        ->check(CLI::IsMember({"slidr", "alpha", "knn", "st"}));
    sub->add_option("--k-percent", f.k_percent,
                    "share of most-similar negatives to exclude, in percent");
    sub->add_option("--alpha-min", f.alpha_min, "similarity floor for the alpha variant");
    sub->add_option("--balance", f.balance, "anchor balancing")
        ->check(CLI::IsMember({"on", "off", "paper", "conventional"}));
    sub->add_option("--granularity", f.granularity, "correspondence granularity")
        ->check(CLI::IsMember({"superpixel", "point"}));
    sub->add_option("--temperature", f.temperature, "logit temperature (0 = granularity default)");
}

RunConfig assemble_config(const CLI::App* sub, const CommonFlags& f) {
    RunConfig cfg =
        f.config.empty() ? default_run_config() : run_config_from(Config::parse_file(f.config));
    if (sub->count("--seed")) {
        cfg.master_seed = f.seed;
        cfg.reseed();
    }
    if (sub->count("--out")) cfg.output_dir = f.out;
    if (sub->count("--variant")) cfg.train.variant = variant_from_name(f.variant);
    if (sub->count("--k-percent")) cfg.train.k_percent = f.k_percent;
    if (sub->count("--alpha-min")) cfg.train.alpha_min = f.alpha_min;
    if (sub->count("--temperature")) cfg.train.temperature = f.temperature;
    if (sub->count("--balance")) {
        if (f.balance == "off") {
            cfg.balance_enabled = false;
        } else {
            cfg.balance_enabled = true;
            cfg.train.balance_mode = f.balance == "conventional"
                                         ? BalanceNormalization::conventional
                                         : BalanceNormalization::paper;
        }
    }
    if (sub->count("--granularity")) {
        cfg.train.granularity =
            f.granularity == "point" ? Granularity::point : Granularity::superpixel;
    }
    cfg.train.validate();
    return cfg;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out) {
    CLI::App app{"desk-scale cross-modal contrastive distillation bench"};
    app.require_subcommand(1);

    int rc = 0;

    CommonFlags gc_flags;
    GradcheckArgs gc_args;
    CLI::App* gradcheck = app.add_subcommand(
        "gradcheck", "finite-difference audit of every analytic gradient path");
    add_common_options(gradcheck, gc_flags);
    gradcheck->add_option("--check", gc_args.variant, "which gradient path to audit")
        ->check(CLI::IsMember({"slidr", "alpha", "knn", "st", "chain", "all"}));
    gradcheck->add_option("--seeds", gc_args.seeds, "number of random instances per check");
    gradcheck->add_option("--epsilon", gc_args.epsilon, "central-difference step");
    gradcheck->add_option("--tolerance", gc_args.tolerance, "max relative error accepted");
    gradcheck->callback([&] {
        rc = cmd_gradcheck(assemble_config(gradcheck, gc_flags), gc_args, out);
    });

    CommonFlags synth_flags;
    std::uint64_t batch_index = 0;
    CLI::App* synth =
        app.add_subcommand("synth", "generate one synthetic batch and dump it with stats");
    add_common_options(synth, synth_flags);
    synth->add_option("--batch-index", batch_index, "which batch of the scenario to draw");
    synth->callback([&] {
        rc = cmd_synth(assemble_config(synth, synth_flags), batch_index, out);
    });

    CommonFlags train_flags;
    CLI::App* train_cmd =
        app.add_subcommand("train", "train the point encoder and heads on the scenario");
    add_common_options(train_cmd, train_flags);
    train_cmd->callback([&] { rc = cmd_train(assemble_config(train_cmd, train_flags), out); });

    CommonFlags compare_flags;
    CLI::App* compare = app.add_subcommand(
        "compare", "2x2 ablation grid: {plain, masked} x {unbalanced, balanced}");
    add_common_options(compare, compare_flags);
    compare->callback([&] { rc = cmd_compare(assemble_config(compare, compare_flags), out); });

    CommonFlags sweep_flags;
    std::string alpha_grid_text = "0,0.2,0.5,0.8";
    std::string k_grid_text = "1,5,10";
    CLI::App* sweep = app.add_subcommand(
        "sweep", "sensitivity sweep over the similarity floor and the exclusion share");
    add_common_options(sweep, sweep_flags);
    sweep->add_option("--alpha-grid", alpha_grid_text, "comma list of alpha_min values");
    sweep->add_option("--k-grid", k_grid_text, "comma list of k percentages");
    sweep->callback([&] {
        rc = cmd_sweep(assemble_config(sweep, sweep_flags),
                       parse_grid(alpha_grid_text, "--alpha-grid"),
                       parse_grid(k_grid_text, "--k-grid"), out);
    });

    CommonFlags probe_flags;
    std::string checkpoint_dir;
    CLI::App* probe =
        app.add_subcommand("probe", "linear-probe a trained checkpoint on held-out batches");
    add_common_options(probe, probe_flags);
    probe->add_option("--checkpoint", checkpoint_dir, "checkpoint directory from 'train'")
        ->required();
    probe->callback(
        [&] { rc = cmd_probe(assemble_config(probe, probe_flags), checkpoint_dir, out); });

    std::vector<std::string> argv_copy(args);
    std::reverse(argv_copy.begin(), argv_copy.end());
    argv_copy.pop_back();  // program name
    try {
        app.parse(argv_copy);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return rc;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run_cli(args, std::cout);
}

}  // namespace xmd
