#include "xmd/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "xmd/matrix_io.hpp"
#include "xmd/rng.hpp"

namespace xmd {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

}  // namespace

Config Config::parse_string(std::string_view text, const std::string& origin) {
    Config cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": expected 'key = value', got '" + stripped + "'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": empty key or value");
        }
        if (cfg.values_.count(key)) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": duplicate key '" + key + "'");
        }
        cfg.values_[key] = value;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

void Config::set(const std::string& key, std::string value) { values_[key] = std::move(value); }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(it->second, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != it->second.size()) {
        throw std::invalid_argument("config " + key + ": cannot parse '" + it->second +
                                    "' as a number");
    }
    return v;
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(get_u64(key, fallback));
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(it->second, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != it->second.size()) {
        throw std::invalid_argument("config " + key + ": cannot parse '" + it->second +
                                    "' as an unsigned integer");
    }
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw std::invalid_argument("config " + key + ": cannot parse '" + v + "' as a boolean");
}

void RunConfig::reseed() {
    scenario.seed = Rng::substream(master_seed, "data").next_u64();
    train.seed = Rng::substream(master_seed, "train").next_u64();
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.scenario = nuscenes_like_scenario(/*superpixels_per_batch=*/256, /*feature_dim=*/16,
                                          /*point_dim=*/16, /*seed=*/0);
    cfg.train = TrainOptions{};
    cfg.reseed();
    return cfg;
}

RunConfig run_config_from(const Config& config) {
    RunConfig cfg = default_run_config();
    std::set<std::string> seen;
    const auto consume = [&](const std::string& key) {
        seen.insert(key);
        return key;
    };

    cfg.master_seed = config.get_u64(consume("run.seed"), cfg.master_seed);
    cfg.output_dir = config.get_string(consume("run.out"), cfg.output_dir);

    const std::string preset = config.get_string(consume("scenario.preset"), "nuscenes16");
    const std::size_t classes =
        config.get_size(consume("scenario.classes"), preset == "nuscenes16" ? 16 : 4);
    if (preset == "nuscenes16") {
        if (classes != 16) {
            throw std::invalid_argument("config scenario.classes: nuscenes16 preset is 16-class");
        }
        cfg.scenario.class_proportions = nuscenes_like_proportions();
    } else if (preset == "uniform") {
        cfg.scenario.class_proportions.assign(classes, 1.0 / static_cast<double>(classes));
    } else {
        throw std::invalid_argument("config scenario.preset: unknown preset '" + preset +
                                    "' (expected nuscenes16|uniform)");
    }
    cfg.scenario.num_classes = classes;
    cfg.scenario.feature_dim = config.get_size(consume("scenario.feature_dim"), 16);
    cfg.scenario.point_dim = config.get_size(consume("scenario.point_dim"), 16);
    cfg.scenario.cluster_separation = config.get_double(consume("scenario.separation"), 1.0);
    // 0 = pick the spread that lands same-class cosines near 0.9.
    const double spread = config.get_double(consume("scenario.spread"), 0.0);
    cfg.scenario.within_class_spread =
        spread > 0.0 ? spread
                     : cfg.scenario.cluster_separation /
                           (3.0 * std::sqrt(static_cast<double>(cfg.scenario.feature_dim)));
    cfg.scenario.superpixels_per_batch = config.get_size(consume("scenario.superpixels"), 256);
    cfg.scenario.points_per_superpixel_min = config.get_size(consume("scenario.points_min"), 2);
    cfg.scenario.points_per_superpixel_max = config.get_size(consume("scenario.points_max"), 6);
    cfg.scenario_preset = preset;

    cfg.train.variant = variant_from_name(config.get_string(consume("loss.variant"), "st"));
    cfg.train.temperature = config.get_double(consume("loss.temperature"), 0.0);
    cfg.train.k_percent = config.get_double(consume("loss.k_percent"), 1.0);
    cfg.train.alpha_min = config.get_double(consume("loss.alpha_min"), 0.0);
    cfg.train.rescale_alpha = config.get_bool(consume("loss.rescale"), true);
    const std::string balance = config.get_string(consume("loss.balance"), "paper");
    if (balance == "off") {
        cfg.balance_enabled = false;
    } else if (balance == "on" || balance == "paper") {
        cfg.balance_enabled = true;
        cfg.train.balance_mode = BalanceNormalization::paper;
    } else if (balance == "conventional") {
        cfg.balance_enabled = true;
        cfg.train.balance_mode = BalanceNormalization::conventional;
    } else {
        throw std::invalid_argument("config loss.balance: expected on|off|paper|conventional");
    }

    const std::string gran = config.get_string(consume("train.granularity"), "superpixel");
    if (gran == "superpixel") {
        cfg.train.granularity = Granularity::superpixel;
    } else if (gran == "point") {
        cfg.train.granularity = Granularity::point;
    } else {
        throw std::invalid_argument("config train.granularity: expected superpixel|point");
    }
    cfg.train.pair_cap = config.get_size(consume("train.pair_cap"), 4096);
    cfg.train.total_steps = config.get_size(consume("train.steps"), 200);
    cfg.train.scenes = config.get_size(consume("train.scenes"), 1);
    cfg.train.lr0 = config.get_double(consume("train.lr0"), 0.5);
    cfg.train.momentum = config.get_double(consume("train.momentum"), 0.9);
    cfg.train.dampening = config.get_double(consume("train.dampening"), 0.1);
    cfg.train.weight_decay = config.get_double(consume("train.weight_decay"), 1e-4);
    cfg.train.hidden_dim = config.get_size(consume("train.hidden_dim"), 32);
    cfg.train.embed_dim = config.get_size(consume("train.embed_dim"), 16);
    cfg.train.use_tanh = config.get_bool(consume("train.tanh"), false);

    cfg.probe_lambda = config.get_double(consume("probe.lambda"), 1e-3);
    cfg.probe_eval_batches = config.get_size(consume("probe.eval_batches"), 4);

    for (const auto& [key, value] : config.entries()) {
        if (!seen.count(key)) {
            throw std::invalid_argument("unknown config key '" + key + "'");
        }
    }
    cfg.reseed();
    cfg.scenario.validate();
    cfg.train.validate();
    if (!(cfg.probe_lambda >= 0.0)) {
        throw std::invalid_argument("config probe.lambda: must be >= 0");
    }
    if (cfg.probe_eval_batches == 0) {
        throw std::invalid_argument("config probe.eval_batches: must be positive");
    }
    return cfg;
}

std::string canonical_config_text(const RunConfig& cfg) {
    // Sorted key = value lines of every setting that influences results
    // (run.out deliberately excluded: it moves files, not numbers).
    std::map<std::string, std::string> kv;
    kv["loss.alpha_min"] = format_double(cfg.train.alpha_min);
    kv["loss.balance"] =
        !cfg.balance_enabled
            ? "off"
            : (cfg.train.balance_mode == BalanceNormalization::paper ? "paper" : "conventional");
    kv["loss.k_percent"] = format_double(cfg.train.k_percent);
    kv["loss.rescale"] = cfg.train.rescale_alpha ? "true" : "false";
    kv["loss.temperature"] = format_double(cfg.train.temperature);
    kv["loss.variant"] = std::string(variant_name(cfg.train.variant));
    kv["probe.eval_batches"] = std::to_string(cfg.probe_eval_batches);
    kv["probe.lambda"] = format_double(cfg.probe_lambda);
    kv["run.seed"] = std::to_string(cfg.master_seed);
    kv["scenario.classes"] = std::to_string(cfg.scenario.num_classes);
    kv["scenario.feature_dim"] = std::to_string(cfg.scenario.feature_dim);
    kv["scenario.point_dim"] = std::to_string(cfg.scenario.point_dim);
    kv["scenario.points_max"] = std::to_string(cfg.scenario.points_per_superpixel_max);
    kv["scenario.points_min"] = std::to_string(cfg.scenario.points_per_superpixel_min);
    kv["scenario.preset"] = cfg.scenario_preset;
    kv["scenario.separation"] = format_double(cfg.scenario.cluster_separation);
    kv["scenario.spread"] = format_double(cfg.scenario.within_class_spread);
    kv["scenario.superpixels"] = std::to_string(cfg.scenario.superpixels_per_batch);
    kv["train.dampening"] = format_double(cfg.train.dampening);
    kv["train.embed_dim"] = std::to_string(cfg.train.embed_dim);
    kv["train.granularity"] =
        cfg.train.granularity == Granularity::point ? "point" : "superpixel";
    kv["train.hidden_dim"] = std::to_string(cfg.train.hidden_dim);
    kv["train.lr0"] = format_double(cfg.train.lr0);
    kv["train.momentum"] = format_double(cfg.train.momentum);
    kv["train.pair_cap"] = std::to_string(cfg.train.pair_cap);
    kv["train.scenes"] = std::to_string(cfg.train.scenes);
    kv["train.steps"] = std::to_string(cfg.train.total_steps);
    kv["train.tanh"] = cfg.train.use_tanh ? "true" : "false";
    kv["train.weight_decay"] = format_double(cfg.train.weight_decay);
    std::string text;
    for (const auto& [key, value] : kv) {
        text += key;
        text += " = ";
        text += value;
        text += '\n';
    }
    return text;
}

TrainOptions effective_train_options(const RunConfig& cfg) {
    TrainOptions opts = cfg.train;
    if (!cfg.balance_enabled && opts.variant == LossVariant::st) {
        opts.variant = LossVariant::knn;
    }
    return opts;
}

std::string config_hash_hex(const RunConfig& cfg) {
    const std::uint64_t h = fnv1a64(canonical_config_text(cfg));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace xmd
