#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "xmd/synth.hpp"
#include "xmd/trainer.hpp"

namespace xmd {

/// Flat "section.key = value" config. '#' starts a comment (full line or
/// trailing), blank lines are ignored, duplicate keys are an error. Values are
/// plain tokens; typed access happens at lookup time.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(std::string_view text, const std::string& origin = "<string>");

    bool has(const std::string& key) const;
    void set(const std::string& key, std::string value);

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;  // true/false/on/off/1/0

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

/// Everything one run needs: the synthetic world, the training recipe and the
/// probe settings. Assembled from a Config with defaults filled in; unknown
/// keys are rejected so typos fail loudly.
struct RunConfig {
    Scenario scenario;
    std::string scenario_preset = "nuscenes16";
    TrainOptions train;
    bool balance_enabled = true;  // off demotes the st variant to plain knn
    double probe_lambda = 1e-3;
    std::size_t probe_eval_batches = 4;
    std::uint64_t master_seed = 42;
    std::string output_dir = "out";

    /// Derives the purpose-keyed sub-seeds (scenario data vs parameter init)
    /// from master_seed. Call after any change to master_seed.
    void reseed();
};

RunConfig default_run_config();
RunConfig run_config_from(const Config& config);

/// cfg.train with the balance switch folded in: with balancing disabled the
/// st variant runs as knn (same mask, uniform anchor weights).
TrainOptions effective_train_options(const RunConfig& cfg);

/// Canonical "key = value" text of the effective settings, sorted by key, and
/// its FNV-1a64 fingerprint (16 hex digits). Written into CSV headers so a
/// result file names the exact configuration that produced it.
std::string canonical_config_text(const RunConfig& cfg);
std::string config_hash_hex(const RunConfig& cfg);

}  // namespace xmd
