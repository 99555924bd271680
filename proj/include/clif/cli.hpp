#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clif/learners.hpp"
#include "clif/protocol.hpp"
#include "json.hpp"

namespace clif::cli {

inline constexpr const char* kEngineVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "CLIF_OUTPUT_ROOT";
inline constexpr const char* kDefaultOutputRoot = "runs";

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// An invalid configuration. The message names the offending field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string run_id;
    std::string benchmark;                  // as written in the config
    std::filesystem::path benchmark_path;  // resolved against the config file
    LearnerConfig learner;
    nlohmann::json stream = nlohmann::json::object();  // overrides of the manifest's stream
    bool fewshot_curve = false;
    std::vector<std::uint64_t> seeds;  // empty: 1..stream.seeds
    std::optional<std::filesystem::path> out;
};

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json learner_to_json(const LearnerConfig& c);
// Unknown keys throw ConfigError.
LearnerConfig learner_from_json(const nlohmann::json& j, LearnerConfig base = {});

// The manifest's stream with the config's overrides applied and validated.
StreamSpec resolve_stream(const StreamSpec& manifest, const RunConfig& config);
nlohmann::json stream_to_json(const StreamSpec& s);

// "1,2,3" -> {1, 2, 3}. Throws ConfigError.
std::vector<std::uint64_t> parse_seed_list(const std::string& s);

/// The persisted result of one run.
struct RunRecord {
    std::string engine_version = kEngineVersion;
    std::string run_id;
    std::string algorithm;
    std::string benchmark;
    std::string manifest_hash;
    std::string config_hash;
    nlohmann::json config;  // canonical echo
    std::size_t k = 0;
    std::vector<SeedResult> seeds;
    MetricsReport report;
    double wall_clock_seconds = 0.0;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);
};

RunRecord load_record(const std::filesystem::path& path);

// Hex FNV-1a of the compact dump.
std::string json_hash(const nlohmann::json& j);

struct RunOptions {
    std::size_t parallel = 1;
    std::filesystem::path scratch;  // worker files; required when parallel > 1
};

// Loads the benchmark, runs every seed and assembles the record.
RunRecord execute(const RunConfig& config, const RunOptions& options = {});

// Fixed header: run_id,algorithm,seed,s_inst,s_final,s_fs,forgetting.
// One row per seed, then "mean" and "std" rows. Percent, two decimals.
std::string metrics_csv(const RunRecord& record);

struct Table {
    std::string text;
    std::string csv;
    std::vector<std::string> warnings;
};

// One row per record. Improvements use the best baseline of each metric.
Table report_table(std::span<const RunRecord> records, std::span<const RunRecord> baselines);

// Seed-mean few-shot accuracy after each upstream task. Throws
// std::runtime_error when the record has no curve.
std::string curve_csv(const RunRecord& record);
// Seed-mean few-shot accuracy per record, ascending in k.
std::string k_series_csv(std::span<const RunRecord> records);

/// Entry point of the clif tool.
int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace clif::cli
