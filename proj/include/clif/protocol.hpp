#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clif/datagen.hpp"
#include "clif/learners.hpp"
#include "json.hpp"

namespace clif {

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Test accuracy of every upstream task after each training checkpoint.
///
/// Sequential runs fill a lower triangle: row i holds tasks 0..i. A joint
/// run has one checkpoint, so its single row covers every task.
class AccuracyMatrix {
public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(std::vector<std::string> tasks, bool joint = false);

    // Appends the next checkpoint's row. Throws ProtocolError on a wrong length.
    void add_row(std::vector<double> row);

    const std::vector<std::string>& tasks() const { return tasks_; }
    std::size_t size() const { return tasks_.size(); }
    bool joint() const { return joint_; }
    bool complete() const { return rows_.size() == (joint_ ? 1 : tasks_.size()); }
    const std::vector<std::vector<double>>& rows() const { return rows_; }
    // Absent when task j was not trained by checkpoint i.
    std::optional<double> at(std::size_t i, std::size_t j) const;

    // Accuracy on each task right after training on it.
    std::vector<double> instant() const;
    // Accuracy on each task after the last checkpoint.
    std::vector<double> final_row() const;

    nlohmann::json to_json() const;
    static AccuracyMatrix from_json(const nlohmann::json& j);

    friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

private:
    std::vector<std::string> tasks_;
    std::vector<std::vector<double>> rows_;
    bool joint_ = false;
};

/// Few-shot accuracies keyed by task, one entry per resample.
using FewshotAccuracies = std::map<std::string, std::vector<double>>;

/// Headline numbers of one seed. Accuracies are in [0, 1].
struct Metrics {
    double s_inst = 0.0;
    std::optional<double> s_final;  // absent for single-task learners
    std::optional<double> forgetting;
    std::optional<double> s_fs;     // absent without few-shot tasks
    std::map<std::string, double> inst_per_task;
    std::map<std::string, double> final_per_task;
    std::map<std::string, double> fs_per_task;

    nlohmann::json to_json() const;
    static Metrics from_json(const nlohmann::json& j);
    friend bool operator==(const Metrics&, const Metrics&) = default;
};

// s_inst, s_final and forgetting from the matrix; s_fs averaged over every
// (task, resample) pair. `report_final` false leaves final and forgetting
// absent.
Metrics aggregate_metrics(const AccuracyMatrix& matrix, const FewshotAccuracies& fewshot, bool report_final = true);

// (s - best) / best * 100 where best is the largest baseline. Percent.
std::optional<double> relative_improvement(double s, std::span<const double> baselines);

struct Summary {
    double mean = 0.0;
    double std = 0.0;  // population
};

Summary summarize(std::span<const double> values);

/// A seed-averaged report, with optional improvements over baselines.
struct MetricsReport {
    std::vector<Metrics> per_seed;
    Summary s_inst;
    std::optional<Summary> s_final;
    std::optional<Summary> forgetting;
    std::optional<Summary> s_fs;
    std::optional<double> delta_inst;  // percent
    std::optional<double> delta_fs;

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

MetricsReport build_report(std::vector<Metrics> per_seed);

/// The values a baseline contributes to improvement columns.
struct BaselineValues {
    std::string name;
    std::optional<double> s_inst;
    std::optional<double> s_fs;
};

// Fills delta_inst and delta_fs against the best baseline of each metric.
// Both stay empty when no baseline provides the metric.
void apply_baselines(MetricsReport& report, std::span<const BaselineValues> baselines);

/// Frozen features of every task in a benchmark.
struct PreparedBenchmark {
    const Benchmark* benchmark = nullptr;
    std::map<std::string, PreparedTask> tasks;

    const PreparedTask& task(const std::string& name) const;
};

PreparedBenchmark prepare_benchmark(const FrozenEncoder& encoder, const Benchmark& benchmark);

struct FewshotResult {
    FewshotAccuracies accuracies;
    std::vector<std::string> warnings;
};

// Episode seeds depend only on the task and resample index, so every learner
// and run sees the same episodes; adaptation seeds mix in `run_seed`.
std::uint64_t episode_seed(std::size_t resample);
std::uint64_t adaptation_seed(std::uint64_t run_seed, std::size_t resample, const std::string& task);

FewshotResult evaluate_fewshot(const Learner& learner, const PreparedBenchmark& prepared, const StreamSpec& stream,
                               std::uint64_t run_seed);

/// Mean few-shot accuracy after one upstream checkpoint.
struct CurvePoint {
    std::size_t upstream_index = 0;  // tasks trained so far
    std::string task;
    double fs_accuracy = 0.0;
};

struct StreamOptions {
    bool fewshot_curve = false;
};

struct StreamResult {
    AccuracyMatrix matrix;
    std::vector<CurvePoint> curve;
    // The curve's last evaluation, which is the post-stream one.
    std::optional<FewshotResult> final_fewshot;
};

// Trains `learner` on `order` task by task, filling one matrix row per task.
// Joint learners train once on the whole stream. Unknown names throw before
// any training.
StreamResult run_stream(Learner& learner, const PreparedBenchmark& prepared, const StreamSpec& stream,
                        const std::vector<std::string>& order, std::uint64_t run_seed, StreamOptions options = {});

// Upstream tasks sorted by the few-shot accuracy a fresh learner reaches
// after training on that task alone. Ties by name, then reversed when
// `decreasing`.
std::vector<std::string> relevance_order(const FrozenEncoder& encoder, const LearnerConfig& config,
                                         const PreparedBenchmark& prepared, const StreamSpec& stream,
                                         std::uint64_t seed, bool decreasing,
                                         std::map<std::string, double>* relevance = nullptr);

// Sorting rule used by relevance_order; exposed for testing.
std::vector<std::string> order_by_score(const std::map<std::string, double>& scores, bool decreasing);

/// Everything one seed of an experiment produces.
struct SeedResult {
    std::uint64_t seed = 0;
    std::vector<std::string> order;
    AccuracyMatrix matrix;
    FewshotAccuracies fewshot;
    std::vector<CurvePoint> curve;
    std::map<std::string, double> relevance;  // relevance orders only
    Metrics metrics;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
    static SeedResult from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
    LearnerConfig learner;
    StreamSpec stream;
    StreamOptions options;
};

// One full pipeline for one seed: order, stream training, few-shot evaluation.
SeedResult run_seed(const FrozenEncoder& encoder, const PreparedBenchmark& prepared, const ExperimentConfig& config,
                    std::uint64_t seed);

/// Runs the seeds in order. A failing seed is rethrown naming the seed.
struct Experiment {
    std::vector<SeedResult> seeds;
    MetricsReport report;
};

Experiment repeat_over_seeds(const FrozenEncoder& encoder, const PreparedBenchmark& prepared,
                             const ExperimentConfig& config, std::span<const std::uint64_t> seeds);

// Seeds 1..n.
std::vector<std::uint64_t> default_seeds(std::size_t n);

// Accuracy in [0, 1] as a percentage with two decimals.
std::string format_percent(double accuracy);

}  // namespace clif
