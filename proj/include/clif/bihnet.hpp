#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clif/adapter_model.hpp"
#include "clif/encoder.hpp"
#include "clif/numcore/graph.hpp"
#include "clif/rng.hpp"

namespace clif {

/// High-resource (mean over all examples) and few-shot (mean over K
/// sampled examples) task representations.
struct TaskRepresentation {
    Vec high;
    Vec few;
    std::size_t sample_size = 0;
};

// From precomputed per-example representations R(x, y).
TaskRepresentation compute_task_representation(std::span<const Vec> example_reps, std::size_t sample_size,
                                               std::uint64_t sample_seed);
TaskRepresentation compute_task_representation(const FrozenEncoder& encoder,
                                               std::span<const std::pair<std::string, std::string>> examples,
                                               std::size_t sample_size, std::uint64_t sample_seed);

// Mean of the selected rows; all rows when `indices` is empty.
Vec mean_representation(std::span<const Vec> reps, std::span<const std::size_t> indices = {});

/// Two-layer MLP mapping a task representation to the flat adapter vector:
/// W2 * tanh(W1 * z + b1) + b2.
class HyperNetwork {
public:
    explicit HyperNetwork(AdapterShape adapters, std::size_t hidden = 32, std::string prefix = "hnet");

    const AdapterShape& adapter_shape() const { return adapters_; }
    std::size_t input_dim() const { return adapters_.model_dim; }
    std::size_t hidden() const { return hidden_; }
    std::size_t output_dim() const { return adapters_.parameter_count(); }
    // (d + 1) * hidden + (hidden + 1) * P
    std::size_t parameter_count() const;

    const std::string& prefix() const { return prefix_; }
    std::string w1() const { return prefix_ + ".W1"; }
    std::string b1() const { return prefix_ + ".b1"; }
    std::string w2() const { return prefix_ + ".W2"; }
    std::string b2() const { return prefix_ + ".b2"; }

    // W1 ~ N(0, 1/d); W2 ~ N(0, (output_scale / sqrt(hidden))^2); biases zero.
    void init(num::ParamStore& store, Rng& rng, double output_scale = 1e-2) const;

    // z: rank-1 of length d or n x d. Returns n x P.
    num::Var generate(num::Graph& g, num::ParamStore& store, num::Var z) const;

    std::vector<double> generate_flat(const num::ParamStore& store, std::span<const double> z) const;
    AdapterWeights generate_weights(const num::ParamStore& store, std::span<const double> z) const;

private:
    AdapterShape adapters_;
    std::size_t hidden_;
    std::string prefix_;
};

struct MemoryEntry {
    std::string task;
    Vec z_high;
    std::vector<double> snapshot;  // empty until the first boundary after the task
};

/// Ordered store of high-resource representations and weight snapshots of
/// seen upstream tasks. Holds no raw examples.
class RepresentationMemory {
public:
    // Throws on a repeated task name.
    void add(const std::string& task, Vec z_high);
    void update(const std::string& task, Vec z_high);
    const MemoryEntry* find(const std::string& task) const;
    // Appends a complete entry as read back from disk.
    void restore(MemoryEntry entry) { entries_.push_back(std::move(entry)); }

    const std::vector<MemoryEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    // Recomputes every snapshot from the current hypernetwork.
    void snapshot(const HyperNetwork& hnet, const num::ParamStore& store);

    std::vector<std::uint8_t> serialize() const;
    static RepresentationMemory deserialize(std::vector<std::uint8_t> bytes);
    void save(const std::filesystem::path& path) const;
    static RepresentationMemory load(const std::filesystem::path& path);

private:
    std::vector<MemoryEntry> entries_;
};

struct RegConfig {
    double strength = 0.01;
    std::size_t prior_samples = 1;
};

// Indices of the prior tasks penalised at one step.
std::vector<std::size_t> sample_prior_tasks(std::size_t memory_size, std::size_t count, std::uint64_t step_seed);

/// Mean over sampled stored tasks j of ||g(z_h^j) - snapshot_j||^2; a zero
/// constant when the memory is empty or has no snapshots yet.
num::Var regularization_term(num::Graph& g, num::ParamStore& store, const HyperNetwork& hnet,
                             const RepresentationMemory& memory, const RegConfig& config, std::uint64_t step_seed);
double regularization_value(const num::ParamStore& store, const HyperNetwork& hnet,
                            const RepresentationMemory& memory, const RegConfig& config, std::uint64_t step_seed);

double squared_distance(std::span<const double> a, std::span<const double> b);

/// Prediction loss with adapters generated from z_h plus, when
/// `use_few` is set, the loss with adapters generated from z_f.
num::Var bilevel_loss(num::Graph& g, num::ParamStore& store, const HyperNetwork& hnet,
                      const FrozenEncoder& encoder, const TaskRepresentation& rep, num::Var pooled,
                      std::span<const std::size_t> targets, const LabelSet& labels, bool use_few = true,
                      InputStage stage = InputStage::Pooled);

// Prediction loss with adapters generated from a single representation.
num::Var generated_loss(num::Graph& g, num::ParamStore& store, const HyperNetwork& hnet,
                        const FrozenEncoder& encoder, num::Var z, num::Var pooled,
                        std::span<const std::size_t> targets, const LabelSet& labels,
                        InputStage stage = InputStage::Pooled);

}  // namespace clif
