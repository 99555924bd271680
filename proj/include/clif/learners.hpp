#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clif/adapter_model.hpp"
#include "clif/bihnet.hpp"
#include "clif/datagen.hpp"
#include "clif/encoder.hpp"
#include "clif/numcore/graph.hpp"
#include "clif/numcore/optim.hpp"

namespace clif {

enum class Algorithm {
    Majority,
    AdapterSingle,
    AdapterVanilla,
    AdapterEwc,
    AdapterMbpa,
    AdapterMtl,
    BihnetSingle,
    BihnetVanilla,
    BihnetEwc,
    BihnetReg,
    BihnetMtl,
    HnetReg,
};

std::string algorithm_name(Algorithm a);
Algorithm parse_algorithm(const std::string& s);
std::vector<Algorithm> all_algorithms();

enum class ModelKind {
    Majority,
    Direct,     // adapters are the trainable parameters
    Context,    // hypernetwork fed by context-predicted task representations
    Embedding,  // hypernetwork fed by trainable per-task embeddings
};

ModelKind model_kind(Algorithm a);
bool is_single_task(Algorithm a);
bool is_joint(Algorithm a);

// What few-shot adaptation of a hypernetwork learner fine-tunes.
enum class FewshotTarget { Hypernet, Adapters };

struct LearnerConfig {
    Algorithm algorithm = Algorithm::BihnetReg;
    double learning_rate = 1e-4;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 100;
    std::size_t patience = 3;
    std::size_t fewshot_epochs = 400;
    std::size_t replay_interval = 100;
    bool replay = true;  // MbPA++ only
    double ewc_lambda = 0.01;
    double ewc_decay = 1.0;
    std::size_t fisher_samples = 256;
    std::size_t mbpa_neighbors = 8;
    std::size_t mbpa_local_steps = 5;
    RegConfig reg;
    // K for z_f during upstream training.
    std::size_t upstream_sample_size = 10;
    // false realizes the "no few-shot representation" ablation.
    bool use_fewshot_repr = true;
    FewshotTarget fewshot_target = FewshotTarget::Hypernet;
    std::size_t adapter_hidden = 16;
    std::size_t head_hidden = 16;
    std::size_t hypernet_hidden = 32;
    double hypernet_output_scale = 1e-2;
    double embedding_init_std = 0.1;

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
};

/// Frozen features of one split: layer-0 outputs and label indices.
struct Split {
    std::vector<Vec> inputs;
    std::vector<std::size_t> targets;

    std::size_t size() const { return targets.size(); }
};

/// A task with every frozen quantity the learners need precomputed.
struct PreparedTask {
    std::string name;
    LabelSet labels;
    Split train;
    Split validation;
    Split test;
    std::vector<Vec> train_reps;  // R(x, y) per training example
};

PreparedTask prepare_task(const FrozenEncoder& encoder, const Task& task);
// Episode train examples as the train split; the source task's test split.
PreparedTask prepare_episode(const FrozenEncoder& encoder, const Episode& episode, const PreparedTask& source);

/// Trainable parameters at one point in training.
struct Checkpoint {
    std::map<std::string, num::Tensor> values;
    double validation_accuracy = 0.0;
    std::size_t epoch = 0;

    static Checkpoint capture(const num::ParamStore& store, double validation_accuracy, std::size_t epoch);
    void restore(num::ParamStore& store) const;

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(std::vector<std::uint8_t> bytes);
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

// Patience-based stopping on validation accuracy. Epochs count from 1.
class EarlyStopping {
public:
    EarlyStopping(std::size_t patience, std::size_t max_epochs) : patience_(patience), max_epochs_(max_epochs) {}

    // Records the epoch's accuracy; true when it is a new best.
    bool update(double validation_accuracy);
    bool should_stop() const { return since_best_ >= patience_ || epoch_ >= max_epochs_; }
    std::size_t epoch() const { return epoch_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best() const { return best_; }

private:
    std::size_t patience_;
    std::size_t max_epochs_;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t since_best_ = 0;
    double best_ = -1.0;
};

/// Running diagonal Fisher estimate with the anchor values it protects.
struct FisherState {
    std::map<std::string, num::Tensor> fisher;
    std::map<std::string, num::Tensor> anchor;

    bool empty() const { return fisher.empty(); }
    // (lambda / 2) * sum F (theta - theta*)^2 over parameters present in both.
    double penalty(const num::ParamStore& store, double lambda) const;
    // Adds lambda * F (theta - theta*) to the store gradients.
    void add_penalty_gradient(num::ParamStore& store, double lambda) const;
    // F <- decay * F + squares; anchor <- current values.
    void consolidate(const num::ParamStore& store, const std::map<std::string, num::Tensor>& mean_squared_grads,
                     double decay);
};

/// Every training example of every seen task, keyed by its frozen
/// last-layer activation.
class ExampleMemory {
public:
    struct Block {
        std::string task;
        LabelSet labels;
        Split train;
        std::vector<Vec> keys;
    };
    struct Neighbor {
        std::size_t block;
        std::size_t index;
        double distance;
    };

    void add(const FrozenEncoder& encoder, const PreparedTask& task);
    bool empty() const { return total_ == 0; }
    std::size_t size() const { return total_; }
    const std::vector<Block>& blocks() const { return blocks_; }

    // Maps a uniform draw in [0, size()) to its (block, index).
    std::pair<std::size_t, std::size_t> locate(std::size_t flat) const;
    // Ties broken by (block, index).
    std::vector<Neighbor> nearest(std::span<const double> key, std::size_t count) const;

private:
    std::vector<Block> blocks_;
    std::size_t total_ = 0;
};

// Frozen key used for retrieval: the encoder's final layer from h_1.
Vec retrieval_key(const FrozenEncoder& encoder, std::span<const double> h1);

struct TrainingLog {
    std::string task;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_validation = 0.0;
    std::size_t steps = 0;
};

/// One learner per run. Holds the trainable state for every algorithm and
/// dispatches on the configured tag.
class Learner {
public:
    Learner(const FrozenEncoder& encoder, LearnerConfig config, std::uint64_t seed);

    const LearnerConfig& config() const { return config_; }
    const FrozenEncoder& encoder() const { return *encoder_; }
    std::uint64_t seed() const { return seed_; }

    // Boundary hooks, then early-stopped training on one upstream task.
    void train_task(const PreparedTask& task);
    // One training phase over the union of the tasks.
    void train_joint(std::span<const PreparedTask* const> tasks);

    // Test accuracy on a seen task.
    double evaluate(const PreparedTask& task) const;
    double evaluate_split(const PreparedTask& task, const Split& split) const;
    // Accuracy of one example of a seen task.
    Prediction predict(const PreparedTask& task, std::span<const double> h1,
                       std::optional<std::size_t> target = std::nullopt) const;

    // Adapts a clone on the episode's train split and returns its accuracy
    // on the episode's test split. The learner is not modified.
    double fewshot_accuracy(const PreparedTask& episode, std::uint64_t adaptation_seed) const;

    std::uint64_t checksum() const;

    const num::ParamStore& store() const { return store_; }
    num::ParamStore& mutable_store() { return store_; }
    const RepresentationMemory& memory() const { return memory_; }
    const FisherState& fisher() const { return fisher_; }
    const ExampleMemory& examples() const { return examples_; }
    const std::vector<TrainingLog>& logs() const { return logs_; }
    const AdapterShape& adapter_shape() const { return shape_; }
    std::size_t trainable_parameters() const;

    // Adapter weights the learner would use for a seen task.
    AdapterWeights task_adapters(const PreparedTask& task) const;

private:
    void init_fresh(num::ParamStore& store, std::uint64_t init_seed) const;
    Vec task_vector(const num::ParamStore& store, const std::string& name) const;
    AdapterWeights adapters_for(const num::ParamStore& store, const std::string& task) const;
    double accuracy_with(const AdapterWeights& w, const PreparedTask& task, const Split& split) const;
    double mbpa_accuracy(const PreparedTask& task, const Split& split) const;
    void consolidate_fisher(const PreparedTask& task);
    void train_loop(std::span<const PreparedTask* const> tasks, std::span<const std::size_t> task_indices);

    const FrozenEncoder* encoder_;
    LearnerConfig config_;
    std::uint64_t seed_;
    AdapterShape shape_;
    HyperNetwork hnet_;
    num::ParamStore store_;
    num::ParamStore fresh_;  // initial state, kept for single-task resets
    RepresentationMemory memory_;
    std::map<std::string, Vec> z_high_;  // context learners, every seen task
    std::map<std::string, std::size_t> majority_;
    std::map<std::string, num::ParamStore> single_models_;
    FisherState fisher_;
    ExampleMemory examples_;
    std::vector<TrainingLog> logs_;
    std::size_t tasks_seen_ = 0;
    std::uint64_t global_step_ = 0;
};

// Most frequent label, lowest index on ties.
std::size_t majority_label(std::span<const std::size_t> targets, std::size_t num_classes);

}  // namespace clif
