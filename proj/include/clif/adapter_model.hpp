#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clif/encoder.hpp"
#include "clif/numcore/graph.hpp"
#include "clif/rng.hpp"

namespace clif {

struct AdapterShape {
    std::size_t model_dim = 64;
    std::size_t adapter_hidden = 16;
    std::size_t head_hidden = 16;
    std::size_t num_layers = 2;

    std::size_t layer_parameter_count() const;
    std::size_t head_parameter_count() const;
    // P = L * (d*r + r + r*d + d) + (d*h + h + h*d + d)
    std::size_t parameter_count() const;
    void validate() const;
};

/// Residual bottleneck MLP: x + up * relu(down * x + down_bias) + up_bias.
struct AdapterBlock {
    num::Tensor down;       // hidden x d
    num::Tensor down_bias;  // hidden
    num::Tensor up;         // d x hidden
    num::Tensor up_bias;    // d
};

struct AdapterWeights {
    std::vector<AdapterBlock> layers;
    AdapterBlock head;

    static AdapterWeights zeros(const AdapterShape& shape);
    // Flat layout: layer 0 (down, down_bias, up, up_bias), layer 1, ..., head.
    static AdapterWeights unflatten(const AdapterShape& shape, std::span<const double> flat);
    std::vector<double> flatten() const;
    AdapterShape shape() const;
};

// Down-projections N(0, 1/d), up-projections and biases zero: the block
// starts as the identity but receives gradient from the first step.
AdapterWeights init_adapters(const AdapterShape& shape, Rng& rng);

/// Candidate labels of a task with their frozen embeddings (C x d).
struct LabelSet {
    std::vector<std::string> labels;
    num::Tensor embeddings;

    std::size_t size() const { return labels.size(); }
};

LabelSet make_label_set(const FrozenEncoder& encoder, const std::vector<std::string>& labels);

struct Prediction {
    std::vector<double> scores;
    std::size_t predicted_index = 0;
    bool correct = false;
};

// Lowest index among the maxima.
std::size_t argmax_lowest(std::span<const double> scores);

// Runs the frozen layers from h_0 with an adapter after each, then the head.
Vec apply_adapters(const FrozenEncoder& encoder, std::span<const double> pooled, const AdapterWeights& w);
Vec apply_adapters(const FrozenEncoder& encoder, const std::vector<Vec>& activations, const AdapterWeights& w);
// Same, starting from h_1 = first_layer(h_0).
Vec apply_adapters_from_first(const FrozenEncoder& encoder, std::span<const double> h1, const AdapterWeights& w);

// dot(adapted, label embedding) / sqrt(d) for every label.
std::vector<double> label_scores(std::span<const double> adapted, const LabelSet& labels);

Prediction predict_pooled(const FrozenEncoder& encoder, std::span<const double> pooled, const LabelSet& labels,
                          const AdapterWeights& w, std::optional<std::size_t> target = std::nullopt);
Prediction predict_first(const FrozenEncoder& encoder, std::span<const double> h1, const LabelSet& labels,
                         const AdapterWeights& w, std::optional<std::size_t> target = std::nullopt);
Prediction score_labels(const FrozenEncoder& encoder, std::string_view x, const LabelSet& labels,
                        const AdapterWeights& w, std::optional<std::size_t> target = std::nullopt);
double example_loss(const FrozenEncoder& encoder, std::string_view x, std::size_t y_index, const LabelSet& labels,
                    const AdapterWeights& w);

// ---- tape-side model -------------------------------------------------------

struct AdapterBlockVars {
    num::Var down, down_bias, up, up_bias;
};

struct AdapterVars {
    std::vector<AdapterBlockVars> layers;
    AdapterBlockVars head;
};

AdapterVars bind_constants(num::Graph& g, const AdapterWeights& w);
// Slices P consecutive entries of `flat` starting at `offset`.
AdapterVars bind_flat(num::Graph& g, num::Var flat, const AdapterShape& shape, std::size_t offset = 0);
AdapterVars bind_params(num::Graph& g, num::ParamStore& store, const std::string& prefix,
                        const AdapterShape& shape);

void add_adapter_params(num::ParamStore& store, const std::string& prefix, const AdapterWeights& init);
AdapterWeights adapters_from_store(const num::ParamStore& store, const std::string& prefix,
                                   const AdapterShape& shape);

// What the batch rows fed to the tape model hold. The first frozen layer
// sees no adapter input, so its output can be computed once per example.
enum class InputStage { Pooled, FirstLayer };

// Frozen layer 0 applied to h_0.
Vec first_layer(const FrozenEncoder& encoder, std::span<const double> pooled);

// input: B x d constant rows (h_0 or h_1 per `stage`). Returns B x d adapted outputs.
num::Var adapted_forward(num::Graph& g, const FrozenEncoder& encoder, num::Var input, const AdapterVars& w,
                         InputStage stage = InputStage::Pooled);
// B x C scores.
num::Var score_matrix(num::Graph& g, num::Var adapted, const LabelSet& labels);
// Mean softmax cross-entropy over the batch.
num::Var batch_loss(num::Graph& g, const FrozenEncoder& encoder, num::Var input,
                    std::span<const std::size_t> targets, const LabelSet& labels, const AdapterVars& w,
                    InputStage stage = InputStage::Pooled);

// ---- parameter accounting --------------------------------------------------

enum class ParameterMode { Direct, Hypernet };

struct ParameterCount {
    std::size_t trainable = 0;
    std::size_t total = 0;
};

std::size_t hypernet_parameter_count(std::size_t model_dim, std::size_t hidden, std::size_t adapter_params);

ParameterCount count_parameters(const AdapterShape& shape, ParameterMode mode, const EncoderConfig& encoder,
                                std::size_t hypernet_hidden = 32);

}  // namespace clif
