#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clif/numcore/tensor.hpp"

namespace clif {

using Vec = std::vector<double>;

struct EncoderConfig {
    std::size_t hash_buckets = 4096;
    std::size_t model_dim = 64;
    std::size_t num_layers = 2;
    std::uint64_t seed = 20211;

    void validate() const;
};

// Separator placed between an input and its label in represent_example.
inline constexpr std::string_view kLabelSeparator = " [LABEL] ";

/// Frozen stand-in for a pretrained backbone.
///
/// Tokens are hashed into an embedding table and mean-pooled into h_0, then
/// passed through residual tanh blocks h_{l+1} = h_l + tanh(W_l h_l + b_l).
/// All weights are a pure function of the config; nothing here is trainable.
class FrozenEncoder {
public:
    explicit FrozenEncoder(EncoderConfig config = {});

    const EncoderConfig& config() const { return config_; }
    std::size_t dim() const { return config_.model_dim; }
    std::size_t num_layers() const { return config_.num_layers; }

    // Lowercased alphanumeric runs, FNV-1a 64 modulo the bucket count.
    std::vector<std::size_t> tokenize(std::string_view text) const;

    // Mean token embedding (h_0); zero for empty text.
    Vec pool(std::string_view text) const;
    Vec pool_tokens(std::span<const std::size_t> tokens) const;

    // h_{l+1} from h_l for frozen layer l.
    Vec apply_layer(std::size_t layer, std::span<const double> h) const;

    // h_0 .. h_L.
    std::vector<Vec> encode(std::string_view text) const;
    Vec encode_last(std::string_view text) const;

    // Final-layer activation of "x [LABEL] y".
    Vec represent_example(std::string_view x, std::string_view y) const;
    Vec embed_label(std::string_view y) const;

    const num::Tensor& embeddings() const { return embeddings_; }
    const num::Tensor& layer_weight(std::size_t l) const { return weights_.at(l); }
    const num::Tensor& layer_bias(std::size_t l) const { return biases_.at(l); }

    std::size_t parameter_count() const;
    std::uint64_t checksum() const;

    // Test hook: rebuild with zeroed layer weights and biases.
    static FrozenEncoder with_zero_layers(EncoderConfig config);

private:
    EncoderConfig config_;
    num::Tensor embeddings_;
    std::vector<num::Tensor> weights_;
    std::vector<num::Tensor> biases_;
};

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace clif
