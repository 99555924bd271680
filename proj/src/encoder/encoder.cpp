#include "clif/encoder.hpp"

#include <algorithm>

#include <cmath>
#include <stdexcept>

#include "clif/rng.hpp"

namespace clif {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void EncoderConfig::validate() const {
    if (hash_buckets == 0 || model_dim == 0 || num_layers == 0)
        throw std::invalid_argument("encoder dimensions must be positive");
}

FrozenEncoder::FrozenEncoder(EncoderConfig config) : config_(config) {
    config_.validate();
    const std::size_t d = config_.model_dim;
    const double d_real = static_cast<double>(d);
    // Variance 1/sqrt(d) for embeddings, 1/d for layer weights.
    const double emb_std = std::pow(d_real, -0.25);
    const double w_std = 1.0 / std::sqrt(d_real);

    Rng rng(derive_seed(config_.seed, {seed_tag("encoder.embeddings")}));
    std::vector<double> emb(config_.hash_buckets * d);
    for (double& x : emb) x = rng.normal(0.0, emb_std);
    embeddings_ = num::Tensor(num::Shape{config_.hash_buckets, d}, std::move(emb));

    for (std::size_t l = 0; l < config_.num_layers; ++l) {
        Rng lr(derive_seed(config_.seed, {seed_tag("encoder.layer"), l}));
        std::vector<double> w(d * d);
        for (double& x : w) x = lr.normal(0.0, w_std);
        weights_.emplace_back(num::Shape{d, d}, std::move(w));
        biases_.emplace_back(num::Shape{d}, 0.0);
    }
}

FrozenEncoder FrozenEncoder::with_zero_layers(EncoderConfig config) {
    FrozenEncoder enc(config);
    for (auto& w : enc.weights_) w.fill(0.0);
    for (auto& b : enc.biases_) b.fill(0.0);
    return enc;
}

std::vector<std::size_t> FrozenEncoder::tokenize(std::string_view text) const {
    std::vector<std::size_t> out;
    std::string token;
    auto flush = [&] {
        if (!token.empty()) {
            out.push_back(static_cast<std::size_t>(fnv1a64(token) % config_.hash_buckets));
            token.clear();
        }
    };
    for (unsigned char c : text) {
        // Bytes >= 0x80 belong to multi-byte UTF-8 sequences and stay in the token.
        const bool alnum = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
        if (!alnum) {
            flush();
            continue;
        }
        token.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c));
    }
    flush();
    return out;
}

Vec FrozenEncoder::pool_tokens(std::span<const std::size_t> tokens) const {
    const std::size_t d = config_.model_dim;
    Vec h(d, 0.0);
    if (tokens.empty()) return h;
    // Summing in bucket order makes the pooled vector bitwise independent of token order.
    std::vector<std::size_t> sorted(tokens.begin(), tokens.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t t : sorted) {
        const double* row = embeddings_.data().data() + t * d;
        for (std::size_t j = 0; j < d; ++j) h[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (double& x : h) x *= inv;
    return h;
}

Vec FrozenEncoder::pool(std::string_view text) const { return pool_tokens(tokenize(text)); }

Vec FrozenEncoder::apply_layer(std::size_t layer, std::span<const double> h) const {
    const std::size_t d = config_.model_dim;
    if (h.size() != d)
        throw num::ShapeError("encoder layer expects dim " + std::to_string(d) + ", got " + std::to_string(h.size()));
    const num::Tensor& w = weights_.at(layer);
    const num::Tensor& b = biases_.at(layer);
    Vec out(h.begin(), h.end());
    for (std::size_t i = 0; i < d; ++i) {
        const double* row = w.data().data() + i * d;
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += row[j] * h[j];
        out[i] += std::tanh(s + b[i]);
    }
    return out;
}

std::vector<Vec> FrozenEncoder::encode(std::string_view text) const {
    std::vector<Vec> acts;
    acts.reserve(config_.num_layers + 1);
    acts.push_back(pool(text));
    for (std::size_t l = 0; l < config_.num_layers; ++l) acts.push_back(apply_layer(l, acts.back()));
    return acts;
}

Vec FrozenEncoder::encode_last(std::string_view text) const {
    Vec h = pool(text);
    for (std::size_t l = 0; l < config_.num_layers; ++l) h = apply_layer(l, h);
    return h;
}

Vec FrozenEncoder::represent_example(std::string_view x, std::string_view y) const {
    std::string joined;
    joined.reserve(x.size() + y.size() + kLabelSeparator.size());
    joined.append(x);
    joined.append(kLabelSeparator);
    joined.append(y);
    return encode_last(joined);
}

Vec FrozenEncoder::embed_label(std::string_view y) const { return encode_last(y); }

std::size_t FrozenEncoder::parameter_count() const {
    const std::size_t d = config_.model_dim;
    return config_.hash_buckets * d + config_.num_layers * (d * d + d);
}

std::uint64_t FrozenEncoder::checksum() const {
    std::uint64_t h = num::checksum(embeddings_.data());
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = num::checksum(weights_[l].data(), h);
        h = num::checksum(biases_[l].data(), h);
    }
    return h;
}

}  // namespace clif
