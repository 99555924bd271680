#include "clif/adapter_model.hpp"

#include <cmath>
#include <stdexcept>

#include "clif/numcore/ops.hpp"

namespace clif {

using num::Graph;
using num::Shape;
using num::Tensor;
using num::Var;

std::size_t AdapterShape::layer_parameter_count() const {
    const std::size_t d = model_dim, r = adapter_hidden;
    return d * r + r + r * d + d;
}

std::size_t AdapterShape::head_parameter_count() const {
    const std::size_t d = model_dim, h = head_hidden;
    return d * h + h + h * d + d;
}

std::size_t AdapterShape::parameter_count() const {
    return num_layers * layer_parameter_count() + head_parameter_count();
}

void AdapterShape::validate() const {
    if (model_dim == 0 || adapter_hidden == 0 || head_hidden == 0 || num_layers == 0)
        throw std::invalid_argument("adapter dimensions must be positive");
}

namespace {

AdapterBlock zero_block(std::size_t d, std::size_t hidden) {
    return AdapterBlock{Tensor(Shape{hidden, d}, 0.0), Tensor(Shape{hidden}, 0.0), Tensor(Shape{d, hidden}, 0.0),
                        Tensor(Shape{d}, 0.0)};
}

void copy_into(Tensor& t, std::span<const double> flat, std::size_t& offset) {
    for (double& x : t.data()) x = flat[offset++];
}

void append(std::vector<double>& out, const Tensor& t) { out.insert(out.end(), t.data().begin(), t.data().end()); }

// x + up * relu(down * x + down_bias) + up_bias, same arithmetic order as the tape ops.
void apply_block(const AdapterBlock& b, Vec& x) {
    const std::size_t d = x.size();
    const std::size_t hidden = b.down_bias.size();
    std::vector<double> hid(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
        const double* row = b.down.data().data() + j * d;
        double s = 0.0;
        for (std::size_t p = 0; p < d; ++p) s += x[p] * row[p];
        s = s + b.down_bias[j];
        hid[j] = s > 0.0 ? s : 0.0;
    }
    for (std::size_t i = 0; i < d; ++i) {
        const double* row = b.up.data().data() + i * hidden;
        double s = 0.0;
        for (std::size_t j = 0; j < hidden; ++j) s += hid[j] * row[j];
        x[i] = x[i] + (s + b.up_bias[i]);
    }
}

AdapterBlockVars bind_block(Graph& g, const AdapterBlock& b) {
    return {g.constant(b.down), g.constant(b.down_bias), g.constant(b.up), g.constant(b.up_bias)};
}

Var block_forward(Graph& g, Var x, const AdapterBlockVars& b) {
    Var hid = num::relu(g, num::add_bias(g, num::matmul_nt(g, x, b.down), b.down_bias));
    Var out = num::add_bias(g, num::matmul_nt(g, hid, b.up), b.up_bias);
    return num::add(g, x, out);
}

std::string block_prefix(const std::string& prefix, std::size_t layer, bool head) {
    return head ? prefix + ".head" : prefix + ".layer" + std::to_string(layer);
}

}  // namespace

AdapterWeights AdapterWeights::zeros(const AdapterShape& shape) {
    shape.validate();
    AdapterWeights w;
    for (std::size_t l = 0; l < shape.num_layers; ++l) w.layers.push_back(zero_block(shape.model_dim, shape.adapter_hidden));
    w.head = zero_block(shape.model_dim, shape.head_hidden);
    return w;
}

AdapterWeights AdapterWeights::unflatten(const AdapterShape& shape, std::span<const double> flat) {
    if (flat.size() != shape.parameter_count())
        throw num::ShapeError("unflatten: expected " + std::to_string(shape.parameter_count()) + " values, got " +
                              std::to_string(flat.size()));
    AdapterWeights w = zeros(shape);
    std::size_t offset = 0;
    auto fill = [&](AdapterBlock& b) {
        copy_into(b.down, flat, offset);
        copy_into(b.down_bias, flat, offset);
        copy_into(b.up, flat, offset);
        copy_into(b.up_bias, flat, offset);
    };
    for (auto& b : w.layers) fill(b);
    fill(w.head);
    return w;
}

std::vector<double> AdapterWeights::flatten() const {
    std::vector<double> out;
    auto put = [&](const AdapterBlock& b) {
        append(out, b.down);
        append(out, b.down_bias);
        append(out, b.up);
        append(out, b.up_bias);
    };
    for (const auto& b : layers) put(b);
    put(head);
    return out;
}

AdapterShape AdapterWeights::shape() const {
    AdapterShape s;
    s.num_layers = layers.size();
    s.model_dim = head.up_bias.size();
    s.adapter_hidden = layers.empty() ? 0 : layers[0].down_bias.size();
    s.head_hidden = head.down_bias.size();
    return s;
}

AdapterWeights init_adapters(const AdapterShape& shape, Rng& rng) {
    AdapterWeights w = AdapterWeights::zeros(shape);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(shape.model_dim));
    for (auto& b : w.layers)
        for (double& x : b.down.data()) x = rng.normal(0.0, stddev);
    for (double& x : w.head.down.data()) x = rng.normal(0.0, stddev);
    return w;
}

LabelSet make_label_set(const FrozenEncoder& encoder, const std::vector<std::string>& labels) {
    if (labels.empty()) throw std::invalid_argument("label set must not be empty");
    const std::size_t d = encoder.dim();
    std::vector<double> data;
    data.reserve(labels.size() * d);
    for (const auto& l : labels) {
        Vec e = encoder.embed_label(l);
        data.insert(data.end(), e.begin(), e.end());
    }
    return LabelSet{labels, Tensor(Shape{labels.size(), d}, std::move(data))};
}

std::size_t argmax_lowest(std::span<const double> scores) {
    if (scores.empty()) throw std::invalid_argument("argmax over empty scores");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

Vec apply_adapters(const FrozenEncoder& encoder, std::span<const double> pooled, const AdapterWeights& w) {
    if (pooled.size() != encoder.dim() || w.head.up_bias.size() != encoder.dim())
        throw num::ShapeError("apply_adapters: activation dim " + std::to_string(pooled.size()) +
                              " vs adapter dim " + std::to_string(w.head.up_bias.size()));
    if (w.layers.size() != encoder.num_layers())
        throw num::ShapeError("apply_adapters: " + std::to_string(w.layers.size()) + " adapter layers for " +
                              std::to_string(encoder.num_layers()) + " encoder layers");
    return apply_adapters_from_first(encoder, encoder.apply_layer(0, pooled), w);
}

Vec first_layer(const FrozenEncoder& encoder, std::span<const double> pooled) { return encoder.apply_layer(0, pooled); }

Vec apply_adapters_from_first(const FrozenEncoder& encoder, std::span<const double> h1, const AdapterWeights& w) {
    if (h1.size() != encoder.dim()) throw num::ShapeError("apply_adapters: activation dim mismatch");
    if (w.layers.size() != encoder.num_layers())
        throw num::ShapeError("apply_adapters: " + std::to_string(w.layers.size()) + " adapter layers for " +
                              std::to_string(encoder.num_layers()) + " encoder layers");
    Vec x(h1.begin(), h1.end());
    for (std::size_t l = 0; l < encoder.num_layers(); ++l) {
        if (l > 0) x = encoder.apply_layer(l, x);
        apply_block(w.layers[l], x);
    }
    apply_block(w.head, x);
    return x;
}

Vec apply_adapters(const FrozenEncoder& encoder, const std::vector<Vec>& activations, const AdapterWeights& w) {
    if (activations.empty()) throw num::ShapeError("apply_adapters: no activations");
    return apply_adapters(encoder, activations.front(), w);
}

std::vector<double> label_scores(std::span<const double> adapted, const LabelSet& labels) {
    const std::size_t d = adapted.size();
    if (labels.embeddings.cols() != d)
        throw num::ShapeError("label_scores: adapted dim " + std::to_string(d) + " vs label dim " +
                              std::to_string(labels.embeddings.cols()));
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> scores(labels.size());
    for (std::size_t c = 0; c < labels.size(); ++c) {
        const double* e = labels.embeddings.data().data() + c * d;
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += adapted[j] * e[j];
        scores[c] = s * inv;
    }
    return scores;
}

Prediction predict_pooled(const FrozenEncoder& encoder, std::span<const double> pooled, const LabelSet& labels,
                          const AdapterWeights& w, std::optional<std::size_t> target) {
    if (labels.size() == 0) throw std::invalid_argument("score_labels: empty label set");
    Prediction p;
    p.scores = label_scores(apply_adapters(encoder, pooled, w), labels);
    p.predicted_index = argmax_lowest(p.scores);
    p.correct = target.has_value() && *target == p.predicted_index;
    return p;
}

Prediction predict_first(const FrozenEncoder& encoder, std::span<const double> h1, const LabelSet& labels,
                         const AdapterWeights& w, std::optional<std::size_t> target) {
    if (labels.size() == 0) throw std::invalid_argument("score_labels: empty label set");
    Prediction p;
    p.scores = label_scores(apply_adapters_from_first(encoder, h1, w), labels);
    p.predicted_index = argmax_lowest(p.scores);
    p.correct = target.has_value() && *target == p.predicted_index;
    return p;
}

Prediction score_labels(const FrozenEncoder& encoder, std::string_view x, const LabelSet& labels,
                        const AdapterWeights& w, std::optional<std::size_t> target) {
    return predict_pooled(encoder, encoder.pool(x), labels, w, target);
}

double example_loss(const FrozenEncoder& encoder, std::string_view x, std::size_t y_index, const LabelSet& labels,
                    const AdapterWeights& w) {
    return num::cross_entropy_value(score_labels(encoder, x, labels, w).scores, y_index);
}

AdapterVars bind_constants(Graph& g, const AdapterWeights& w) {
    AdapterVars v;
    for (const auto& b : w.layers) v.layers.push_back(bind_block(g, b));
    v.head = bind_block(g, w.head);
    return v;
}

AdapterVars bind_flat(Graph& g, Var flat, const AdapterShape& shape, std::size_t offset) {
    const std::size_t d = shape.model_dim;
    if (offset + shape.parameter_count() > g.value(flat).size())
        throw num::ShapeError("bind_flat: flat vector of shape " + num::shape_str(g.value(flat).shape()) +
                              " too short for " + std::to_string(shape.parameter_count()) + " adapter parameters");
    auto block = [&](std::size_t hidden) {
        AdapterBlockVars b;
        b.down = num::slice(g, flat, offset, Shape{hidden, d});
        offset += hidden * d;
        b.down_bias = num::slice(g, flat, offset, Shape{hidden});
        offset += hidden;
        b.up = num::slice(g, flat, offset, Shape{d, hidden});
        offset += d * hidden;
        b.up_bias = num::slice(g, flat, offset, Shape{d});
        offset += d;
        return b;
    };
    AdapterVars v;
    for (std::size_t l = 0; l < shape.num_layers; ++l) v.layers.push_back(block(shape.adapter_hidden));
    v.head = block(shape.head_hidden);
    return v;
}

void add_adapter_params(num::ParamStore& store, const std::string& prefix, const AdapterWeights& init) {
    auto put = [&](const std::string& p, const AdapterBlock& b) {
        store.add(p + ".down", b.down);
        store.add(p + ".down_bias", b.down_bias);
        store.add(p + ".up", b.up);
        store.add(p + ".up_bias", b.up_bias);
    };
    for (std::size_t l = 0; l < init.layers.size(); ++l) put(block_prefix(prefix, l, false), init.layers[l]);
    put(block_prefix(prefix, 0, true), init.head);
}

AdapterVars bind_params(Graph& g, num::ParamStore& store, const std::string& prefix, const AdapterShape& shape) {
    auto get = [&](const std::string& p) {
        return AdapterBlockVars{g.param(store, p + ".down"), g.param(store, p + ".down_bias"),
                                g.param(store, p + ".up"), g.param(store, p + ".up_bias")};
    };
    AdapterVars v;
    for (std::size_t l = 0; l < shape.num_layers; ++l) v.layers.push_back(get(block_prefix(prefix, l, false)));
    v.head = get(block_prefix(prefix, 0, true));
    return v;
}

AdapterWeights adapters_from_store(const num::ParamStore& store, const std::string& prefix,
                                   const AdapterShape& shape) {
    auto get = [&](const std::string& p) {
        return AdapterBlock{store.value(p + ".down"), store.value(p + ".down_bias"), store.value(p + ".up"),
                            store.value(p + ".up_bias")};
    };
    AdapterWeights w;
    for (std::size_t l = 0; l < shape.num_layers; ++l) w.layers.push_back(get(block_prefix(prefix, l, false)));
    w.head = get(block_prefix(prefix, 0, true));
    return w;
}

Var adapted_forward(Graph& g, const FrozenEncoder& encoder, Var input, const AdapterVars& w, InputStage stage) {
    if (g.value(input).cols() != encoder.dim())
        throw num::ShapeError("adapted_forward: input shape " + num::shape_str(g.value(input).shape()) +
                              " does not match model dim " + std::to_string(encoder.dim()));
    if (w.layers.size() != encoder.num_layers())
        throw num::ShapeError("adapted_forward: adapter/encoder layer count mismatch");
    Var x = input;
    for (std::size_t l = 0; l < encoder.num_layers(); ++l) {
        if (l == 0 && stage == InputStage::FirstLayer) {
            x = block_forward(g, x, w.layers[l]);
            continue;
        }
        Var pre = num::add_bias(g, num::matmul_nt(g, x, g.constant(encoder.layer_weight(l))),
                                g.constant(encoder.layer_bias(l)));
        x = num::add(g, x, num::tanh(g, pre));
        x = block_forward(g, x, w.layers[l]);
    }
    return block_forward(g, x, w.head);
}

Var score_matrix(Graph& g, Var adapted, const LabelSet& labels) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(labels.embeddings.cols()));
    return num::scale(g, num::matmul_nt(g, adapted, g.constant(labels.embeddings)), inv);
}

Var batch_loss(Graph& g, const FrozenEncoder& encoder, Var input, std::span<const std::size_t> targets,
               const LabelSet& labels, const AdapterVars& w, InputStage stage) {
    return num::cross_entropy_rows(g, score_matrix(g, adapted_forward(g, encoder, input, w, stage), labels),
                                   targets);
}

std::size_t hypernet_parameter_count(std::size_t model_dim, std::size_t hidden, std::size_t adapter_params) {
    return (model_dim + 1) * hidden + (hidden + 1) * adapter_params;
}

ParameterCount count_parameters(const AdapterShape& shape, ParameterMode mode, const EncoderConfig& encoder,
                                std::size_t hypernet_hidden) {
    const std::size_t adapters = shape.parameter_count();
    const std::size_t d = encoder.model_dim;
    const std::size_t frozen = encoder.hash_buckets * d + encoder.num_layers * (d * d + d);
    ParameterCount c;
    c.trainable = mode == ParameterMode::Direct ? adapters
                                                : hypernet_parameter_count(shape.model_dim, hypernet_hidden, adapters);
    c.total = c.trainable + frozen;
    return c;
}

}  // namespace clif
