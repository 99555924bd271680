#include "clif/learners.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "clif/binio.hpp"
#include "clif/numcore/ops.hpp"

namespace clif {

using num::Graph;
using num::ParamStore;
using num::Shape;
using num::Tensor;
using num::Var;

namespace {

struct AlgorithmInfo {
    Algorithm algorithm;
    const char* name;
    ModelKind kind;
};

constexpr AlgorithmInfo kAlgorithms[] = {
    {Algorithm::Majority, "majority", ModelKind::Majority},
    {Algorithm::AdapterSingle, "adapter-single", ModelKind::Direct},
    {Algorithm::AdapterVanilla, "adapter-vanilla", ModelKind::Direct},
    {Algorithm::AdapterEwc, "adapter-ewc", ModelKind::Direct},
    {Algorithm::AdapterMbpa, "adapter-mbpa", ModelKind::Direct},
    {Algorithm::AdapterMtl, "adapter-mtl", ModelKind::Direct},
    {Algorithm::BihnetSingle, "bihnet-single", ModelKind::Context},
    {Algorithm::BihnetVanilla, "bihnet-vanilla", ModelKind::Context},
    {Algorithm::BihnetEwc, "bihnet-ewc", ModelKind::Context},
    {Algorithm::BihnetReg, "bihnet-reg", ModelKind::Context},
    {Algorithm::BihnetMtl, "bihnet-mtl", ModelKind::Context},
    {Algorithm::HnetReg, "hnet-reg", ModelKind::Embedding},
};

const AlgorithmInfo& info(Algorithm a) {
    for (const auto& i : kAlgorithms)
        if (i.algorithm == a) return i;
    throw std::invalid_argument("unknown algorithm");
}

bool uses_ewc(Algorithm a) { return a == Algorithm::AdapterEwc || a == Algorithm::BihnetEwc; }
bool uses_reg(Algorithm a) { return a == Algorithm::BihnetReg || a == Algorithm::HnetReg; }
bool uses_mbpa(Algorithm a) { return a == Algorithm::AdapterMbpa; }

const std::string kAdapterPrefix = "adapter";
const std::string kFewshotEmbedding = "emb.__fewshot__";

std::string embedding_name(const std::string& task) { return "emb." + task; }

Tensor gather_rows(const std::vector<Vec>& rows, std::span<const std::size_t> idx) {
    const std::size_t d = rows.at(idx[0]).size();
    std::vector<double> data;
    data.reserve(idx.size() * d);
    for (std::size_t i : idx) data.insert(data.end(), rows[i].begin(), rows[i].end());
    return Tensor(Shape{idx.size(), d}, std::move(data));
}

std::vector<std::size_t> gather(const std::vector<std::size_t>& v, std::span<const std::size_t> idx) {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(v[i]);
    return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch, Rng& rng) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n; s += batch)
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(s),
                         perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch)));
    return out;
}

Tensor random_vector(std::size_t d, double stddev, Rng& rng) {
    Tensor t(Shape{d});
    for (double& x : t.data()) x = rng.normal(0.0, stddev);
    return t;
}

}  // namespace

std::string algorithm_name(Algorithm a) { return info(a).name; }

Algorithm parse_algorithm(const std::string& s) {
    for (const auto& i : kAlgorithms)
        if (s == i.name) return i.algorithm;
    throw std::invalid_argument("unknown algorithm \"" + s + "\"");
}

std::vector<Algorithm> all_algorithms() {
    std::vector<Algorithm> out;
    for (const auto& i : kAlgorithms) out.push_back(i.algorithm);
    return out;
}

ModelKind model_kind(Algorithm a) { return info(a).kind; }

bool is_single_task(Algorithm a) { return a == Algorithm::AdapterSingle || a == Algorithm::BihnetSingle; }

bool is_joint(Algorithm a) { return a == Algorithm::AdapterMtl || a == Algorithm::BihnetMtl; }

void LearnerConfig::validate() const {
    auto fail = [](const char* field, const char* rule) {
        throw std::invalid_argument(std::string("learner.") + field + " " + rule);
    };
    if (!(learning_rate > 0)) fail("learning_rate", "must be positive");
    if (batch_size == 0) fail("batch_size", "must be positive");
    if (max_epochs == 0) fail("max_epochs", "must be positive");
    if (patience == 0) fail("patience", "must be positive");
    if (replay_interval == 0) fail("replay_interval", "must be positive");
    if (!(ewc_lambda >= 0)) fail("ewc_lambda", "must be non-negative");
    if (!(ewc_decay >= 0)) fail("ewc_decay", "must be non-negative");
    if (fisher_samples == 0) fail("fisher_samples", "must be positive");
    if (mbpa_neighbors == 0) fail("mbpa_neighbors", "must be positive");
    if (!(reg.strength >= 0)) fail("reg_strength", "must be non-negative");
    if (reg.prior_samples == 0) fail("prior_samples", "must be positive");
    if (upstream_sample_size == 0) fail("upstream_sample_size", "must be positive");
    if (adapter_hidden == 0) fail("adapter_hidden", "must be positive");
    if (head_hidden == 0) fail("head_hidden", "must be positive");
    if (hypernet_hidden == 0) fail("hypernet_hidden", "must be positive");
    if (!(hypernet_output_scale > 0)) fail("hypernet_output_scale", "must be positive");
    if (!(embedding_init_std >= 0)) fail("embedding_init_std", "must be non-negative");
}

// ---- data preparation ------------------------------------------------------

namespace {

Split prepare_split(const FrozenEncoder& encoder, const std::vector<Example>& examples) {
    Split s;
    s.inputs.reserve(examples.size());
    s.targets.reserve(examples.size());
    for (const auto& e : examples) {
        s.inputs.push_back(first_layer(encoder, encoder.pool(e.text)));
        s.targets.push_back(e.label);
    }
    return s;
}

std::vector<Vec> prepare_reps(const FrozenEncoder& encoder, const std::vector<Example>& examples,
                              const std::vector<std::string>& labels) {
    std::vector<Vec> reps;
    reps.reserve(examples.size());
    for (const auto& e : examples) reps.push_back(encoder.represent_example(e.text, labels.at(e.label)));
    return reps;
}

}  // namespace

PreparedTask prepare_task(const FrozenEncoder& encoder, const Task& task) {
    PreparedTask p;
    p.name = task.name;
    p.labels = make_label_set(encoder, task.labels);
    p.train = prepare_split(encoder, task.train);
    p.validation = prepare_split(encoder, task.validation);
    p.test = prepare_split(encoder, task.test);
    p.train_reps = prepare_reps(encoder, task.train, task.labels);
    return p;
}

PreparedTask prepare_episode(const FrozenEncoder& encoder, const Episode& episode, const PreparedTask& source) {
    if (episode.train.empty()) throw std::invalid_argument("episode of " + episode.source + " is empty");
    PreparedTask p;
    p.name = source.name;
    p.labels = source.labels;
    p.train = prepare_split(encoder, episode.train);
    p.test = source.test;
    p.train_reps = prepare_reps(encoder, episode.train, source.labels.labels);
    return p;
}

// ---- checkpoints -----------------------------------------------------------

Checkpoint Checkpoint::capture(const ParamStore& store, double validation_accuracy, std::size_t epoch) {
    Checkpoint c;
    for (const auto& [name, entry] : store.entries()) c.values.emplace(name, entry.value);
    c.validation_accuracy = validation_accuracy;
    c.epoch = epoch;
    return c;
}

void Checkpoint::restore(ParamStore& store) const {
    for (const auto& [name, value] : values) {
        Tensor& dst = store.value(name);
        if (dst.shape() != value.shape()) throw num::ShapeError("checkpoint shape mismatch for " + name);
        dst = value;
    }
}

namespace {

binio::Writer checkpoint_writer(const Checkpoint& c) {
    binio::Writer w(binio::FileKind::Checkpoint);
    w.f64(c.validation_accuracy);
    w.u64(c.epoch);
    w.u64(c.values.size());
    for (const auto& [name, t] : c.values) {
        w.str(name);
        w.u64(t.shape().size());
        for (std::size_t dim : t.shape()) w.u64(dim);
        w.f64s(t.data());
    }
    return w;
}

Checkpoint read_checkpoint(binio::Reader& r) {
    Checkpoint c;
    c.validation_accuracy = r.f64();
    c.epoch = r.u64();
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = r.str();
        const std::uint64_t rank = r.u64();
        if (rank == 0 || rank > 8) throw binio::FormatError("checkpoint: bad rank for " + name);
        Shape shape;
        for (std::uint64_t k = 0; k < rank; ++k) shape.push_back(r.u64());
        auto data = r.f64s();
        try {
            if (!c.values.emplace(name, Tensor(shape, std::move(data))).second)
                throw binio::FormatError("checkpoint: duplicate parameter " + name);
        } catch (const num::ShapeError& e) {
            throw binio::FormatError(std::string("checkpoint: ") + e.what());
        }
    }
    if (!r.at_end()) throw binio::FormatError("trailing bytes after checkpoint");
    return c;
}

}  // namespace

std::vector<std::uint8_t> Checkpoint::serialize() const { return checkpoint_writer(*this).bytes(); }

Checkpoint Checkpoint::deserialize(std::vector<std::uint8_t> bytes) {
    binio::Reader r(std::move(bytes), binio::FileKind::Checkpoint);
    return read_checkpoint(r);
}

void Checkpoint::save(const std::filesystem::path& path) const { checkpoint_writer(*this).save(path); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    auto r = binio::Reader::load(path, binio::FileKind::Checkpoint);
    return read_checkpoint(r);
}

bool EarlyStopping::update(double validation_accuracy) {
    ++epoch_;
    if (validation_accuracy > best_) {
        best_ = validation_accuracy;
        best_epoch_ = epoch_;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

// ---- EWC -------------------------------------------------------------------

double FisherState::penalty(const ParamStore& store, double lambda) const {
    double total = 0.0;
    for (const auto& [name, f] : fisher) {
        if (!store.contains(name)) continue;
        const Tensor& theta = store.value(name);
        const Tensor& star = anchor.at(name);
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double diff = theta[i] - star[i];
            total += f[i] * diff * diff;
        }
    }
    return 0.5 * lambda * total;
}

void FisherState::add_penalty_gradient(ParamStore& store, double lambda) const {
    for (const auto& [name, f] : fisher) {
        if (!store.contains(name)) continue;
        const Tensor& theta = store.value(name);
        const Tensor& star = anchor.at(name);
        Tensor& g = store.grad(name);
        for (std::size_t i = 0; i < f.size(); ++i) g[i] += lambda * f[i] * (theta[i] - star[i]);
    }
}

void FisherState::consolidate(const ParamStore& store, const std::map<std::string, Tensor>& mean_squared_grads,
                              double decay) {
    for (const auto& [name, sq] : mean_squared_grads) {
        auto it = fisher.find(name);
        if (it == fisher.end()) {
            fisher.emplace(name, sq);
        } else {
            Tensor& f = it->second;
            for (std::size_t i = 0; i < f.size(); ++i) f[i] = decay * f[i] + sq[i];
        }
    }
    anchor.clear();
    for (const auto& [name, f] : fisher)
        if (store.contains(name)) anchor.emplace(name, store.value(name));
}

// ---- example memory --------------------------------------------------------

Vec retrieval_key(const FrozenEncoder& encoder, std::span<const double> h1) {
    Vec h(h1.begin(), h1.end());
    for (std::size_t l = 1; l < encoder.num_layers(); ++l) h = encoder.apply_layer(l, h);
    return h;
}

void ExampleMemory::add(const FrozenEncoder& encoder, const PreparedTask& task) {
    Block b;
    b.task = task.name;
    b.labels = task.labels;
    b.train = task.train;
    b.keys.reserve(task.train.size());
    for (const auto& h1 : task.train.inputs) b.keys.push_back(retrieval_key(encoder, h1));
    total_ += b.train.size();
    blocks_.push_back(std::move(b));
}

std::pair<std::size_t, std::size_t> ExampleMemory::locate(std::size_t flat) const {
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        if (flat < blocks_[b].train.size()) return {b, flat};
        flat -= blocks_[b].train.size();
    }
    throw std::out_of_range("example memory index out of range");
}

std::vector<ExampleMemory::Neighbor> ExampleMemory::nearest(std::span<const double> key, std::size_t count) const {
    std::vector<Neighbor> all;
    all.reserve(total_);
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        for (std::size_t i = 0; i < blocks_[b].keys.size(); ++i)
            all.push_back({b, i, squared_distance(key, blocks_[b].keys[i])});
    count = std::min(count, all.size());
    auto less = [](const Neighbor& a, const Neighbor& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        if (a.block != b.block) return a.block < b.block;
        return a.index < b.index;
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count), all.end(), less);
    all.resize(count);
    for (auto& n : all) n.distance = std::sqrt(n.distance);
    return all;
}

std::size_t majority_label(std::span<const std::size_t> targets, std::size_t num_classes) {
    if (targets.empty()) throw std::invalid_argument("majority rule of an empty split");
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t t : targets) counts.at(t)++;
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

// ---- learner ---------------------------------------------------------------

namespace {

AdapterShape shape_for(const FrozenEncoder& encoder, const LearnerConfig& c) {
    AdapterShape s;
    s.model_dim = encoder.dim();
    s.num_layers = encoder.num_layers();
    s.adapter_hidden = c.adapter_hidden;
    s.head_hidden = c.head_hidden;
    return s;
}

}  // namespace

Learner::Learner(const FrozenEncoder& encoder, LearnerConfig config, std::uint64_t seed)
    : encoder_(&encoder),
      config_(std::move(config)),
      seed_(seed),
      shape_(shape_for(encoder, config_)),
      hnet_(shape_, config_.hypernet_hidden) {
    config_.validate();
    init_fresh(store_, derive_seed(seed_, {seed_tag("init")}));
    fresh_ = store_;
}

void Learner::init_fresh(ParamStore& store, std::uint64_t init_seed) const {
    Rng rng(init_seed);
    switch (model_kind(config_.algorithm)) {
        case ModelKind::Majority: break;
        case ModelKind::Direct: add_adapter_params(store, kAdapterPrefix, init_adapters(shape_, rng)); break;
        case ModelKind::Context:
        case ModelKind::Embedding: hnet_.init(store, rng, config_.hypernet_output_scale); break;
    }
}

Vec Learner::task_vector(const ParamStore& store, const std::string& name) const {
    if (model_kind(config_.algorithm) == ModelKind::Embedding) return store.value(embedding_name(name)).storage();
    auto it = z_high_.find(name);
    if (it == z_high_.end()) throw std::invalid_argument("task " + name + " has not been seen by the learner");
    return it->second;
}

AdapterWeights Learner::adapters_for(const ParamStore& store, const std::string& task) const {
    switch (model_kind(config_.algorithm)) {
        case ModelKind::Direct: return adapters_from_store(store, kAdapterPrefix, shape_);
        case ModelKind::Context:
        case ModelKind::Embedding: return hnet_.generate_weights(store, task_vector(store, task));
        case ModelKind::Majority: break;
    }
    throw std::logic_error("majority learner has no adapters");
}

AdapterWeights Learner::task_adapters(const PreparedTask& task) const {
    if (is_single_task(config_.algorithm)) return adapters_for(single_models_.at(task.name), task.name);
    return adapters_for(store_, task.name);
}

double Learner::accuracy_with(const AdapterWeights& w, const PreparedTask& task, const Split& split) const {
    if (split.size() == 0) throw std::invalid_argument("evaluation on an empty split of " + task.name);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < split.size(); ++i)
        correct += predict_first(*encoder_, split.inputs[i], task.labels, w, split.targets[i]).correct;
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

namespace {

// Loss of one batch of task t under whichever model the store holds.
struct LossContext {
    const FrozenEncoder* encoder;
    const HyperNetwork* hnet;
    const AdapterShape* shape;
    ModelKind kind;
    bool use_few;
};

Var batch_objective(Graph& g, ParamStore& store, const LossContext& ctx, const PreparedTask& task,
                    const Split& split, std::span<const std::size_t> idx, const TaskRepresentation* rep,
                    const std::string& embedding) {
    Var input = g.constant(gather_rows(split.inputs, idx));
    const auto targets = gather(split.targets, idx);
    switch (ctx.kind) {
        case ModelKind::Direct:
            return batch_loss(g, *ctx.encoder, input, targets, task.labels,
                              bind_params(g, store, kAdapterPrefix, *ctx.shape), InputStage::FirstLayer);
        case ModelKind::Context:
            return bilevel_loss(g, store, *ctx.hnet, *ctx.encoder, *rep, input, targets, task.labels, ctx.use_few,
                                InputStage::FirstLayer);
        case ModelKind::Embedding:
            return generated_loss(g, store, *ctx.hnet, *ctx.encoder, g.param(store, embedding), input, targets,
                                  task.labels, InputStage::FirstLayer);
        case ModelKind::Majority: break;
    }
    throw std::logic_error("majority learner has no loss");
}

}  // namespace

void Learner::train_task(const PreparedTask& task) {
    if (task.train.size() == 0) throw std::invalid_argument("task " + task.name + " has an empty train split");
    const ModelKind kind = model_kind(config_.algorithm);
    if (kind == ModelKind::Majority) {
        majority_[task.name] = majority_label(task.train.targets, task.labels.size());
        logs_.push_back({task.name, 0, 0, 0.0, 0});
        ++tasks_seen_;
        return;
    }
    const bool single = is_single_task(config_.algorithm);
    if (single) store_ = fresh_;

    // Boundary: anchor every prior task to the current hypernetwork.
    if (kind != ModelKind::Direct) memory_.snapshot(hnet_, store_);
    if (kind == ModelKind::Context) z_high_[task.name] = mean_representation(task.train_reps);
    if (kind == ModelKind::Embedding) {
        Rng rng(derive_seed(seed_, {seed_tag("embedding"), fnv1a64(task.name)}));
        store_.set(embedding_name(task.name), random_vector(shape_.model_dim, config_.embedding_init_std, rng));
    }

    const PreparedTask* tasks[] = {&task};
    const std::size_t indices[] = {tasks_seen_};
    train_loop(tasks, indices);

    if (kind != ModelKind::Direct) memory_.add(task.name, task_vector(store_, task.name));
    if (uses_ewc(config_.algorithm)) consolidate_fisher(task);
    if (uses_mbpa(config_.algorithm)) examples_.add(*encoder_, task);
    if (single) {
        single_models_[task.name] = store_;
        store_ = fresh_;
    }
    ++tasks_seen_;
}

void Learner::train_joint(std::span<const PreparedTask* const> tasks) {
    if (tasks.empty()) throw std::invalid_argument("joint training needs at least one task");
    const ModelKind kind = model_kind(config_.algorithm);
    std::vector<std::size_t> indices;
    for (const auto* t : tasks) {
        if (t->train.size() == 0) throw std::invalid_argument("task " + t->name + " has an empty train split");
        if (kind == ModelKind::Majority) majority_[t->name] = majority_label(t->train.targets, t->labels.size());
        if (kind == ModelKind::Context) z_high_[t->name] = mean_representation(t->train_reps);
        if (kind == ModelKind::Embedding) {
            Rng rng(derive_seed(seed_, {seed_tag("embedding"), fnv1a64(t->name)}));
            store_.set(embedding_name(t->name), random_vector(shape_.model_dim, config_.embedding_init_std, rng));
        }
        indices.push_back(tasks_seen_ + indices.size());
    }
    if (kind != ModelKind::Majority) train_loop(tasks, indices);
    for (const auto* t : tasks) {
        if (kind == ModelKind::Context || kind == ModelKind::Embedding) memory_.add(t->name, task_vector(store_, t->name));
        if (uses_mbpa(config_.algorithm)) examples_.add(*encoder_, *t);
    }
    tasks_seen_ += tasks.size();
}

void Learner::train_loop(std::span<const PreparedTask* const> tasks, std::span<const std::size_t> task_indices) {
    const ModelKind kind = model_kind(config_.algorithm);
    const LossContext ctx{encoder_, &hnet_, &shape_, kind, config_.use_fewshot_repr};
    const bool reg = uses_reg(config_.algorithm) && config_.reg.strength > 0;
    const bool ewc = uses_ewc(config_.algorithm) && config_.ewc_lambda > 0 && !fisher_.empty();
    const bool replay = uses_mbpa(config_.algorithm) && config_.replay;

    num::AdamState adam(config_.learning_rate);
    EarlyStopping stopper(config_.patience, config_.max_epochs);
    Checkpoint best = Checkpoint::capture(store_, -1.0, 0);
    std::size_t steps = 0;

    auto step = [&](Var loss, Graph& g) {
        g.backward(loss);
        if (ewc) fisher_.add_penalty_gradient(store_, config_.ewc_lambda);
        num::adam_step(store_, adam);
        ++steps;
        ++global_step_;
    };

    auto replay_step = [&]() {
        Rng rng(derive_seed(seed_, {seed_tag("replay"), global_step_}));
        const auto [b, first] = examples_.locate(rng.index(examples_.size()));
        (void)first;
        const auto& block = examples_.blocks()[b];
        const auto idx =
            rng.sample_without_replacement(block.train.size(), std::min(config_.batch_size, block.train.size()));
        PreparedTask view;
        view.name = block.task;
        view.labels = block.labels;
        Graph g;
        Var loss = batch_objective(g, store_, ctx, view, block.train, idx, nullptr, "");
        g.backward(loss);
        num::adam_step(store_, adam);
    };

    while (!stopper.should_stop()) {
        const std::size_t epoch = stopper.epoch() + 1;
        // Per-task batch lists, interleaved by sampling tasks in proportion
        // to their remaining batches.
        std::vector<std::vector<std::vector<std::size_t>>> batches;
        std::vector<TaskRepresentation> reps(tasks.size());
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            Rng rng(derive_seed(seed_, {seed_tag("shuffle"), task_indices[t], epoch}));
            batches.push_back(make_batches(tasks[t]->train.size(), config_.batch_size, rng));
            if (kind == ModelKind::Context)
                reps[t] = compute_task_representation(
                    tasks[t]->train_reps, config_.upstream_sample_size,
                    derive_seed(seed_, {seed_tag("z_few"), task_indices[t], epoch}));
        }
        std::vector<std::size_t> cursor(tasks.size(), 0);
        std::size_t remaining = 0;
        for (const auto& b : batches) remaining += b.size();
        Rng interleave(derive_seed(seed_, {seed_tag("interleave"), task_indices[0], epoch}));
        while (remaining > 0) {
            std::size_t t = 0;
            if (tasks.size() > 1) {
                std::size_t r = interleave.index(remaining);
                while (r >= batches[t].size() - cursor[t]) {
                    r -= batches[t].size() - cursor[t];
                    ++t;
                }
            }
            const auto& idx = batches[t][cursor[t]++];
            --remaining;
            const PreparedTask& task = *tasks[t];
            Graph g;
            const std::string emb = kind == ModelKind::Embedding ? embedding_name(task.name) : "";
            Var loss = batch_objective(g, store_, ctx, task, task.train, idx, &reps[t], emb);
            if (reg) {
                Var penalty = regularization_term(g, store_, hnet_, memory_, config_.reg,
                                                  derive_seed(seed_, {seed_tag("reg"), global_step_}));
                loss = num::add(g, loss, num::scale(g, penalty, config_.reg.strength));
            }
            step(loss, g);
            if (replay && !examples_.empty() && global_step_ % config_.replay_interval == 0) replay_step();
        }

        double acc = 0.0;
        for (const auto* t : tasks) acc += accuracy_with(adapters_for(store_, t->name), *t, t->validation);
        acc /= static_cast<double>(tasks.size());
        if (stopper.update(acc)) best = Checkpoint::capture(store_, acc, epoch);
    }
    best.restore(store_);
    logs_.push_back({tasks.size() == 1 ? tasks[0]->name : "joint", stopper.epoch(), stopper.best_epoch(),
                     stopper.best(), steps});
}

void Learner::consolidate_fisher(const PreparedTask& task) {
    const LossContext ctx{encoder_, &hnet_, &shape_, model_kind(config_.algorithm), false};
    Rng rng(derive_seed(seed_, {seed_tag("fisher"), tasks_seen_}));
    const auto picked =
        rng.sample_without_replacement(task.train.size(), std::min(config_.fisher_samples, task.train.size()));
    TaskRepresentation rep;
    if (ctx.kind == ModelKind::Context) {
        rep.high = z_high_.at(task.name);
        rep.few = rep.high;
    }
    std::map<std::string, Tensor> sums;
    for (const auto& [name, entry] : store_.entries()) sums.emplace(name, Tensor(entry.value.shape(), 0.0));
    store_.zero_grad();
    for (std::size_t i : picked) {
        const std::size_t one[] = {i};
        Graph g;
        Var loss = batch_objective(g, store_, ctx, task, task.train, one, &rep, embedding_name(task.name));
        g.backward(loss);
        for (auto& [name, entry] : store_.entries()) {
            Tensor& s = sums.at(name);
            for (std::size_t k = 0; k < s.size(); ++k) s[k] += entry.grad[k] * entry.grad[k];
        }
        store_.zero_grad();
    }
    const double inv = 1.0 / static_cast<double>(picked.size());
    for (auto& [name, s] : sums)
        for (double& x : s.data()) x *= inv;
    fisher_.consolidate(store_, sums, config_.ewc_decay);
}

double Learner::mbpa_accuracy(const PreparedTask& task, const Split& split) const {
    const LossContext ctx{encoder_, &hnet_, &shape_, ModelKind::Direct, false};
    std::size_t correct = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        const auto neighbors = examples_.nearest(retrieval_key(*encoder_, split.inputs[i]), config_.mbpa_neighbors);
        std::map<std::size_t, std::vector<std::size_t>> groups;
        for (const auto& n : neighbors) groups[n.block].push_back(n.index);
        ParamStore local = store_;
        num::AdamState adam(config_.learning_rate);
        for (std::size_t s = 0; s < config_.mbpa_local_steps; ++s) {
            Graph g;
            Var total;
            for (const auto& [b, idx] : groups) {
                const auto& block = examples_.blocks()[b];
                PreparedTask view;
                view.labels = block.labels;
                Var part = batch_objective(g, local, ctx, view, block.train, idx, nullptr, "");
                part = num::scale(g, part, static_cast<double>(idx.size()) / static_cast<double>(neighbors.size()));
                total = total.valid() ? num::add(g, total, part) : part;
            }
            g.backward(total);
            num::adam_step(local, adam);
        }
        const auto w = adapters_from_store(local, kAdapterPrefix, shape_);
        correct += predict_first(*encoder_, split.inputs[i], task.labels, w, split.targets[i]).correct;
    }
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

double Learner::evaluate(const PreparedTask& task) const { return evaluate_split(task, task.test); }

double Learner::evaluate_split(const PreparedTask& task, const Split& split) const {
    const ModelKind kind = model_kind(config_.algorithm);
    if (kind == ModelKind::Majority) {
        auto it = majority_.find(task.name);
        if (it == majority_.end()) throw std::invalid_argument("task " + task.name + " has not been seen by the learner");
        std::size_t correct = 0;
        for (std::size_t t : split.targets) correct += t == it->second;
        return static_cast<double>(correct) / static_cast<double>(split.size());
    }
    if (uses_mbpa(config_.algorithm) && config_.mbpa_local_steps > 0 && !examples_.empty())
        return mbpa_accuracy(task, split);
    return accuracy_with(task_adapters(task), task, split);
}

Prediction Learner::predict(const PreparedTask& task, std::span<const double> h1,
                            std::optional<std::size_t> target) const {
    if (model_kind(config_.algorithm) == ModelKind::Majority) {
        Prediction p;
        p.scores.assign(task.labels.size(), 0.0);
        p.predicted_index = majority_.at(task.name);
        p.scores[p.predicted_index] = 1.0;
        p.correct = target.has_value() && *target == p.predicted_index;
        return p;
    }
    return predict_first(*encoder_, h1, task.labels, task_adapters(task), target);
}

double Learner::fewshot_accuracy(const PreparedTask& episode, std::uint64_t adaptation_seed) const {
    if (episode.train.size() == 0) throw std::invalid_argument("few-shot episode of " + episode.name + " is empty");
    ModelKind kind = model_kind(config_.algorithm);
    if (kind == ModelKind::Majority) {
        const std::size_t label = majority_label(episode.train.targets, episode.labels.size());
        std::size_t correct = 0;
        for (std::size_t t : episode.test.targets) correct += t == label;
        return static_cast<double>(correct) / static_cast<double>(episode.test.size());
    }

    ParamStore local = store_;
    TaskRepresentation rep;
    std::string emb;
    if (kind == ModelKind::Context) {
        // K = |episode|: the two representations coincide.
        rep.high = mean_representation(episode.train_reps);
        rep.few = rep.high;
        rep.sample_size = episode.train.size();
        if (config_.fewshot_target == FewshotTarget::Adapters) {
            const auto w = hnet_.generate_weights(local, rep.high);
            local = ParamStore();
            add_adapter_params(local, kAdapterPrefix, w);
            kind = ModelKind::Direct;
        }
    } else if (kind == ModelKind::Embedding) {
        Rng rng(derive_seed(adaptation_seed, {seed_tag("embedding")}));
        emb = kFewshotEmbedding;
        local.set(emb, random_vector(shape_.model_dim, config_.embedding_init_std, rng));
        if (config_.fewshot_target == FewshotTarget::Adapters) {
            const auto w = hnet_.generate_weights(local, local.value(emb).storage());
            local = ParamStore();
            add_adapter_params(local, kAdapterPrefix, w);
            kind = ModelKind::Direct;
        }
    }

    const LossContext ctx{encoder_, &hnet_, &shape_, kind, false};
    num::AdamState adam(config_.learning_rate);
    for (std::size_t epoch = 1; epoch <= config_.fewshot_epochs; ++epoch) {
        Rng rng(derive_seed(adaptation_seed, {seed_tag("fewshot"), epoch}));
        for (const auto& idx : make_batches(episode.train.size(), config_.batch_size, rng)) {
            Graph g;
            g.backward(batch_objective(g, local, ctx, episode, episode.train, idx, &rep, emb));
            num::adam_step(local, adam);
        }
    }

    AdapterWeights w;
    switch (kind) {
        case ModelKind::Direct: w = adapters_from_store(local, kAdapterPrefix, shape_); break;
        case ModelKind::Context: w = hnet_.generate_weights(local, rep.high); break;
        case ModelKind::Embedding: w = hnet_.generate_weights(local, local.value(emb).storage()); break;
        case ModelKind::Majority: break;
    }
    return accuracy_with(w, episode, episode.test);
}

std::uint64_t Learner::checksum() const {
    std::uint64_t h = store_.checksum();
    for (const auto& [name, z] : z_high_) h = mix64(h ^ num::checksum(z, fnv1a64(name)));
    for (const auto& e : memory_.entries()) h = mix64(h ^ num::checksum(e.snapshot, fnv1a64(e.task)));
    for (const auto& [name, s] : single_models_) h = mix64(h ^ s.checksum() ^ fnv1a64(name));
    for (const auto& [name, label] : majority_) h = mix64(h ^ fnv1a64(name) ^ label);
    return h;
}

std::size_t Learner::trainable_parameters() const { return store_.parameter_count(); }

}  // namespace clif
