#include "clif/bihnet.hpp"

#include <cmath>
#include <stdexcept>

#include "clif/binio.hpp"
#include "clif/numcore/ops.hpp"

namespace clif {

using num::Graph;
using num::Shape;
using num::Tensor;
using num::Var;

Vec mean_representation(std::span<const Vec> reps, std::span<const std::size_t> indices) {
    if (reps.empty()) throw std::invalid_argument("task representation of an empty dataset");
    const std::size_t d = reps[0].size();
    Vec z(d, 0.0);
    auto add_row = [&](const Vec& r) {
        if (r.size() != d) throw num::ShapeError("inconsistent example representation dims");
        for (std::size_t j = 0; j < d; ++j) z[j] += r[j];
    };
    std::size_t n = 0;
    if (indices.empty()) {
        for (const Vec& r : reps) add_row(r);
        n = reps.size();
    } else {
        for (std::size_t i : indices) add_row(reps[i]);
        n = indices.size();
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (double& x : z) x *= inv;
    return z;
}

TaskRepresentation compute_task_representation(std::span<const Vec> example_reps, std::size_t sample_size,
                                               std::uint64_t sample_seed) {
    if (example_reps.empty()) throw std::invalid_argument("compute_task_representation: empty dataset");
    if (sample_size == 0) throw std::invalid_argument("compute_task_representation: sample size must be >= 1");
    TaskRepresentation rep;
    rep.high = mean_representation(example_reps);
    const std::size_t k = std::min(sample_size, example_reps.size());
    rep.sample_size = k;
    if (k == example_reps.size()) {
        // A full sample is the whole dataset; reuse z_h so the two agree bitwise.
        rep.few = rep.high;
    } else {
        Rng rng(sample_seed);
        auto idx = rng.sample_without_replacement(example_reps.size(), k);
        rep.few = mean_representation(example_reps, idx);
    }
    return rep;
}

TaskRepresentation compute_task_representation(const FrozenEncoder& encoder,
                                               std::span<const std::pair<std::string, std::string>> examples,
                                               std::size_t sample_size, std::uint64_t sample_seed) {
    std::vector<Vec> reps;
    reps.reserve(examples.size());
    for (const auto& [x, y] : examples) reps.push_back(encoder.represent_example(x, y));
    return compute_task_representation(reps, sample_size, sample_seed);
}

HyperNetwork::HyperNetwork(AdapterShape adapters, std::size_t hidden, std::string prefix)
    : adapters_(adapters), hidden_(hidden), prefix_(std::move(prefix)) {
    adapters_.validate();
    if (hidden_ == 0) throw std::invalid_argument("hypernetwork hidden size must be positive");
}

std::size_t HyperNetwork::parameter_count() const {
    return hypernet_parameter_count(input_dim(), hidden_, output_dim());
}

void HyperNetwork::init(num::ParamStore& store, Rng& rng, double output_scale) const {
    const std::size_t d = input_dim();
    const std::size_t p = output_dim();
    const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double out_std = output_scale / std::sqrt(static_cast<double>(hidden_));
    Tensor w1(Shape{hidden_, d});
    for (double& x : w1.data()) x = rng.normal(0.0, in_std);
    Tensor w2(Shape{p, hidden_});
    for (double& x : w2.data()) x = rng.normal(0.0, out_std);
    store.set(this->w1(), std::move(w1));
    store.set(this->b1(), Tensor(Shape{hidden_}, 0.0));
    store.set(this->w2(), std::move(w2));
    store.set(this->b2(), Tensor(Shape{p}, 0.0));
}

Var HyperNetwork::generate(Graph& g, num::ParamStore& store, Var z) const {
    if (g.value(z).cols() != input_dim())
        throw num::ShapeError("hypernetwork: representation shape " + num::shape_str(g.value(z).shape()) +
                              " does not match input dim " + std::to_string(input_dim()));
    Var h = num::tanh(g, num::add_bias(g, num::matmul_nt(g, z, g.param(store, w1())), g.param(store, b1())));
    return num::add_bias(g, num::matmul_nt(g, h, g.param(store, w2())), g.param(store, b2()));
}

std::vector<double> HyperNetwork::generate_flat(const num::ParamStore& store, std::span<const double> z) const {
    const std::size_t d = input_dim();
    if (z.size() != d)
        throw num::ShapeError("hypernetwork: representation length " + std::to_string(z.size()) +
                              " does not match input dim " + std::to_string(d));
    const Tensor& W1 = store.value(w1());
    const Tensor& B1 = store.value(b1());
    const Tensor& W2 = store.value(w2());
    const Tensor& B2 = store.value(b2());
    std::vector<double> h(hidden_);
    for (std::size_t j = 0; j < hidden_; ++j) {
        const double* row = W1.data().data() + j * d;
        double s = 0.0;
        for (std::size_t p = 0; p < d; ++p) s += z[p] * row[p];
        h[j] = std::tanh(s + B1[j]);
    }
    const std::size_t out = output_dim();
    std::vector<double> flat(out);
    for (std::size_t i = 0; i < out; ++i) {
        const double* row = W2.data().data() + i * hidden_;
        double s = 0.0;
        for (std::size_t j = 0; j < hidden_; ++j) s += h[j] * row[j];
        flat[i] = s + B2[i];
    }
    return flat;
}

AdapterWeights HyperNetwork::generate_weights(const num::ParamStore& store, std::span<const double> z) const {
    return AdapterWeights::unflatten(adapters_, generate_flat(store, z));
}

void RepresentationMemory::add(const std::string& task, Vec z_high) {
    if (find(task)) throw std::invalid_argument("task already in representation memory: " + task);
    entries_.push_back(MemoryEntry{task, std::move(z_high), {}});
}

void RepresentationMemory::update(const std::string& task, Vec z_high) {
    for (auto& e : entries_)
        if (e.task == task) {
            e.z_high = std::move(z_high);
            return;
        }
    add(task, std::move(z_high));
}

const MemoryEntry* RepresentationMemory::find(const std::string& task) const {
    for (const auto& e : entries_)
        if (e.task == task) return &e;
    return nullptr;
}

void RepresentationMemory::snapshot(const HyperNetwork& hnet, const num::ParamStore& store) {
    for (auto& e : entries_) e.snapshot = hnet.generate_flat(store, e.z_high);
}

namespace {

binio::Writer memory_writer(const std::vector<MemoryEntry>& entries) {
    binio::Writer w(binio::FileKind::RepresentationMemory);
    w.u64(entries.size());
    for (const auto& e : entries) {
        w.str(e.task);
        w.f64s(e.z_high);
        w.f64s(e.snapshot);
    }
    return w;
}

RepresentationMemory read_memory(binio::Reader& r);

}  // namespace

std::vector<std::uint8_t> RepresentationMemory::serialize() const { return memory_writer(entries_).bytes(); }

RepresentationMemory RepresentationMemory::deserialize(std::vector<std::uint8_t> bytes) {
    binio::Reader r(std::move(bytes), binio::FileKind::RepresentationMemory);
    return read_memory(r);
}

void RepresentationMemory::save(const std::filesystem::path& path) const { memory_writer(entries_).save(path); }

RepresentationMemory RepresentationMemory::load(const std::filesystem::path& path) {
    auto r = binio::Reader::load(path, binio::FileKind::RepresentationMemory);
    return read_memory(r);
}

namespace {

RepresentationMemory read_memory(binio::Reader& r) {
    RepresentationMemory m;
    const std::uint64_t n = r.u64();
    for (std::uint64_t i = 0; i < n; ++i) {
        MemoryEntry e;
        e.task = r.str();
        e.z_high = r.f64s();
        e.snapshot = r.f64s();
        if (m.find(e.task)) throw binio::FormatError("duplicate task in representation memory: " + e.task);
        m.restore(std::move(e));
    }
    if (!r.at_end()) throw binio::FormatError("trailing bytes after representation memory");
    return m;
}

}  // namespace

std::vector<std::size_t> sample_prior_tasks(std::size_t memory_size, std::size_t count, std::uint64_t step_seed) {
    if (memory_size == 0 || count == 0) return {};
    Rng rng(step_seed);
    return rng.sample_without_replacement(memory_size, std::min(count, memory_size));
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw num::ShapeError("squared_distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

namespace {

std::vector<std::size_t> penalised_entries(const RepresentationMemory& memory, const RegConfig& config,
                                           std::uint64_t step_seed) {
    std::vector<std::size_t> out;
    for (std::size_t i : sample_prior_tasks(memory.size(), config.prior_samples, step_seed))
        if (!memory.entries()[i].snapshot.empty()) out.push_back(i);
    return out;
}

}  // namespace

Var regularization_term(Graph& g, num::ParamStore& store, const HyperNetwork& hnet, const RepresentationMemory& memory,
                        const RegConfig& config, std::uint64_t step_seed) {
    const auto picked = penalised_entries(memory, config, step_seed);
    if (picked.empty()) return g.constant(Tensor::scalar(0.0));
    std::vector<Var> zs;
    std::vector<double> snaps;
    for (std::size_t i : picked) {
        const auto& e = memory.entries()[i];
        zs.push_back(g.constant(Tensor::vector(e.z_high)));
        snaps.insert(snaps.end(), e.snapshot.begin(), e.snapshot.end());
    }
    Var z = num::concat_rows(g, zs);
    Var generated = hnet.generate(g, store, z);
    Var target = g.constant(Tensor(Shape{picked.size(), hnet.output_dim()}, std::move(snaps)));
    Var total = num::sum_squares(g, num::sub(g, generated, target));
    return num::scale(g, total, 1.0 / static_cast<double>(picked.size()));
}

double regularization_value(const num::ParamStore& store, const HyperNetwork& hnet, const RepresentationMemory& memory,
                            const RegConfig& config, std::uint64_t step_seed) {
    const auto picked = penalised_entries(memory, config, step_seed);
    if (picked.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i : picked) {
        const auto& e = memory.entries()[i];
        total += squared_distance(hnet.generate_flat(store, e.z_high), e.snapshot);
    }
    return total / static_cast<double>(picked.size());
}

Var generated_loss(Graph& g, num::ParamStore& store, const HyperNetwork& hnet, const FrozenEncoder& encoder, Var z,
                   Var pooled, std::span<const std::size_t> targets, const LabelSet& labels, InputStage stage) {
    Var flat = hnet.generate(g, store, z);
    return batch_loss(g, encoder, pooled, targets, labels, bind_flat(g, flat, hnet.adapter_shape(), 0), stage);
}

Var bilevel_loss(Graph& g, num::ParamStore& store, const HyperNetwork& hnet, const FrozenEncoder& encoder,
                 const TaskRepresentation& rep, Var pooled, std::span<const std::size_t> targets,
                 const LabelSet& labels, bool use_few, InputStage stage) {
    if (targets.empty()) throw std::invalid_argument("bilevel_loss: empty batch");
    if (!use_few)
        return generated_loss(g, store, hnet, encoder, g.constant(Tensor::vector(rep.high)), pooled, targets, labels,
                              stage);
    Var z = num::concat_rows(g, {g.constant(Tensor::vector(rep.high)), g.constant(Tensor::vector(rep.few))});
    Var flat = hnet.generate(g, store, z);
    const AdapterShape& shape = hnet.adapter_shape();
    Var high = batch_loss(g, encoder, pooled, targets, labels, bind_flat(g, flat, shape, 0), stage);
    Var few = batch_loss(g, encoder, pooled, targets, labels, bind_flat(g, flat, shape, shape.parameter_count()), stage);
    return num::add(g, high, few);
}

}  // namespace clif
