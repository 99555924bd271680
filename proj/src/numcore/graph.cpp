#include "clif/numcore/graph.hpp"

#include <atomic>
#include <stdexcept>

namespace clif::num {

namespace {
std::atomic<bool> g_finite_checks{false};
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    if (entries_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    return set(name, std::move(init));
}

Tensor& ParamStore::set(const std::string& name, Tensor init) {
    Tensor grad(init.shape(), 0.0);
    auto& e = entries_[name];
    e.value = std::move(init);
    e.grad = std::move(grad);
    return e.value;
}

void ParamStore::erase(const std::string& name) { entries_.erase(name); }

Tensor& ParamStore::value(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second.value;
}

const Tensor& ParamStore::value(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second.value;
}

Tensor& ParamStore::grad(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second.grad;
}

const Tensor& ParamStore::grad(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second.grad;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, e] : entries_) e.grad.fill(0.0);
}

std::vector<double> ParamStore::flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& [name, e] : entries_) out.insert(out.end(), e.value.data().begin(), e.value.data().end());
    return out;
}

std::uint64_t ParamStore::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, e] : entries_) {
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        h = num::checksum(e.value.data(), h);
    }
    return h;
}

Var Graph::constant(Tensor t) {
    t.set_requires_grad(false);
    return push(std::move(t), {}, nullptr, "constant");
}

Var Graph::leaf(Tensor t) {
    const bool rg = t.requires_grad();
    Var v = push(std::move(t), {}, nullptr, "leaf");
    nodes_[v.id].needs_grad = rg;
    return v;
}

Var Graph::param(ParamStore& store, const std::string& name) {
    auto& entry = store.entries().at(name);
    Node n;
    n.view = &entry.value;
    n.op = "param";
    n.needs_grad = true;
    n.store_grad = &entry.grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Graph::push(Tensor value, std::vector<Var> inputs, BackwardFn fn, const char* op) {
    if (finite_checks_enabled() && !value.all_finite())
        throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.inputs.reserve(inputs.size());
    for (Var in : inputs) {
        if (!in.valid() || in.id >= nodes_.size()) throw std::invalid_argument(std::string("invalid input to op ") + op);
        n.inputs.push_back(in.id);
        n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Tensor* Graph::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    if (n.store_grad) return n.store_grad;
    if (n.grad.size() != n.val().size()) n.grad = Tensor(n.val().shape(), 0.0);
    return &n.grad;
}

const Tensor& Graph::grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.store_grad) return *n.store_grad;
    if (n.grad.size() != n.val().size()) n.grad = Tensor(n.val().shape(), 0.0);
    return n.grad;
}

void Graph::backward(Var loss) {
    Node& root = nodes_.at(loss.id);
    if (root.val().size() != 1)
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(root.val().shape()));
    for (auto& n : nodes_)
        if (n.grad.size()) n.grad.fill(0.0);
    if (!root.needs_grad) return;
    grad_buffer(loss.id)->data()[0] = 1.0;
    const bool check = finite_checks_enabled();
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.size() == 0) continue;
        if (check && !n.grad.all_finite())
            throw std::runtime_error(std::string("non-finite gradient at op '") + n.op + "'");
        if (n.backward) n.backward(*this, i);
    }
}

}  // namespace clif::num
