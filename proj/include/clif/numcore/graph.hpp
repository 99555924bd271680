#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "clif/numcore/tensor.hpp"

namespace clif::num {

/// Named trainable parameters with gradient slots of identical shape.
class ParamStore {
public:
    struct Entry {
        Tensor value;
        Tensor grad;
    };

    // Throws on duplicate names.
    Tensor& add(const std::string& name, Tensor init);
    // Adds or replaces; the gradient slot is reset.
    Tensor& set(const std::string& name, Tensor init);
    void erase(const std::string& name);

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);
    const Tensor& grad(const std::string& name) const;

    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

    std::size_t parameter_count() const;
    void zero_grad();

    std::uint64_t step() const { return step_; }
    void increment_step() { ++step_; }

    // Values concatenated in name order.
    std::vector<double> flatten() const;
    std::uint64_t checksum() const;

private:
    std::map<std::string, Entry> entries_;
    std::uint64_t step_ = 0;
};

/// Handle to a node inside a Graph.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Debug-mode NaN/Inf guard on every activation and gradient.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

/// Dynamically built reverse-mode autodiff tape.
///
/// Nodes are appended in evaluation order, so the insertion order is a
/// topological order and backward() is a single reverse sweep. Parameter
/// nodes reference the store value (the store must not be mutated while the
/// graph is in use) and backward() accumulates straight into the store's
/// gradient slot.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    Var constant(Tensor t);
    // Tracks a gradient iff t.requires_grad().
    Var leaf(Tensor t);
    Var param(ParamStore& store, const std::string& name);

    const Tensor& value(Var v) const { return nodes_.at(v.id).val(); }
    // Gradient of the last backward() target; zero tensor if untouched. For
    // parameter nodes this is the store's accumulated gradient slot.
    const Tensor& grad(Var v);
    bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    void backward(Var loss);

    // Op-author interface.
    Var push(Tensor value, std::vector<Var> inputs, BackwardFn fn, const char* op);
    const Tensor& value_at(std::size_t id) const { return nodes_[id].val(); }
    const Tensor& grad_at(std::size_t id) const { return nodes_[id].grad; }
    // Lazily allocated gradient buffer, or nullptr when the node needs none.
    Tensor* grad_buffer(std::size_t id);
    const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_[id].inputs; }

private:
    struct Node {
        Tensor value;
        const Tensor* view = nullptr;  // parameter nodes read the store directly
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool needs_grad = false;
        Tensor* store_grad = nullptr;
        const char* op = "";
        const Tensor& val() const { return view ? *view : value; }
    };
    std::deque<Node> nodes_;
};

}  // namespace clif::num
