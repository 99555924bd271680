#include "clif/numcore/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "clif/rng.hpp"

namespace clif::num {

void adam_step(ParamStore& store, AdamState& state) {
    ++state.step;
    store.increment_step();
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    const bool check = finite_checks_enabled();
    for (auto& [name, entry] : store.entries()) {
        auto& mom = state.moments[name];
        if (mom.first.size() != entry.value.size()) {
            mom.first = Tensor(entry.value.shape(), 0.0);
            mom.second = Tensor(entry.value.shape(), 0.0);
        }
        auto g = entry.grad.data();
        auto w = entry.value.data();
        auto m = mom.first.data();
        auto v = mom.second.data();
        const bool any = std::any_of(g.begin(), g.end(), [](double x) { return x != 0.0; });
        const double b1 = state.beta1, b2 = state.beta2, lr = state.learning_rate, eps = state.epsilon;
        const double inv_c1 = 1.0 / c1, inv_c2 = 1.0 / c2;
        if (any) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                w[i] -= lr * (m[i] * inv_c1) / (std::sqrt(v[i] * inv_c2) + eps);
            }
        } else {
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] *= b1;
                v[i] *= b2;
            }
        }
        if (check && !entry.value.all_finite())
            throw std::runtime_error("non-finite parameter after Adam update: " + name);
        entry.grad.fill(0.0);
    }
}

GradCheckReport grad_check(const LossBuilder& build, ParamStore& store, const GradCheckOptions& options) {
    store.zero_grad();
    {
        Graph g;
        Var loss = build(g, store);
        g.backward(loss);
    }
    std::map<std::string, Tensor> analytic;
    for (auto& [name, e] : store.entries()) analytic[name] = e.grad;
    store.zero_grad();

    auto eval = [&] {
        Graph g;
        return g.value(build(g, store)).item();
    };

    GradCheckReport report;
    Rng rng(options.sample_seed);
    for (auto& [name, e] : store.entries()) {
        const std::size_t n = e.value.size();
        std::vector<std::size_t> indices;
        if (options.max_entries_per_param == 0 || options.max_entries_per_param >= n) {
            indices.resize(n);
            for (std::size_t i = 0; i < n; ++i) indices[i] = i;
        } else {
            indices = rng.sample_without_replacement(n, options.max_entries_per_param);
        }
        for (std::size_t i : indices) {
            double& w = e.value[i];
            const double orig = w;
            w = orig + options.step;
            const double up = eval();
            w = orig - options.step;
            const double down = eval();
            w = orig;
            const double numeric = (up - down) / (2.0 * options.step);
            const double a = analytic[name][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
            const double rel = std::abs(a - numeric) / denom;
            ++report.entries_checked;
            if (rel > report.max_rel_error || report.worst_param.empty()) {
                if (rel >= report.max_rel_error) {
                    report.max_rel_error = rel;
                    report.worst_param = name;
                    report.worst_index = i;
                }
            }
        }
    }
    report.passed = report.max_rel_error < options.tolerance;
    return report;
}

}  // namespace clif::num
