#include "clif/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace clif::num {

namespace {

struct Dims {
    std::size_t rows;
    std::size_t cols;
};

Dims as_matrix(const Tensor& t) {
    if (t.rank() == 1) return {1, t.shape()[0]};
    if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
    throw ShapeError("expected rank-1 or rank-2 tensor, got " + shape_str(t.shape()));
}

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
}

// out[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    // Four output columns per pass for independent accumulator chains; each
    // dot product still sums in index order.
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* orow = out + i * n;
        std::size_t j = 0;
        for (; j + 4 <= n; j += 4) {
            const double* b0 = b + j * k;
            const double* b1 = b0 + k;
            const double* b2 = b1 + k;
            const double* b3 = b2 + k;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = arow[p];
                s0 += av * b0[p];
                s1 += av * b1[p];
                s2 += av * b2[p];
                s3 += av * b3[p];
            }
            orow[j] += s0;
            orow[j + 1] += s1;
            orow[j + 2] += s2;
            orow[j + 3] += s3;
        }
        for (; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            orow[j] += s;
        }
    }
}

// out[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* orow = out + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void accumulate(Tensor* dst, const Tensor& src, double factor = 1.0) {
    if (!dst) return;
    auto d = dst->data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
}

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    const Dims da = as_matrix(av);
    const Dims db = as_matrix(bv);
    if (da.cols != db.rows) mismatch("matmul", av, bv);
    Tensor out(Shape{da.rows, db.cols}, 0.0);
    gemm_nn(av.data().data(), bv.data().data(), out.data().data(), da.rows, da.cols, db.cols);
    return g.push(std::move(out), {a, b},
                  [da, db](Graph& gr, std::size_t self) {
                      const auto& in = gr.inputs_of(self);
                      const double* dout = gr.grad_at(self).data().data();
                      if (Tensor* ga = gr.grad_buffer(in[0]))
                          gemm_nt(dout, gr.value_at(in[1]).data().data(), ga->data().data(), da.rows, db.cols,
                                  da.cols);
                      if (Tensor* gb = gr.grad_buffer(in[1]))
                          gemm_tn(gr.value_at(in[0]).data().data(), dout, gb->data().data(), da.rows, da.cols,
                                  db.cols);
                  },
                  "matmul");
}

Var matmul_nt(Graph& g, Var a, Var b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    const Dims da = as_matrix(av);
    const Dims db = as_matrix(bv);
    if (da.cols != db.cols) mismatch("matmul_nt", av, bv);
    Tensor out(Shape{da.rows, db.rows}, 0.0);
    gemm_nt(av.data().data(), bv.data().data(), out.data().data(), da.rows, da.cols, db.rows);
    return g.push(std::move(out), {a, b},
                  [da, db](Graph& gr, std::size_t self) {
                      const auto& in = gr.inputs_of(self);
                      const double* dout = gr.grad_at(self).data().data();
                      if (Tensor* ga = gr.grad_buffer(in[0]))
                          gemm_nn(dout, gr.value_at(in[1]).data().data(), ga->data().data(), da.rows, db.rows,
                                  da.cols);
                      if (Tensor* gb = gr.grad_buffer(in[1]))
                          gemm_tn(dout, gr.value_at(in[0]).data().data(), gb->data().data(), da.rows, db.rows,
                                  da.cols);
                  },
                  "matmul_nt");
}

Var add(Graph& g, Var a, Var b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (av.shape() != bv.shape()) mismatch("add", av, bv);
    Tensor out = av;
    auto o = out.data();
    auto s = bv.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += s[i];
    return g.push(std::move(out), {a, b},
                  [](Graph& gr, std::size_t self) {
                      const auto& in = gr.inputs_of(self);
                      accumulate(gr.grad_buffer(in[0]), gr.grad_at(self));
                      accumulate(gr.grad_buffer(in[1]), gr.grad_at(self));
                  },
                  "add");
}

Var sub(Graph& g, Var a, Var b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (av.shape() != bv.shape()) mismatch("sub", av, bv);
    Tensor out = av;
    auto o = out.data();
    auto s = bv.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= s[i];
    return g.push(std::move(out), {a, b},
                  [](Graph& gr, std::size_t self) {
                      const auto& in = gr.inputs_of(self);
                      accumulate(gr.grad_buffer(in[0]), gr.grad_at(self));
                      accumulate(gr.grad_buffer(in[1]), gr.grad_at(self), -1.0);
                  },
                  "sub");
}

Var mul(Graph& g, Var a, Var b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (av.shape() != bv.shape()) mismatch("mul", av, bv);
    Tensor out = av;
    auto o = out.data();
    auto s = bv.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= s[i];
    return g.push(std::move(out), {a, b},
                  [](Graph& gr, std::size_t self) {
                      const auto& in = gr.inputs_of(self);
                      auto d = gr.grad_at(self).data();
                      if (Tensor* ga = gr.grad_buffer(in[0])) {
                          auto x = gr.value_at(in[1]).data();
                          auto o = ga->data();
                          for (std::size_t i = 0; i < o.size(); ++i) o[i] += d[i] * x[i];
                      }
                      if (Tensor* gb = gr.grad_buffer(in[1])) {
                          auto x = gr.value_at(in[0]).data();
                          auto o = gb->data();
                          for (std::size_t i = 0; i < o.size(); ++i) o[i] += d[i] * x[i];
                      }
                  },
                  "mul");
}

Var add_bias(Graph& g, Var a, Var bias) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(bias);
    const Dims da = as_matrix(av);
    if (bv.size() != da.cols) mismatch("add_bias", av, bv);
    Tensor out = av;
    auto o = out.data();
    auto b = bv.data();
    for (std::size_t i = 0; i < da.rows; ++i)
        for (std::size_t j = 0; j < da.cols; ++j) o[i * da.cols + j] += b[j];
    return g.push(std::move(out), {a, bias},
                  [da](Graph& gr, std::size_t self) {
                      const auto& in = gr.inputs_of(self);
                      const Tensor& d = gr.grad_at(self);
                      accumulate(gr.grad_buffer(in[0]), d);
                      if (Tensor* gb = gr.grad_buffer(in[1])) {
                          auto o = gb->data();
                          auto s = d.data();
                          for (std::size_t i = 0; i < da.rows; ++i)
                              for (std::size_t j = 0; j < da.cols; ++j) o[j] += s[i * da.cols + j];
                      }
                  },
                  "add_bias");
}

Var scale(Graph& g, Var a, double s) {
    Tensor out = g.value(a);
    for (double& x : out.data()) x *= s;
    return g.push(std::move(out), {a},
                  [s](Graph& gr, std::size_t self) {
                      accumulate(gr.grad_buffer(gr.inputs_of(self)[0]), gr.grad_at(self), s);
                  },
                  "scale");
}

Var tanh(Graph& g, Var a) {
    Tensor out = g.value(a);
    for (double& x : out.data()) x = std::tanh(x);
    return g.push(std::move(out), {a},
                  [](Graph& gr, std::size_t self) {
                      Tensor* ga = gr.grad_buffer(gr.inputs_of(self)[0]);
                      if (!ga) return;
                      auto y = gr.value_at(self).data();
                      auto d = gr.grad_at(self).data();
                      auto o = ga->data();
                      for (std::size_t i = 0; i < o.size(); ++i) o[i] += d[i] * (1.0 - y[i] * y[i]);
                  },
                  "tanh");
}

Var relu(Graph& g, Var a) {
    Tensor out = g.value(a);
    for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
    return g.push(std::move(out), {a},
                  [](Graph& gr, std::size_t self) {
                      Tensor* ga = gr.grad_buffer(gr.inputs_of(self)[0]);
                      if (!ga) return;
                      auto x = gr.value_at(gr.inputs_of(self)[0]).data();
                      auto d = gr.grad_at(self).data();
                      auto o = ga->data();
                      for (std::size_t i = 0; i < o.size(); ++i)
                          if (x[i] > 0.0) o[i] += d[i];
                  },
                  "relu");
}

Var square(Graph& g, Var a) {
    Tensor out = g.value(a);
    for (double& x : out.data()) x = x * x;
    return g.push(std::move(out), {a},
                  [](Graph& gr, std::size_t self) {
                      Tensor* ga = gr.grad_buffer(gr.inputs_of(self)[0]);
                      if (!ga) return;
                      auto x = gr.value_at(gr.inputs_of(self)[0]).data();
                      auto d = gr.grad_at(self).data();
                      auto o = ga->data();
                      for (std::size_t i = 0; i < o.size(); ++i) o[i] += 2.0 * x[i] * d[i];
                  },
                  "square");
}

Var sum(Graph& g, Var a) {
    double s = 0.0;
    for (double x : g.value(a).data()) s += x;
    return g.push(Tensor::scalar(s), {a},
                  [](Graph& gr, std::size_t self) {
                      Tensor* ga = gr.grad_buffer(gr.inputs_of(self)[0]);
                      if (!ga) return;
                      const double d = gr.grad_at(self)[0];
                      for (double& x : ga->data()) x += d;
                  },
                  "sum");
}

Var mean(Graph& g, Var a) {
    const std::size_t n = g.value(a).size();
    return scale(g, sum(g, a), 1.0 / static_cast<double>(n));
}

Var sum_squares(Graph& g, Var a) {
    double s = 0.0;
    for (double x : g.value(a).data()) s += x * x;
    return g.push(Tensor::scalar(s), {a},
                  [](Graph& gr, std::size_t self) {
                      Tensor* ga = gr.grad_buffer(gr.inputs_of(self)[0]);
                      if (!ga) return;
                      const double d = gr.grad_at(self)[0];
                      auto x = gr.value_at(gr.inputs_of(self)[0]).data();
                      auto o = ga->data();
                      for (std::size_t i = 0; i < o.size(); ++i) o[i] += 2.0 * d * x[i];
                  },
                  "sum_squares");
}

Var dot(Graph& g, Var a, Var b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (av.size() != bv.size()) mismatch("dot", av, bv);
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
    return g.push(Tensor::scalar(s), {a, b},
                  [](Graph& gr, std::size_t self) {
                      const auto& in = gr.inputs_of(self);
                      const double d = gr.grad_at(self)[0];
                      accumulate(gr.grad_buffer(in[0]), gr.value_at(in[1]), d);
                      accumulate(gr.grad_buffer(in[1]), gr.value_at(in[0]), d);
                  },
                  "dot");
}

Var mean_rows(Graph& g, Var a) {
    const Tensor& av = g.value(a);
    const Dims da = as_matrix(av);
    Tensor out(Shape{da.cols}, 0.0);
    for (std::size_t i = 0; i < da.rows; ++i)
        for (std::size_t j = 0; j < da.cols; ++j) out[j] += av[i * da.cols + j];
    const double inv = 1.0 / static_cast<double>(da.rows);
    for (double& x : out.data()) x *= inv;
    return g.push(std::move(out), {a},
                  [da, inv](Graph& gr, std::size_t self) {
                      Tensor* ga = gr.grad_buffer(gr.inputs_of(self)[0]);
                      if (!ga) return;
                      auto d = gr.grad_at(self).data();
                      auto o = ga->data();
                      for (std::size_t i = 0; i < da.rows; ++i)
                          for (std::size_t j = 0; j < da.cols; ++j) o[i * da.cols + j] += inv * d[j];
                  },
                  "mean_rows");
}

Var concat_rows(Graph& g, const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t width = as_matrix(g.value(parts[0])).cols;
    std::size_t rows = 0;
    for (Var p : parts) {
        const Dims d = as_matrix(g.value(p));
        if (d.cols != width) mismatch("concat_rows", g.value(parts[0]), g.value(p));
        rows += d.rows;
    }
    std::vector<double> data;
    data.reserve(rows * width);
    for (Var p : parts) {
        auto s = g.value(p).data();
        data.insert(data.end(), s.begin(), s.end());
    }
    return g.push(Tensor(Shape{rows, width}, std::move(data)), parts,
                  [](Graph& gr, std::size_t self) {
                      auto d = gr.grad_at(self).data();
                      std::size_t offset = 0;
                      for (std::size_t in : gr.inputs_of(self)) {
                          const std::size_t n = gr.value_at(in).size();
                          if (Tensor* gi = gr.grad_buffer(in)) {
                              auto o = gi->data();
                              for (std::size_t i = 0; i < n; ++i) o[i] += d[offset + i];
                          }
                          offset += n;
                      }
                  },
                  "concat_rows");
}

Var slice(Graph& g, Var a, std::size_t offset, Shape shape) {
    const Tensor& av = g.value(a);
    const std::size_t n = shape_numel(shape);
    if (offset + n > av.size())
        throw ShapeError("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + n) +
                         ") exceeds tensor of shape " + shape_str(av.shape()));
    std::vector<double> data(av.data().begin() + static_cast<std::ptrdiff_t>(offset),
                             av.data().begin() + static_cast<std::ptrdiff_t>(offset + n));
    return g.push(Tensor(std::move(shape), std::move(data)), {a},
                  [offset, n](Graph& gr, std::size_t self) {
                      Tensor* ga = gr.grad_buffer(gr.inputs_of(self)[0]);
                      if (!ga) return;
                      auto d = gr.grad_at(self).data();
                      auto o = ga->data();
                      for (std::size_t i = 0; i < n; ++i) o[offset + i] += d[i];
                  },
                  "slice");
}

std::vector<double> softmax(std::span<const double> scores) {
    if (scores.empty()) throw ShapeError("softmax: empty score vector");
    const double mx = *std::max_element(scores.begin(), scores.end());
    std::vector<double> p(scores.size());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) z += (p[i] = std::exp(scores[i] - mx));
    for (double& x : p) x /= z;
    return p;
}

namespace {

// Returns the clamped log-probability of `target` and writes softmax into p.
double log_prob(std::span<const double> scores, std::size_t target, std::span<double> p) {
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) z += (p[i] = std::exp(scores[i] - mx));
    for (double& x : p) x /= z;
    return scores[target] - mx - std::log(z);
}

}  // namespace

double cross_entropy_value(std::span<const double> scores, std::size_t target) {
    if (scores.empty()) throw ShapeError("softmax_cross_entropy: empty score vector");
    if (target >= scores.size())
        throw ShapeError("softmax_cross_entropy: target " + std::to_string(target) + " out of range for " +
                         std::to_string(scores.size()) + " scores");
    std::vector<double> p(scores.size());
    return -std::max(log_prob(scores, target, p), kLogProbFloor);
}

Var softmax_cross_entropy(Graph& g, Var scores, std::size_t target) {
    const Tensor& sv = g.value(scores);
    if (sv.empty()) throw ShapeError("softmax_cross_entropy: empty score vector");
    std::vector<std::size_t> t{target};
    return cross_entropy_rows(g, scores, t);
}

Var cross_entropy_rows(Graph& g, Var scores, std::span<const std::size_t> targets) {
    const Tensor& sv = g.value(scores);
    if (sv.empty()) throw ShapeError("cross_entropy_rows: empty score matrix");
    const Dims ds = as_matrix(sv);
    if (targets.size() != ds.rows)
        throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for score shape " +
                         shape_str(sv.shape()));
    Tensor probs(Shape{ds.rows, ds.cols}, 0.0);
    std::vector<std::uint8_t> clamped(ds.rows, 0);
    double total = 0.0;
    for (std::size_t i = 0; i < ds.rows; ++i) {
        if (targets[i] >= ds.cols)
            throw ShapeError("cross_entropy_rows: target " + std::to_string(targets[i]) + " out of range for " +
                             std::to_string(ds.cols) + " scores");
        auto row = sv.data().subspan(i * ds.cols, ds.cols);
        auto p = probs.data().subspan(i * ds.cols, ds.cols);
        const double lp = log_prob(row, targets[i], p);
        if (lp < kLogProbFloor) clamped[i] = 1;
        total += -std::max(lp, kLogProbFloor);
    }
    const double inv = 1.0 / static_cast<double>(ds.rows);
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    return g.push(Tensor::scalar(total * inv), {scores},
                  [ds, inv, tgt = std::move(tgt), probs = std::move(probs), clamped = std::move(clamped)](
                      Graph& gr, std::size_t self) {
                      Tensor* gs = gr.grad_buffer(gr.inputs_of(self)[0]);
                      if (!gs) return;
                      const double d = gr.grad_at(self)[0] * inv;
                      auto o = gs->data();
                      for (std::size_t i = 0; i < ds.rows; ++i) {
                          if (clamped[i]) continue;
                          for (std::size_t j = 0; j < ds.cols; ++j) {
                              const double onehot = j == tgt[i] ? 1.0 : 0.0;
                              o[i * ds.cols + j] += d * (probs[i * ds.cols + j] - onehot);
                          }
                      }
                  },
                  "cross_entropy");
}

}  // namespace clif::num
