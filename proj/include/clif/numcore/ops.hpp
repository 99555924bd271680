#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "clif/numcore/graph.hpp"

namespace clif::num {

// Rank-1 operands of matmul are treated as a single row.
Var matmul(Graph& g, Var a, Var b);
// a (m x k) times b^T where b is (n x k).
Var matmul_nt(Graph& g, Var a, Var b);

Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
// Adds a length-n bias to every row of an (m x n) matrix.
Var add_bias(Graph& g, Var a, Var bias);
Var scale(Graph& g, Var a, double s);

Var tanh(Graph& g, Var a);
Var relu(Graph& g, Var a);
Var square(Graph& g, Var a);

Var sum(Graph& g, Var a);
Var mean(Graph& g, Var a);
Var sum_squares(Graph& g, Var a);
Var dot(Graph& g, Var a, Var b);

// Column means of an (m x n) matrix, shape [n].
Var mean_rows(Graph& g, Var a);
// Stacks equal-width rows/matrices vertically.
Var concat_rows(Graph& g, const std::vector<Var>& parts);
// View `count = numel(shape)` contiguous entries starting at `offset`.
Var slice(Graph& g, Var a, std::size_t offset, Shape shape);

// -log softmax(scores)[target]; scores rank-1.
Var softmax_cross_entropy(Graph& g, Var scores, std::size_t target);
// Mean over rows of per-row softmax cross-entropy.
Var cross_entropy_rows(Graph& g, Var scores, std::span<const std::size_t> targets);

// Clamp applied to log-probabilities inside the cross-entropy ops.
inline constexpr double kLogProbFloor = -50.0;

// Plain-value helpers used outside the tape.
std::vector<double> softmax(std::span<const double> scores);
double cross_entropy_value(std::span<const double> scores, std::size_t target);

}  // namespace clif::num
