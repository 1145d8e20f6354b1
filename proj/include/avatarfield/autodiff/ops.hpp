#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "avatarfield/autodiff/tape.hpp"

// Differentiable matrix operations recorded on a Tape. Shapes follow the
// batch-major convention: rows are points/rays, columns are features.
namespace avatarfield::ad {

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double k);
Var add_scalar(Tape& t, Var a, double k);

// x (N x in) times w^T, w stored (out x in) like a dense layer.
Var matmul_nt(Tape& t, Var x, Var w);
// Adds a 1 x C row to every row of x.
Var add_row(Tape& t, Var x, Var row);
Var linear(Tape& t, Var x, Var w, Var b);
// Multiplies every column of x (N x C) by col (N x 1).
Var mul_col(Tape& t, Var x, Var col);

Var relu(Tape& t, Var x);
Var softplus(Tape& t, Var x, double beta = 1.0);
Var sigmoid(Tape& t, Var x);
Var exp(Tape& t, Var x);
Var log(Tape& t, Var x);
Var sin(Tape& t, Var x);
Var cos(Tape& t, Var x);
Var square(Tape& t, Var x);
Var sqrt(Tape& t, Var x);

Var concat_cols(Tape& t, std::span<const Var> parts);
Var concat_rows(Tape& t, std::span<const Var> parts);
Var slice_cols(Tape& t, Var x, Eigen::Index start, Eigen::Index count);
Var slice_rows(Tape& t, Var x, Eigen::Index start, Eigen::Index count);
Var gather_rows(Tape& t, Var x, std::vector<std::int32_t> rows);
// Places row i of x at row rows[i] of a zero (out_rows x C) matrix; rows must be distinct.
Var scatter_rows(Tape& t, Var x, std::vector<std::int32_t> rows, Eigen::Index out_rows);
// [x; x; ...; x], k copies stacked vertically.
Var tile_rows(Tape& t, Var x, Eigen::Index k);
// (k*N x C) stacked blocks -> (N x k*C), block j landing in columns [j*C, (j+1)*C).
Var stacked_to_cols(Tape& t, Var x, Eigen::Index k);

Var row_sum(Tape& t, Var x);
Var sum(Tape& t, Var x);
Var mean(Tape& t, Var x);
// Euclidean norm of each row; the subgradient at a zero row is zero.
Var row_norm(Tape& t, Var x);
// Each row divided by its norm; DegenerateError for rows shorter than min_norm.
Var normalize_rows(Tape& t, Var x, double min_norm = 1e-8);
// |x| with subgradient 0 at 0.
Var abs(Tape& t, Var x);
// Same value, no gradient path.
Var detach(Tape& t, Var x);
// Softmax along each row over entries with valid != 0; invalid entries get
// exactly zero, rows without valid entries are all zero. valid may be empty
// (everything valid).
Var softmax_rows(Tape& t, Var x, std::vector<std::int32_t> valid = {});
// Elementwise clamp to [lo, hi]; the clamp pattern is a recorded decision.
Var clamp(Tape& t, Var x, double lo, double hi);

// Convenience: t.constant of an (rows x cols) zero / filled matrix.
Var zeros(Tape& t, Eigen::Index rows, Eigen::Index cols);

}  // namespace avatarfield::ad
