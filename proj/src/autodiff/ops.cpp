#include "avatarfield/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "avatarfield/errors.hpp"

namespace avatarfield::ad {

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
  }
}

// Elementwise unary op whose derivative is a function of (input, output).
template <typename Fwd, typename Deriv>
Var unary(Tape& t, OpKind kind, Var x, Fwd fwd, Deriv deriv) {
  Mat out = t.value(x).unaryExpr(fwd);
  return t.record(kind, {x.id}, std::move(out), [x, deriv](Tape& tp, std::int32_t self) {
    if (!tp.requires_grad(x)) return;
    const Mat& in = tp.value(x);
    const Mat& y = tp.value(self);
    Mat& gx = tp.grad(x);
    const Mat& g = tp.grad(self);
    for (Eigen::Index i = 0; i < in.size(); ++i) gx.data()[i] += g.data()[i] * deriv(in.data()[i], y.data()[i]);
  });
}

double stable_softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Mat out = t.value(a) + t.value(b);
  return t.record(OpKind::Add, {a.id, b.id}, std::move(out), [a, b](Tape& tp, std::int32_t self) {
    const Mat& g = tp.grad(self);
    if (tp.requires_grad(a)) tp.grad(a) += g;
    if (tp.requires_grad(b)) tp.grad(b) += g;
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  Mat out = t.value(a) - t.value(b);
  return t.record(OpKind::Sub, {a.id, b.id}, std::move(out), [a, b](Tape& tp, std::int32_t self) {
    const Mat& g = tp.grad(self);
    if (tp.requires_grad(a)) tp.grad(a) += g;
    if (tp.requires_grad(b)) tp.grad(b) -= g;
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "mul");
  Mat out = t.value(a).cwiseProduct(t.value(b));
  return t.record(OpKind::Mul, {a.id, b.id}, std::move(out), [a, b](Tape& tp, std::int32_t self) {
    const Mat& g = tp.grad(self);
    if (tp.requires_grad(a)) tp.grad(a).array() += g.array() * tp.value(b).array();
    if (tp.requires_grad(b)) tp.grad(b).array() += g.array() * tp.value(a).array();
  });
}

Var scale(Tape& t, Var a, double k) {
  Mat out = t.value(a) * k;
  return t.record(OpKind::Scale, {a.id}, std::move(out), [a, k](Tape& tp, std::int32_t self) {
    if (tp.requires_grad(a)) tp.grad(a) += k * tp.grad(self);
  });
}

Var add_scalar(Tape& t, Var a, double k) {
  Mat out = t.value(a).array() + k;
  return t.record(OpKind::AddScalar, {a.id}, std::move(out), [a](Tape& tp, std::int32_t self) {
    if (tp.requires_grad(a)) tp.grad(a) += tp.grad(self);
  });
}

Var matmul_nt(Tape& t, Var x, Var w) {
  const Mat& xv = t.value(x);
  const Mat& wv = t.value(w);
  if (xv.cols() != wv.cols()) {
    throw ContractError("matmul_nt: inner dimension mismatch " + std::to_string(xv.cols()) + " vs " +
                        std::to_string(wv.cols()));
  }
  Mat out(xv.rows(), wv.rows());
  out.noalias() = xv * wv.transpose();
  return t.record(OpKind::MatMulNT, {x.id, w.id}, std::move(out), [x, w](Tape& tp, std::int32_t self) {
    const Mat& g = tp.grad(self);
    if (tp.requires_grad(x)) tp.grad(x).noalias() += g * tp.value(w);
    if (tp.requires_grad(w)) tp.grad(w).noalias() += g.transpose() * tp.value(x);
  });
}

Var add_row(Tape& t, Var x, Var row) {
  const Mat& xv = t.value(x);
  const Mat& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != xv.cols()) throw ContractError("add_row: row shape mismatch");
  Mat out = xv.rowwise() + rv.row(0);
  return t.record(OpKind::AddRow, {x.id, row.id}, std::move(out), [x, row](Tape& tp, std::int32_t self) {
    const Mat& g = tp.grad(self);
    if (tp.requires_grad(x)) tp.grad(x) += g;
    if (tp.requires_grad(row)) tp.grad(row) += g.colwise().sum();
  });
}

Var linear(Tape& t, Var x, Var w, Var b) { return add_row(t, matmul_nt(t, x, w), b); }

Var mul_col(Tape& t, Var x, Var col) {
  const Mat& xv = t.value(x);
  const Mat& cv = t.value(col);
  if (cv.cols() != 1 || cv.rows() != xv.rows()) throw ContractError("mul_col: column shape mismatch");
  Mat out = xv.array().colwise() * cv.col(0).array();
  return t.record(OpKind::MulCol, {x.id, col.id}, std::move(out), [x, col](Tape& tp, std::int32_t self) {
    const Mat& g = tp.grad(self);
    if (tp.requires_grad(x)) tp.grad(x).array() += g.array().colwise() * tp.value(col).col(0).array();
    if (tp.requires_grad(col)) tp.grad(col).col(0) += g.cwiseProduct(tp.value(x)).rowwise().sum();
  });
}

Var relu(Tape& t, Var x) {
  const Mat& xv = t.value(x);
  std::vector<std::int32_t> mask(static_cast<std::size_t>(xv.size()));
  for (Eigen::Index i = 0; i < xv.size(); ++i) mask[static_cast<std::size_t>(i)] = xv.data()[i] > 0.0 ? 1 : 0;
  t.sync(mask);
  Mat out(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.size(); ++i) out.data()[i] = mask[static_cast<std::size_t>(i)] ? xv.data()[i] : 0.0;
  return t.record(OpKind::Relu, {x.id}, std::move(out),
                  [x, mask = std::move(mask)](Tape& tp, std::int32_t self) {
                    if (!tp.requires_grad(x)) return;
                    const Mat& g = tp.grad(self);
                    Mat& gx = tp.grad(x);
                    for (Eigen::Index i = 0; i < g.size(); ++i) {
                      if (mask[static_cast<std::size_t>(i)]) gx.data()[i] += g.data()[i];
                    }
                  });
}

Var softplus(Tape& t, Var x, double beta) {
  return unary(
      t, OpKind::Softplus, x, [beta](double z) { return stable_softplus(beta * z) / beta; },
      [beta](double z, double) { return logistic(beta * z); });
}

Var sigmoid(Tape& t, Var x) {
  return unary(
      t, OpKind::Sigmoid, x, [](double z) { return logistic(z); },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Tape& t, Var x) {
  return unary(
      t, OpKind::Exp, x, [](double z) { return std::exp(z); }, [](double, double y) { return y; });
}

Var log(Tape& t, Var x) {
  return unary(
      t, OpKind::Log, x, [](double z) { return std::log(z); }, [](double z, double) { return 1.0 / z; });
}

Var sin(Tape& t, Var x) {
  return unary(
      t, OpKind::Sin, x, [](double z) { return std::sin(z); }, [](double z, double) { return std::cos(z); });
}

Var cos(Tape& t, Var x) {
  return unary(
      t, OpKind::Cos, x, [](double z) { return std::cos(z); }, [](double z, double) { return -std::sin(z); });
}

Var square(Tape& t, Var x) {
  return unary(
      t, OpKind::Square, x, [](double z) { return z * z; }, [](double z, double) { return 2.0 * z; });
}

Var sqrt(Tape& t, Var x) {
  return unary(
      t, OpKind::Sqrt, x, [](double z) { return std::sqrt(z); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  std::vector<std::int32_t> ids;
  std::vector<Eigen::Index> offsets;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw ContractError("concat_cols: row count mismatch");
    offsets.push_back(cols);
    cols += t.value(p).cols();
    ids.push_back(p.id);
  }
  Mat out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    out.middleCols(offsets[k], t.value(parts[k]).cols()) = t.value(parts[k]);
  }
  std::vector<Var> vars(parts.begin(), parts.end());
  return t.record(OpKind::Concat, std::move(ids), std::move(out),
                  [vars, offsets](Tape& tp, std::int32_t self) {
                    const Mat& g = tp.grad(self);
                    for (std::size_t k = 0; k < vars.size(); ++k) {
                      if (!tp.requires_grad(vars[k])) continue;
                      tp.grad(vars[k]) += g.middleCols(offsets[k], tp.value(vars[k]).cols());
                    }
                  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const Eigen::Index cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  std::vector<std::int32_t> ids;
  std::vector<Eigen::Index> offsets;
  for (Var p : parts) {
    if (t.value(p).cols() != cols) throw ContractError("concat_rows: column count mismatch");
    offsets.push_back(rows);
    rows += t.value(p).rows();
    ids.push_back(p.id);
  }
  Mat out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    out.middleRows(offsets[k], t.value(parts[k]).rows()) = t.value(parts[k]);
  }
  std::vector<Var> vars(parts.begin(), parts.end());
  return t.record(OpKind::Concat, std::move(ids), std::move(out),
                  [vars, offsets](Tape& tp, std::int32_t self) {
                    const Mat& g = tp.grad(self);
                    for (std::size_t k = 0; k < vars.size(); ++k) {
                      if (!tp.requires_grad(vars[k])) continue;
                      tp.grad(vars[k]) += g.middleRows(offsets[k], tp.value(vars[k]).rows());
                    }
                  });
}

Var slice_cols(Tape& t, Var x, Eigen::Index start, Eigen::Index count) {
  const Mat& xv = t.value(x);
  if (start < 0 || count < 0 || start + count > xv.cols()) throw ContractError("slice_cols: out of range");
  Mat out = xv.middleCols(start, count);
  return t.record(OpKind::Slice, {x.id}, std::move(out), [x, start, count](Tape& tp, std::int32_t self) {
    if (tp.requires_grad(x)) tp.grad(x).middleCols(start, count) += tp.grad(self);
  });
}

Var slice_rows(Tape& t, Var x, Eigen::Index start, Eigen::Index count) {
  const Mat& xv = t.value(x);
  if (start < 0 || count < 0 || start + count > xv.rows()) throw ContractError("slice_rows: out of range");
  Mat out = xv.middleRows(start, count);
  return t.record(OpKind::Slice, {x.id}, std::move(out), [x, start, count](Tape& tp, std::int32_t self) {
    if (tp.requires_grad(x)) tp.grad(x).middleRows(start, count) += tp.grad(self);
  });
}

Var gather_rows(Tape& t, Var x, std::vector<std::int32_t> rows) {
  const Mat& xv = t.value(x);
  Mat out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xv.rows()) throw ContractError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
  }
  return t.record(OpKind::GatherRows, {x.id}, std::move(out),
                  [x, rows = std::move(rows)](Tape& tp, std::int32_t self) {
                    if (!tp.requires_grad(x)) return;
                    const Mat& g = tp.grad(self);
                    Mat& gx = tp.grad(x);
                    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
                  });
}

Var scatter_rows(Tape& t, Var x, std::vector<std::int32_t> rows, Eigen::Index out_rows) {
  const Mat& xv = t.value(x);
  if (static_cast<Eigen::Index>(rows.size()) != xv.rows()) throw ContractError("scatter_rows: index count mismatch");
  Mat out = Mat::Zero(out_rows, xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= out_rows) throw ContractError("scatter_rows: index out of range");
    out.row(rows[i]) = xv.row(static_cast<Eigen::Index>(i));
  }
  return t.record(OpKind::ScatterRows, {x.id}, std::move(out),
                  [x, rows = std::move(rows)](Tape& tp, std::int32_t self) {
                    if (!tp.requires_grad(x)) return;
                    const Mat& g = tp.grad(self);
                    Mat& gx = tp.grad(x);
                    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(static_cast<Eigen::Index>(i)) += g.row(rows[i]);
                  });
}

Var tile_rows(Tape& t, Var x, Eigen::Index k) {
  const Mat& xv = t.value(x);
  const Eigen::Index n = xv.rows();
  Mat out(n * k, xv.cols());
  for (Eigen::Index j = 0; j < k; ++j) out.middleRows(j * n, n) = xv;
  return t.record(OpKind::TileRows, {x.id}, std::move(out), [x, k, n](Tape& tp, std::int32_t self) {
    if (!tp.requires_grad(x)) return;
    const Mat& g = tp.grad(self);
    Mat& gx = tp.grad(x);
    for (Eigen::Index j = 0; j < k; ++j) gx += g.middleRows(j * n, n);
  });
}

Var stacked_to_cols(Tape& t, Var x, Eigen::Index k) {
  const Mat& xv = t.value(x);
  if (k <= 0 || xv.rows() % k != 0) throw ContractError("stacked_to_cols: rows not divisible by block count");
  const Eigen::Index n = xv.rows() / k;
  const Eigen::Index c = xv.cols();
  Mat out(n, k * c);
  for (Eigen::Index j = 0; j < k; ++j) out.middleCols(j * c, c) = xv.middleRows(j * n, n);
  return t.record(OpKind::StackedToCols, {x.id}, std::move(out), [x, k, n, c](Tape& tp, std::int32_t self) {
    if (!tp.requires_grad(x)) return;
    const Mat& g = tp.grad(self);
    Mat& gx = tp.grad(x);
    for (Eigen::Index j = 0; j < k; ++j) gx.middleRows(j * n, n) += g.middleCols(j * c, c);
  });
}

Var row_sum(Tape& t, Var x) {
  Mat out = t.value(x).rowwise().sum();
  return t.record(OpKind::RowSum, {x.id}, std::move(out), [x](Tape& tp, std::int32_t self) {
    if (!tp.requires_grad(x)) return;
    tp.grad(x).colwise() += tp.grad(self).col(0);
  });
}

Var sum(Tape& t, Var x) {
  Mat out(1, 1);
  out(0, 0) = t.value(x).sum();
  return t.record(OpKind::Sum, {x.id}, std::move(out), [x](Tape& tp, std::int32_t self) {
    if (!tp.requires_grad(x)) return;
    tp.grad(x).array() += tp.grad(self)(0, 0);
  });
}

Var mean(Tape& t, Var x) {
  const auto n = static_cast<double>(t.value(x).size());
  if (n == 0) throw ContractError("mean of empty matrix");
  return scale(t, sum(t, x), 1.0 / n);
}

Var row_norm(Tape& t, Var x) {
  Mat out = t.value(x).rowwise().norm();
  return t.record(OpKind::RowNorm, {x.id}, std::move(out), [x](Tape& tp, std::int32_t self) {
    if (!tp.requires_grad(x)) return;
    const Mat& xv = tp.value(x);
    const Mat& y = tp.value(self);
    const Mat& g = tp.grad(self);
    Mat& gx = tp.grad(x);
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      if (y(r, 0) > 0.0) gx.row(r) += (g(r, 0) / y(r, 0)) * xv.row(r);
    }
  });
}

Var normalize_rows(Tape& t, Var x, double min_norm) {
  const Mat& xv = t.value(x);
  Mat norms = xv.rowwise().norm();
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    if (!(norms(r, 0) >= min_norm)) {
      throw DegenerateError("normalize_rows: row " + std::to_string(r) + " has norm " + std::to_string(norms(r, 0)));
    }
  }
  Mat out = xv.array().colwise() / norms.col(0).array();
  return t.record(OpKind::Custom, {x.id}, std::move(out), [x, norms = std::move(norms)](Tape& tp, std::int32_t self) {
    if (!tp.requires_grad(x)) return;
    const Mat& y = tp.value(self);
    const Mat& g = tp.grad(self);
    Mat& gx = tp.grad(x);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double yg = y.row(r).dot(g.row(r));
      gx.row(r) += (g.row(r) - yg * y.row(r)) / norms(r, 0);
    }
  });
}

Var abs(Tape& t, Var x) {
  return unary(
      t, OpKind::Custom, x, [](double v) { return std::abs(v); },
      [](double in, double) { return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0); });
}

Var detach(Tape& t, Var x) { return t.constant(t.value(x)); }

Var softmax_rows(Tape& t, Var x, std::vector<std::int32_t> valid) {
  const Mat& xv = t.value(x);
  if (!valid.empty() && static_cast<Eigen::Index>(valid.size()) != xv.size()) {
    throw ContractError("softmax_rows: mask size mismatch");
  }
  auto ok = [&valid, &xv](Eigen::Index r, Eigen::Index c) {
    return valid.empty() || valid[static_cast<std::size_t>(r * xv.cols() + c)] != 0;
  };
  Mat out = Mat::Zero(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      if (ok(r, c)) mx = std::max(mx, xv(r, c));
    }
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      if (ok(r, c)) {
        out(r, c) = std::exp(xv(r, c) - mx);
        z += out(r, c);
      }
    }
    out.row(r) /= z;
  }
  return t.record(OpKind::SoftmaxRows, {x.id}, std::move(out), [x](Tape& tp, std::int32_t self) {
    if (!tp.requires_grad(x)) return;
    const Mat& y = tp.value(self);
    const Mat& g = tp.grad(self);
    Mat& gx = tp.grad(x);
    // dx = y * (g - <g, y>); entries with y == 0 receive nothing.
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    gx.array() += y.array() * (g.colwise() - dots).array();
  });
}

Var clamp(Tape& t, Var x, double lo, double hi) {
  const Mat& xv = t.value(x);
  std::vector<std::int32_t> state(static_cast<std::size_t>(xv.size()));
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    const double v = xv.data()[i];
    state[static_cast<std::size_t>(i)] = v < lo ? -1 : (v > hi ? 1 : 0);
  }
  t.sync(state);
  Mat out(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    const int s = state[static_cast<std::size_t>(i)];
    out.data()[i] = s < 0 ? lo : (s > 0 ? hi : xv.data()[i]);
  }
  return t.record(OpKind::Custom, {x.id}, std::move(out),
                  [x, state = std::move(state)](Tape& tp, std::int32_t self) {
                    if (!tp.requires_grad(x)) return;
                    const Mat& g = tp.grad(self);
                    Mat& gx = tp.grad(x);
                    for (Eigen::Index i = 0; i < g.size(); ++i) {
                      if (state[static_cast<std::size_t>(i)] == 0) gx.data()[i] += g.data()[i];
                    }
                  });
}

Var zeros(Tape& t, Eigen::Index rows, Eigen::Index cols) { return t.constant(Mat::Zero(rows, cols)); }

}  // namespace avatarfield::ad
