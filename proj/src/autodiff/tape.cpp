#include "avatarfield/autodiff/tape.hpp"

#include <string>

#include "avatarfield/autodiff/param_store.hpp"
#include "avatarfield/errors.hpp"

namespace avatarfield::ad {

namespace {

template <typename T>
void sync_impl(DecisionLog::Mode mode, std::vector<std::vector<T>>& store, std::size_t& cursor,
               std::vector<T>& choices) {
  if (mode == DecisionLog::Mode::Record) {
    store.push_back(choices);
    return;
  }
  if (cursor >= store.size()) throw ContractError("decision log exhausted during replay");
  const std::vector<T>& recorded = store[cursor++];
  if (recorded.size() != choices.size()) {
    throw ContractError("decision log replay shape mismatch (" + std::to_string(recorded.size()) +
                        " recorded vs " + std::to_string(choices.size()) + ")");
  }
  choices = recorded;
}

}  // namespace

void DecisionLog::sync(std::vector<std::int32_t>& choices) {
  sync_impl(mode_, ints_, int_cursor_, choices);
}

void DecisionLog::sync(std::vector<double>& choices) {
  sync_impl(mode_, reals_, real_cursor_, choices);
}

Var Tape::constant(Mat value) {
  Node node;
  node.kind = OpKind::Constant;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::variable(Mat value) {
  Node node;
  node.kind = OpKind::Constant;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::scalar(double value) {
  Mat m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Tape::parameter(const std::string& segment) {
  if (params_ == nullptr) throw ContractError("tape has no parameter store bound");
  if (auto it = param_nodes_.find(segment); it != param_nodes_.end()) return Var{it->second};
  const Segment& seg = params_->segment(segment);
  Node node;
  node.kind = OpKind::Parameter;
  node.value = Eigen::Map<const Mat>(params_->values().data() + seg.offset,
                                     static_cast<Eigen::Index>(seg.rows),
                                     static_cast<Eigen::Index>(seg.cols));
  node.param_offset = static_cast<std::int64_t>(seg.offset);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  const auto id = static_cast<std::int32_t>(nodes_.size() - 1);
  param_nodes_[segment] = id;
  return Var{id};
}

Var Tape::record(OpKind kind, std::vector<std::int32_t> inputs, Mat value, Backward backward) {
  Node node;
  node.kind = kind;
  for (std::int32_t in : inputs) {
    if (in < 0 || static_cast<std::size_t>(in) >= nodes_.size()) {
      throw ContractError("tape input refers to a node that does not precede it");
    }
    node.requires_grad = node.requires_grad || nodes_[static_cast<std::size_t>(in)].requires_grad;
  }
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

double Tape::scalar_value(Var v) const {
  const Mat& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw ContractError("node is not scalar");
  return m(0, 0);
}

Mat& Tape::grad(std::int32_t id) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.adjoint.size() == 0 && node.value.size() != 0) {
    node.adjoint = Mat::Zero(node.value.rows(), node.value.cols());
  }
  return node.adjoint;
}

std::vector<double> Tape::gradient(Var loss) {
  if (!loss.valid()) throw ContractError("invalid loss node");
  const Mat& v = value(loss);
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("loss node must be scalar, got " + std::to_string(v.rows()) + "x" +
                        std::to_string(v.cols()));
  }
  std::vector<double> g(params_ != nullptr ? params_->size() : 0, 0.0);
  Seed seed{loss, Mat::Ones(1, 1)};
  backward(std::span<const Seed>(&seed, 1), g);
  return g;
}

void Tape::backward(std::span<const Seed> seeds, std::span<double> param_grad) {
  std::int32_t top = -1;
  for (const Seed& s : seeds) {
    const Mat& v = value(s.var);
    if (s.adjoint.rows() != v.rows() || s.adjoint.cols() != v.cols()) {
      throw ContractError("seed adjoint shape does not match node");
    }
    grad(s.var) += s.adjoint;
    top = std::max(top, s.var.id);
  }
  for (std::int32_t id = top; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad || node.adjoint.size() == 0) continue;
    if (node.kind == OpKind::Parameter) {
      const auto off = static_cast<std::size_t>(node.param_offset);
      if (off + static_cast<std::size_t>(node.adjoint.size()) > param_grad.size()) {
        throw ContractError("parameter gradient buffer too small");
      }
      const double* a = node.adjoint.data();
      for (Eigen::Index i = 0; i < node.adjoint.size(); ++i) param_grad[off + static_cast<std::size_t>(i)] += a[i];
      continue;
    }
    if (node.backward) node.backward(*this, id);
  }
}

}  // namespace avatarfield::ad
