#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace avatarfield::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ParamStore;

struct Var {
  std::int32_t id = -1;
  [[nodiscard]] bool valid() const { return id >= 0; }
};

enum class OpKind : std::uint8_t {
  Constant,
  Parameter,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  MatMulNT,
  AddRow,
  MulCol,
  Relu,
  Softplus,
  Sigmoid,
  Exp,
  Log,
  Sin,
  Cos,
  Square,
  Sqrt,
  Concat,
  Slice,
  GatherRows,
  ScatterRows,
  TileRows,
  StackedToCols,
  RowSum,
  Sum,
  RowNorm,
  SoftmaxRows,
  Custom,
};

// Piecewise-constant choices made during a forward pass (activation masks,
// grid cells, nearest neighbours, sampled depths). In Record mode every
// sync() call appends the freshly computed choice; in Replay mode it is
// overwritten by the recorded one, so a re-run with perturbed parameters
// evaluates the same smooth branch.
class DecisionLog {
 public:
  enum class Mode { Record, Replay };

  explicit DecisionLog(Mode mode = Mode::Record) : mode_(mode) {}

  void replay() {
    mode_ = Mode::Replay;
    int_cursor_ = 0;
    real_cursor_ = 0;
  }
  void clear() {
    ints_.clear();
    reals_.clear();
    mode_ = Mode::Record;
    int_cursor_ = real_cursor_ = 0;
  }
  [[nodiscard]] Mode mode() const { return mode_; }
  [[nodiscard]] std::size_t entries() const { return ints_.size() + reals_.size(); }

  void sync(std::vector<std::int32_t>& choices);
  void sync(std::vector<double>& choices);

 private:
  Mode mode_;
  std::vector<std::vector<std::int32_t>> ints_;
  std::vector<std::vector<double>> reals_;
  std::size_t int_cursor_ = 0;
  std::size_t real_cursor_ = 0;
};

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order, so every node's inputs precede it and a single reverse sweep visits
// each node once.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::int32_t self)>;

  struct Seed {
    Var var;
    Mat adjoint;
  };

  Tape() = default;
  explicit Tape(const ParamStore* params) : params_(params) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Mat value);
  Var scalar(double value);
  // Non-parameter leaf that collects an adjoint (read it back with grad()
  // after backward); used to chain tapes together.
  Var variable(Mat value);
  // Leaf bound to a ParamStore segment; repeated requests return the same node.
  Var parameter(const std::string& segment);
  Var record(OpKind kind, std::vector<std::int32_t> inputs, Mat value, Backward backward);

  [[nodiscard]] const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  [[nodiscard]] const Mat& value(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  [[nodiscard]] double scalar_value(Var v) const;
  [[nodiscard]] bool requires_grad(Var v) const { return requires_grad(v.id); }
  [[nodiscard]] bool requires_grad(std::int32_t id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }
  [[nodiscard]] std::int32_t input(std::int32_t node, std::size_t k) const {
    return nodes_[static_cast<std::size_t>(node)].inputs[k];
  }
  [[nodiscard]] OpKind kind(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].kind; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] const ParamStore* params() const { return params_; }

  // Adjoint of a node; allocated as zeros on first access.
  Mat& grad(std::int32_t id);
  Mat& grad(Var v) { return grad(v.id); }
  [[nodiscard]] bool has_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].adjoint.size() != 0; }

  // dLoss/dParam for every parameter of the bound store. The loss must be 1x1.
  std::vector<double> gradient(Var loss);
  // Reverse sweep from arbitrary seeds, accumulating into param_grad.
  void backward(std::span<const Seed> seeds, std::span<double> param_grad);

  void attach_log(DecisionLog* log) { log_ = log; }
  [[nodiscard]] DecisionLog* log() const { return log_; }
  void sync(std::vector<std::int32_t>& choices) {
    if (log_ != nullptr) log_->sync(choices);
  }
  void sync(std::vector<double>& choices) {
    if (log_ != nullptr) log_->sync(choices);
  }

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<std::int32_t> inputs;
    Mat value;
    Mat adjoint;
    Backward backward;
    std::int64_t param_offset = -1;
    bool requires_grad = false;
  };

  const ParamStore* params_ = nullptr;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::int32_t> param_nodes_;
  DecisionLog* log_ = nullptr;
};

}  // namespace avatarfield::ad
