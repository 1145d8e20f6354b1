#pragma once

#include <string>
#include <vector>

#include "avatarfield/autodiff/ops.hpp"
#include "avatarfield/autodiff/param_store.hpp"

namespace avatarfield {

using ad::Mat;
using ad::Tape;
using ad::Var;

enum class Activation { Relu, Softplus };

// Fully connected network with `layers` linear maps (the last one is the
// output layer). A skip layer sees [h, x] / sqrt(2) instead of h.
struct MlpSpec {
  std::string name;
  int in = 0;
  int width = 64;
  int layers = 4;
  int out = 1;
  Activation activation = Activation::Relu;
  double softplus_beta = 100.0;
  std::vector<int> skips;
  bool zero_last = false;

  [[nodiscard]] int fan_in(int layer) const;
  [[nodiscard]] int fan_out(int layer) const { return layer == layers - 1 ? out : width; }
  [[nodiscard]] bool is_skip(int layer) const;
  [[nodiscard]] std::string weight(int layer) const { return name + ".l" + std::to_string(layer) + ".w"; }
  [[nodiscard]] std::string bias(int layer) const { return name + ".l" + std::to_string(layer) + ".b"; }
};

// Pre-activations of the hidden layers, kept for tangent propagation.
struct MlpTrace {
  std::vector<Var> pre;
};

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {}

  void allocate(ad::ParamStore& store) const;
  Var forward(Tape& t, Var x, MlpTrace* trace = nullptr) const;
  // Directional derivatives of the output: dx stacks k tangent blocks of the
  // input (k*N x in); the trace must come from forward() on the same tape.
  // Softplus networks only.
  Var tangent(Tape& t, Var dx, const MlpTrace& trace) const;

  [[nodiscard]] const MlpSpec& spec() const { return spec_; }

 private:
  MlpSpec spec_;
};

}  // namespace avatarfield
