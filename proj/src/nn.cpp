#include "avatarfield/nn.hpp"

#include <algorithm>
#include <cmath>

#include "avatarfield/errors.hpp"

namespace avatarfield {

int MlpSpec::fan_in(int layer) const {
  int n = layer == 0 ? in : width;
  if (is_skip(layer)) n += in;
  return n;
}

bool MlpSpec::is_skip(int layer) const {
  return layer > 0 && std::find(skips.begin(), skips.end(), layer) != skips.end();
}

void Mlp::allocate(ad::ParamStore& store) const {
  if (spec_.in <= 0 || spec_.layers < 1) throw ContractError("mlp " + spec_.name + ": bad shape");
  for (int l = 0; l < spec_.layers; ++l) {
    const bool last = l == spec_.layers - 1;
    const auto rows = static_cast<std::size_t>(spec_.fan_out(l));
    const auto cols = static_cast<std::size_t>(spec_.fan_in(l));
    store.add(spec_.weight(l), rows, cols, last && spec_.zero_last ? ad::Init::Zero : ad::Init::Xavier);
    store.add(spec_.bias(l), 1, rows, ad::Init::Zero);
  }
}

Var Mlp::forward(Tape& t, Var x, MlpTrace* trace) const {
  if (t.value(x).cols() != spec_.in) {
    throw ContractError("mlp " + spec_.name + ": expected " + std::to_string(spec_.in) + " inputs, got " +
                        std::to_string(t.value(x).cols()));
  }
  if (trace != nullptr) trace->pre.clear();
  Var h = x;
  for (int l = 0; l < spec_.layers; ++l) {
    if (spec_.is_skip(l)) {
      const Var parts[] = {h, x};
      h = ad::scale(t, ad::concat_cols(t, parts), M_SQRT1_2);
    }
    Var z = ad::linear(t, h, t.parameter(spec_.weight(l)), t.parameter(spec_.bias(l)));
    if (l == spec_.layers - 1) return z;
    if (trace != nullptr) trace->pre.push_back(z);
    h = spec_.activation == Activation::Relu ? ad::relu(t, z) : ad::softplus(t, z, spec_.softplus_beta);
  }
  return h;
}

Var Mlp::tangent(Tape& t, Var dx, const MlpTrace& trace) const {
  if (spec_.activation != Activation::Softplus) throw ContractError("mlp tangent requires softplus activations");
  if (trace.pre.size() != static_cast<std::size_t>(spec_.layers - 1)) throw ContractError("mlp tangent: stale trace");
  const auto N = t.value(trace.pre.front()).rows();
  const auto k = t.value(dx).rows() / std::max<Eigen::Index>(N, 1);
  Var dh = dx;
  for (int l = 0; l < spec_.layers; ++l) {
    if (spec_.is_skip(l)) {
      const Var parts[] = {dh, dx};
      dh = ad::scale(t, ad::concat_cols(t, parts), M_SQRT1_2);
    }
    Var dz = ad::matmul_nt(t, dh, t.parameter(spec_.weight(l)));
    if (l == spec_.layers - 1) return dz;
    // softplus_beta'(z) = sigmoid(beta z)
    Var slope = ad::sigmoid(t, ad::scale(t, trace.pre[static_cast<std::size_t>(l)], spec_.softplus_beta));
    dh = ad::mul(t, ad::tile_rows(t, slope, k), dz);
  }
  return dh;
}

}  // namespace avatarfield
