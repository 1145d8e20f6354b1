#include "avatarfield/autodiff/param_store.hpp"

#include <cmath>

#include "avatarfield/errors.hpp"

namespace avatarfield::ad {

const Segment& ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols,
                               Init init, double scale) {
  if (index_.count(name) != 0) throw ContractError("duplicate parameter segment: " + name);
  if (rows == 0 || cols == 0) throw ContractError("empty parameter segment: " + name);
  Segment seg{name, values_.size(), rows, cols};
  values_.resize(values_.size() + seg.length(), 0.0);
  double* data = values_.data() + seg.offset;
  switch (init) {
    case Init::Zero:
      break;
    case Init::Xavier: {
      const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = 0; i < seg.length(); ++i) data[i] = dist(rng_);
      break;
    }
    case Init::Uniform: {
      std::uniform_real_distribution<double> dist(-scale, scale);
      for (std::size_t i = 0; i < seg.length(); ++i) data[i] = dist(rng_);
      break;
    }
    case Init::Constant:
      for (std::size_t i = 0; i < seg.length(); ++i) data[i] = scale;
      break;
  }
  index_[name] = segments_.size();
  segments_.push_back(seg);
  return segments_.back();
}

const Segment& ParamStore::segment(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter segment: " + name);
  return segments_[it->second];
}

std::span<double> ParamStore::view(const std::string& name) {
  const Segment& seg = segment(name);
  return {values_.data() + seg.offset, seg.length()};
}

std::span<const double> ParamStore::view(const std::string& name) const {
  const Segment& seg = segment(name);
  return {values_.data() + seg.offset, seg.length()};
}

}  // namespace avatarfield::ad
