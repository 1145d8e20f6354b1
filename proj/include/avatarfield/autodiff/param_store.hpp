#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace avatarfield::ad {

enum class Init : std::uint8_t {
  Zero,
  Xavier,   // uniform in +-sqrt(6 / (fan_in + fan_out)), fan_in = cols, fan_out = rows
  Uniform,  // uniform in +-scale
  Constant, // every entry = scale
};

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  [[nodiscard]] std::size_t length() const { return rows * cols; }
};

// One flat float64 vector carved into named, disjoint, row-major segments.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  const Segment& add(const std::string& name, std::size_t rows, std::size_t cols,
                     Init init = Init::Xavier, double scale = 0.0);

  [[nodiscard]] bool contains(const std::string& name) const { return index_.count(name) != 0; }
  [[nodiscard]] const Segment& segment(const std::string& name) const;
  [[nodiscard]] std::span<double> view(const std::string& name);
  [[nodiscard]] std::span<const double> view(const std::string& name) const;

  [[nodiscard]] const std::vector<Segment>& segments() const { return segments_; }
  [[nodiscard]] std::vector<double>& values() { return values_; }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }

  // Generator used by custom initialisers (geometric SDF init); advancing it
  // keeps the whole store a function of the seed and the allocation order.
  std::mt19937_64& rng() { return rng_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 rng_;
  std::vector<double> values_;
  std::vector<Segment> segments_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace avatarfield::ad
