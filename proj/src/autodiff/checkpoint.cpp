#include "avatarfield/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "avatarfield/errors.hpp"

namespace avatarfield::ad {

namespace {

constexpr const char* kFormat = "avatarfield-checkpoint";
constexpr int kVersion = 1;

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

void write_le_doubles(std::ostream& out, const std::vector<double>& values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const ParamStore& params,
                     const nlohmann::json& hyperparameters) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["seed"] = params.seed();
  manifest["size"] = params.size();
  manifest["blob"] = with_suffix(stem, ".bin").filename().string();
  auto& segs = manifest["segments"] = nlohmann::json::array();
  for (const Segment& s : params.segments()) {
    segs.push_back({{"name", s.name}, {"offset", s.offset}, {"rows", s.rows}, {"cols", s.cols}});
  }
  manifest["hyperparameters"] = hyperparameters;

  const auto json_path = with_suffix(stem, ".json");
  std::ofstream js(json_path);
  if (!js) throw IoError("cannot write " + json_path.string());
  js << manifest.dump(2) << '\n';

  const auto bin_path = with_suffix(stem, ".bin");
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot write " + bin_path.string());
  write_le_doubles(bin, params.values());
  if (!bin) throw IoError("short write to " + bin_path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  const auto json_path = with_suffix(stem, ".json");
  std::ifstream js(json_path);
  if (!js) throw IoError("cannot read " + json_path.string());
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(json_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat || manifest.value("version", 0) != kVersion) {
    throw ValidationError(json_path.string() + ": not an avatarfield checkpoint (format/version mismatch)");
  }

  Checkpoint ck{ParamStore(manifest.at("seed").get<std::uint64_t>()), manifest.value("hyperparameters", nlohmann::json::object())};
  for (const auto& s : manifest.at("segments")) {
    const Segment& seg = ck.params.add(s.at("name").get<std::string>(), s.at("rows").get<std::size_t>(),
                                       s.at("cols").get<std::size_t>(), Init::Zero);
    if (seg.offset != s.at("offset").get<std::size_t>()) {
      throw ValidationError(json_path.string() + ": segment table is not contiguous at " + seg.name);
    }
  }
  const auto expected = manifest.at("size").get<std::size_t>();
  if (ck.params.size() != expected) throw ValidationError(json_path.string() + ": segment table does not cover the vector");

  const auto bin_path = json_path.parent_path() / manifest.value("blob", with_suffix(stem, ".bin").filename().string());
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot read " + bin_path.string());
  std::vector<unsigned char> bytes(expected * 8);
  bin.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (bin.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw ValidationError(bin_path.string() + ": blob shorter than the segment table");
  }
  auto& values = ck.params.values();
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + static_cast<std::size_t>(b)]) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  return ck;
}

}  // namespace avatarfield::ad
