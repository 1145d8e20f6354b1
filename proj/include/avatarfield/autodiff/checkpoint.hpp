#pragma once

#include <filesystem>

#include "json.hpp"

#include "avatarfield/autodiff/param_store.hpp"

namespace avatarfield::ad {

// A checkpoint is a pair of files: `<stem>.json` (segment table, seed,
// hyperparameters) and `<stem>.bin` (the flat parameter vector as raw
// little-endian float64).
struct Checkpoint {
  ParamStore params;
  nlohmann::json hyperparameters;
};

void save_checkpoint(const std::filesystem::path& stem, const ParamStore& params,
                     const nlohmann::json& hyperparameters);
Checkpoint load_checkpoint(const std::filesystem::path& stem);

}  // namespace avatarfield::ad
