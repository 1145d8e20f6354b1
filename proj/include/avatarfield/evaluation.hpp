#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"

#include "avatarfield/autodiff/param_store.hpp"
#include "avatarfield/dataset.hpp"
#include "avatarfield/model.hpp"

namespace avatarfield {

struct FrameScore {
  EvalPair pair;
  bool skipped = false;  // empty evaluation mask
  double psnr = 0.0;
  double ssim = 0.0;
};

struct SplitScore {
  std::vector<FrameScore> frames;
  double psnr = 0.0;  // mean over scored frames
  double ssim = 0.0;
  int scored = 0;
};

struct EvalReport {
  SplitScore novel_view, novel_pose;
  [[nodiscard]] nlohmann::json to_json() const;
};

// Renders every evaluation pair and scores it inside the projected body box.
// Renders are written to out_dir when it is not empty.
EvalReport evaluate(const AvatarModel& model, const ad::ParamStore& params, const Dataset& data, int threads,
                    const std::filesystem::path& out_dir = {});

}  // namespace avatarfield
