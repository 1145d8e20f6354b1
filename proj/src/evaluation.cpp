#include "avatarfield/evaluation.hpp"

#include "avatarfield/image_io.hpp"
#include "avatarfield/metrics.hpp"
#include "avatarfield/trainer.hpp"

namespace avatarfield {

namespace {

SplitScore score_split(const AvatarModel& model, const ad::ParamStore& params, const Dataset& data,
                       const std::vector<EvalPair>& pairs, int threads, const std::filesystem::path& out_dir,
                       const char* name) {
  SplitScore out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const EvalPair& p = pairs[i];
    FrameScore f;
    f.pair = p;
    const RenderRequest req = make_request(data, p.subject, p.input_pose, p.input_cameras, p.target_pose, p.target_camera);
    const Image mask = box_mask(req.camera, model.body().pose(req.target), 0.05);
    if (mask.pixels.sum() == 0.0) {
      f.skipped = true;
      out.frames.push_back(f);
      continue;
    }
    Image rgb, alpha;
    model.render_image(params, req, rgb, alpha, threads);
    const Image& gt = data.image(p.subject, p.target_pose, p.target_camera);
    f.psnr = masked_psnr(rgb, gt, mask);
    f.ssim = masked_ssim(rgb, gt, mask);
    out.psnr += f.psnr;
    out.ssim += f.ssim;
    ++out.scored;
    if (!out_dir.empty()) {
      const std::string stem = std::string(name) + "_" + std::to_string(i);
      write_png(out_dir / (stem + "_pred.png"), rgb);
      write_png(out_dir / (stem + "_gt.png"), gt);
    }
    out.frames.push_back(f);
  }
  if (out.scored > 0) {
    out.psnr /= out.scored;
    out.ssim /= out.scored;
  }
  return out;
}

nlohmann::json split_json(const SplitScore& s) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : s.frames) {
    frames.push_back({{"subject", f.pair.subject},
                      {"input_pose", f.pair.input_pose},
                      {"input_cameras", f.pair.input_cameras},
                      {"target_pose", f.pair.target_pose},
                      {"target_camera", f.pair.target_camera},
                      {"skipped", f.skipped},
                      {"psnr", f.psnr},
                      {"ssim", f.ssim}});
  }
  return {{"psnr", s.psnr}, {"ssim", s.ssim}, {"scored", s.scored}, {"frames", frames}};
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  return {{"novel_view", split_json(novel_view)}, {"novel_pose", split_json(novel_pose)}};
}

EvalReport evaluate(const AvatarModel& model, const ad::ParamStore& params, const Dataset& data, int threads,
                    const std::filesystem::path& out_dir) {
  EvalReport r;
  r.novel_view = score_split(model, params, data, data.novel_view, threads, out_dir, "novel_view");
  r.novel_pose = score_split(model, params, data, data.novel_pose, threads, out_dir, "novel_pose");
  return r;
}

}  // namespace avatarfield
