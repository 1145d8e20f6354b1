#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "json.hpp"

#include "avatarfield/autodiff/adam.hpp"
#include "avatarfield/autodiff/param_store.hpp"
#include "avatarfield/dataset.hpp"
#include "avatarfield/losses.hpp"
#include "avatarfield/model.hpp"

namespace avatarfield {

struct TrainConfig {
  ModelConfig model{};  // subjects and canonical box are taken from the dataset
  LossWeights weights{};
  RegularizerConfig regularizers{};
  int iterations = 6000;
  int warmup_iterations = 500;  // mask-only SDF fitting before the full model
  int patch_size = 32;
  double learning_rate = 5e-4;
  // lr decays by this factor over the run (1 keeps it constant)
  double final_lr_factor = 1.0;
  int checkpoint_every = 1000;
  int log_every = 10;
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  // Unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

// One training example: a target patch and the input views it is rendered from.
struct Batch {
  int subject = 0;
  int input_pose = 0;
  std::vector<int> input_cameras;
  int target_pose = 0;
  int target_camera = 0;
  int x0 = 0, y0 = 0;
};

// Request for subject s rendering (target_pose, target_camera) from the
// input views.
RenderRequest make_request(const Dataset& data, int subject, int input_pose, const std::vector<int>& input_cameras,
                           int target_pose, int target_camera);

// Model configuration with subject count and canonical box fitted to the data.
ModelConfig fit_model_config(ModelConfig cfg, const Dataset& data);

class Trainer {
 public:
  Trainer(const Dataset& data, TrainConfig cfg);

  // Draws of iteration i depend only on (seed, i).
  [[nodiscard]] Batch sample_batch(int iteration) const;
  // Loss terms of iteration i at the current parameters; fills `grad` when given.
  LossReport loss(int iteration, std::vector<double>* grad = nullptr);
  LossReport loss(const Batch& batch, int iteration, std::vector<double>* grad = nullptr);
  // Records the weighted loss of one batch on `t` (bound to store()).
  Var build_loss(Tape& t, const Batch& batch, int iteration, LossReport& report) const;
  // loss + Adam update. Throws NumericalError on non-finite values.
  LossReport step(int iteration);

  // Trains from the current iteration to cfg.iterations, appending to
  // out_dir/train_log.jsonl and writing checkpoints.
  void run(const std::filesystem::path& out_dir, const std::function<void(const LossReport&)>& on_log = {});

  void save(const std::filesystem::path& stem) const;
  // Restores parameters, optimizer state and iteration.
  void resume(const std::filesystem::path& stem);

  [[nodiscard]] const AvatarModel& model() const { return model_; }
  [[nodiscard]] ad::ParamStore& store() { return store_; }
  [[nodiscard]] const ad::ParamStore& store() const { return store_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  [[nodiscard]] int iteration() const { return iteration_; }

 private:
  const Dataset& data_;
  TrainConfig cfg_;
  AvatarModel model_;
  ad::ParamStore store_;
  ad::Adam adam_;
  PerceptualProxy proxy_;
  int iteration_ = 0;
};

// Model plus trained parameters as stored in a checkpoint.
struct LoadedModel {
  TrainConfig config;
  std::optional<AvatarModel> model;
  ad::ParamStore params;
  int iteration = 0;
  std::vector<Eigen::Matrix<double, kShapeDims, 1>> subject_betas;
};
LoadedModel load_model(const std::filesystem::path& stem);

}  // namespace avatarfield
