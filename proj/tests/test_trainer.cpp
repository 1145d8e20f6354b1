#include <filesystem>

#include <gtest/gtest.h>

#include "avatarfield/dataset.hpp"
#include "avatarfield/errors.hpp"
#include "avatarfield/sphere_fit.hpp"
#include "avatarfield/trainer.hpp"

using namespace avatarfield;
namespace fs = std::filesystem;

namespace {

const Dataset& small_data() {
  static const Dataset d = [] {
    SceneSpec spec;
    spec.image_size = 24;
    spec.focal = 45.0;
    spec.seed = 3;
    const fs::path dir = fs::temp_directory_path() / "avatarfield_trainer_test";
    synthesize(spec, dir);
    return load_dataset(dir);
  }();
  return d;
}

}  // namespace

TEST(TrainConfig, RoundTripsAndRejects) {
  TrainConfig c;
  c.iterations = 77;
  c.patch_size = 8;
  c.model.sdf.width = 32;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());

  nlohmann::json j = c.to_json();
  j["iteratons"] = 3;
  EXPECT_THROW(TrainConfig::from_json(j), ValidationError);
  TrainConfig bad = c;
  bad.patch_size = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = c;
  bad.learning_rate = -1.0;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Trainer, BatchesDependOnlyOnSeedAndIteration) {
  TrainConfig cfg;
  cfg.patch_size = 8;
  cfg.seed = 11;
  const Dataset& data = small_data();
  Trainer a(data, cfg), b(data, cfg);
  for (int it : {0, 5, 123}) {
    const Batch x = a.sample_batch(it), y = b.sample_batch(it);
    EXPECT_EQ(x.subject, y.subject);
    EXPECT_EQ(x.input_cameras, y.input_cameras);
    EXPECT_EQ(x.target_camera, y.target_camera);
    EXPECT_EQ(x.x0, y.x0);
    EXPECT_EQ(x.y0, y.y0);
    // inputs exclude the target view and the patch fits inside the image
    for (int cam : x.input_cameras) EXPECT_FALSE(cam == x.target_camera && x.input_pose == x.target_pose);
    EXPECT_LE(x.x0 + cfg.patch_size, data.spec.image_size);
    EXPECT_LE(x.y0 + cfg.patch_size, data.spec.image_size);
  }
}

TEST(SphereFit, ShortRunMovesTowardsUnitGradient) {
  SphereFitConfig cfg;
  cfg.iterations = 30;
  cfg.batch = 64;
  cfg.eval_points = 500;
  cfg.hash.levels = 4;
  cfg.sdf.width = 32;
  cfg.sdf.layers = 4;
  cfg.sdf.skip = 2;
  const SphereFitResult r = fit_sphere(cfg);
  EXPECT_TRUE(std::isfinite(r.mean_gradient_deviation));
  EXPECT_LT(r.mean_gradient_deviation, 0.5);
  EXPECT_LT(r.mean_abs_error, 0.3);
}
