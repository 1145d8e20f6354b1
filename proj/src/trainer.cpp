#include "avatarfield/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "avatarfield/autodiff/checkpoint.hpp"
#include "avatarfield/errors.hpp"
#include "avatarfield/renderer.hpp"

namespace avatarfield {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, color, perceptual, mask, normal_omega, normal_vertex,
                                                eikonal, bce, displacement, rho_base, rho_period)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RegularizerConfig, omega_points, normal_points, vertex_points, epsilon)

namespace {

std::mt19937_64 stream(std::uint64_t seed, int iteration, int which) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(iteration), static_cast<std::uint32_t>(which)};
  return std::mt19937_64(seq);
}

int uniform_int(std::mt19937_64& rng, int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

Mat patch_rows(const Image& img, int x0, int y0, int size) {
  Mat out(static_cast<Eigen::Index>(size) * size, img.pixels.cols());
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      out.row(static_cast<Eigen::Index>(y) * size + x) = img.pixels.row(static_cast<Eigen::Index>(y0 + y) * img.width + x0 + x);
    }
  }
  return out;
}

void write_raw(const std::filesystem::path& path, const std::vector<double>& a, const std::vector<double>& b) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(double)));
  if (!f) throw IoError("cannot write " + path.string());
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (iterations < 0 || warmup_iterations < 0) throw ValidationError("train: iteration counts must be nonnegative");
  if (patch_size < 4) throw ValidationError("train: patch_size must be at least 4");
  if (!(learning_rate > 0.0) || !(final_lr_factor > 0.0)) throw ValidationError("train: learning rate must be positive");
  if (checkpoint_every < 1 || log_every < 1) throw ValidationError("train: intervals must be positive");
  if (regularizers.omega_points < 0 || regularizers.normal_points < 0 || regularizers.vertex_points < 0 ||
      regularizers.normal_points > regularizers.omega_points || !(regularizers.epsilon >= 0.0)) {
    throw ValidationError("train: bad regularizer sampling");
  }
}

json TrainConfig::to_json() const {
  json j;
  j["model"] = model.to_json();
  j["weights"] = weights;
  j["regularizers"] = regularizers;
  j["iterations"] = iterations;
  j["warmup_iterations"] = warmup_iterations;
  j["patch_size"] = patch_size;
  j["learning_rate"] = learning_rate;
  j["final_lr_factor"] = final_lr_factor;
  j["checkpoint_every"] = checkpoint_every;
  j["log_every"] = log_every;
  j["seed"] = seed;
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  static const char* keys[] = {"model",      "weights",          "regularizers",     "iterations",
                               "warmup_iterations", "patch_size", "learning_rate",  "final_lr_factor",
                               "checkpoint_every",  "log_every",  "seed"};
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(keys), std::end(keys), [&](const char* k) { return key == k; }) == std::end(keys)) {
      throw ValidationError("train config: unknown key '" + key + "'");
    }
  }
  TrainConfig c;
  try {
    if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
    if (j.contains("weights")) c.weights = j["weights"].get<LossWeights>();
    if (j.contains("regularizers")) c.regularizers = j["regularizers"].get<RegularizerConfig>();
    c.iterations = j.value("iterations", c.iterations);
    c.warmup_iterations = j.value("warmup_iterations", c.warmup_iterations);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.final_lr_factor = j.value("final_lr_factor", c.final_lr_factor);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_every = j.value("log_every", c.log_every);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

RenderRequest make_request(const Dataset& data, int subject, int input_pose, const std::vector<int>& input_cameras,
                           int target_pose, int target_camera) {
  RenderRequest req;
  req.subject = subject;
  req.target = data.poses.at(static_cast<std::size_t>(subject)).at(static_cast<std::size_t>(target_pose));
  req.input = data.poses.at(static_cast<std::size_t>(subject)).at(static_cast<std::size_t>(input_pose));
  req.camera = data.cameras.at(static_cast<std::size_t>(target_camera));
  for (int c : input_cameras) {
    req.input_cameras.push_back(data.cameras.at(static_cast<std::size_t>(c)));
    req.input_images.push_back(&data.image(subject, input_pose, c));
  }
  return req;
}

ModelConfig fit_model_config(ModelConfig cfg, const Dataset& data) {
  cfg.subjects = static_cast<int>(data.subjects.size());
  cfg.skeleton = data.skeleton;
  std::vector<Eigen::Matrix<double, kShapeDims, 1>> betas;
  for (const auto& s : data.subjects) betas.push_back(s.beta);
  cfg.canonical_box = canonical_box_for(BodyModel(data.skeleton), betas, 0.1);
  return cfg;
}

Trainer::Trainer(const Dataset& data, TrainConfig cfg)
    : data_(data),
      cfg_([&] {
        cfg.model = fit_model_config(cfg.model, data);
        cfg.validate();
        return cfg;
      }()),
      model_(cfg_.model),
      store_(cfg_.seed),
      adam_(0, ad::AdamConfig{}) {
  if (data.spec.image_size < cfg_.patch_size) throw ValidationError("train: patch larger than the images");
  if (data.train_poses.empty() || data.cameras.size() < 2) throw ValidationError("train: dataset has no training views");
  model_.allocate(store_);
  ad::AdamConfig ac;
  ac.learning_rate = cfg_.learning_rate;
  adam_ = ad::Adam(store_.size(), ac);
}

Batch Trainer::sample_batch(int iteration) const {
  auto rng = stream(cfg_.seed, iteration, 0);
  Batch b;
  const int C = static_cast<int>(data_.cameras.size());
  b.subject = uniform_int(rng, static_cast<int>(data_.subjects.size()));
  b.input_pose = data_.train_poses[static_cast<std::size_t>(uniform_int(rng, static_cast<int>(data_.train_poses.size())))];
  b.target_pose = data_.train_poses[static_cast<std::size_t>(uniform_int(rng, static_cast<int>(data_.train_poses.size())))];
  b.target_camera = uniform_int(rng, C);
  std::vector<int> others;
  for (int c = 0; c < C; ++c) {
    if (c != b.target_camera) others.push_back(c);
  }
  std::shuffle(others.begin(), others.end(), rng);
  others.resize(std::min<std::size_t>(others.size(), 3));
  std::sort(others.begin(), others.end());
  b.input_cameras = others;

  // patch centre inside the silhouette's bounding rectangle
  const Image& m = data_.mask(b.subject, b.target_pose, b.target_camera);
  int x_lo = m.width, x_hi = -1, y_lo = m.height, y_hi = -1;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (m.pixels(static_cast<Eigen::Index>(y) * m.width + x, 0) > 0.5) {
        x_lo = std::min(x_lo, x);
        x_hi = std::max(x_hi, x);
        y_lo = std::min(y_lo, y);
        y_hi = std::max(y_hi, y);
      }
    }
  }
  if (x_hi < 0) {
    x_lo = y_lo = 0;
    x_hi = m.width - 1;
    y_hi = m.height - 1;
  }
  const int cx = std::uniform_int_distribution<int>(x_lo, x_hi)(rng);
  const int cy = std::uniform_int_distribution<int>(y_lo, y_hi)(rng);
  const int P = cfg_.patch_size;
  b.x0 = std::clamp(cx - P / 2, 0, m.width - P);
  b.y0 = std::clamp(cy - P / 2, 0, m.height - P);
  return b;
}

LossReport Trainer::loss(int iteration, std::vector<double>* grad) { return loss(sample_batch(iteration), iteration, grad); }

Var Trainer::build_loss(Tape& t, const Batch& b, int iteration, LossReport& rep) const {
  const bool warm = iteration < cfg_.warmup_iterations;
  const Phase phase = warm ? Phase::Warmup : Phase::Full;
  const LossWeights& w = cfg_.weights;
  const int P = cfg_.patch_size;
  const Scene sc =
      model_.scene(make_request(data_, b.subject, b.input_pose, b.input_cameras, b.target_pose, b.target_camera));
  const auto rays = generate_patch_rays(sc.camera, b.x0, b.y0, P, sc.ray_box);
  auto ray_rng = stream(cfg_.seed, iteration, 1);
  auto aux_rng = stream(cfg_.seed, iteration, 2);

  const SceneVars vars = model_.prepare(t, sc, phase);
  const RayResult r = model_.render(t, sc, vars, rays, phase, &ray_rng, &aux_rng, &cfg_.regularizers);
  const Mat gt = patch_rows(data_.image(b.subject, b.target_pose, b.target_camera), b.x0, b.y0, P);
  const Mat labels = patch_rows(data_.mask(b.subject, b.target_pose, b.target_camera), b.x0, b.y0, P);

  rep = LossReport{};
  rep.iteration = iteration;
  rep.warmup = warm;
  std::vector<Var> terms;
  auto add = [&](Var v, double& slot) {
    slot += t.scalar_value(v);
    terms.push_back(v);
  };
  for (const Var& out : {r.coarse, r.fine}) {
    const Var mask = warm ? out : ad::slice_cols(t, out, 3, 1);
    add(mask_loss(t, mask, labels, w.mask), rep.mask);
    if (warm) continue;
    Var l1, perc;
    color_loss(t, ad::slice_cols(t, out, 0, 3), gt, P, w, proxy_, &l1, &perc);
    add(l1, rep.color);
    add(perc, rep.perceptual);
  }
  if (!r.s_min_rays.empty()) {
    Mat bce_labels(static_cast<Eigen::Index>(r.s_min_rays.size()), 1);
    for (std::size_t i = 0; i < r.s_min_rays.size(); ++i) {
      bce_labels(static_cast<Eigen::Index>(i), 0) = labels(r.s_min_rays[i], 0) > 0.5 ? 1.0 : 0.0;
    }
    add(ad::scale(t, min_sdf_bce(t, r.s_min, bce_labels, w.rho(iteration)), w.bce), rep.bce);
  }
  if (r.omega_gradient.valid()) add(ad::scale(t, eikonal_loss(t, r.omega_gradient), w.eikonal), rep.eikonal);
  if (!warm) {
    if (r.omega_gradient.valid()) {
      add(ad::scale(t, displacement_loss(t, {r.omega_delta_t, r.omega_delta_o}), w.displacement), rep.displacement);
    }
    if (r.omega_normal.valid()) {
      add(ad::scale(t, normal_smoothness(t, r.omega_normal, r.omega_normal_shifted), w.normal_omega), rep.normal_omega);
    }
    if (r.vertex_normal.valid()) {
      add(ad::scale(t, normal_smoothness(t, r.vertex_normal, r.vertex_normal_shifted), w.normal_vertex),
          rep.normal_vertex);
    }
  }
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(t, total, terms[i]);
  rep.total = t.scalar_value(total);
  return total;
}

LossReport Trainer::loss(const Batch& b, int iteration, std::vector<double>* grad) {
  Tape t(&store_);
  LossReport rep;
  const Var total = build_loss(t, b, iteration, rep);
  if (!rep.finite()) {
    throw NumericalError("iteration " + std::to_string(iteration) + ": non-finite loss " + rep.to_json().dump());
  }
  if (grad != nullptr) {
    *grad = t.gradient(total);
    for (double g : *grad) {
      if (!std::isfinite(g)) {
        throw NumericalError("iteration " + std::to_string(iteration) + ": non-finite gradient, loss " +
                             rep.to_json().dump());
      }
    }
  }
  return rep;
}

LossReport Trainer::step(int iteration) {
  std::vector<double> grad;
  const LossReport rep = loss(iteration, &grad);
  const double progress = cfg_.iterations > 0 ? static_cast<double>(iteration) / cfg_.iterations : 0.0;
  adam_.set_learning_rate(cfg_.learning_rate * std::pow(cfg_.final_lr_factor, progress));
  adam_.step(store_.values(), grad);
  iteration_ = iteration + 1;
  return rep;
}

void Trainer::run(const std::filesystem::path& out_dir, const std::function<void(const LossReport&)>& on_log) {
  std::filesystem::create_directories(out_dir / "checkpoints");
  {
    std::ofstream cfg(out_dir / "config.json");
    cfg << cfg_.to_json().dump(2) << "\n";
  }
  std::ofstream log(out_dir / "train_log.jsonl", iteration_ == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + (out_dir / "train_log.jsonl").string());
  for (int it = iteration_; it < cfg_.iterations; ++it) {
    const LossReport rep = step(it);
    if (it % cfg_.log_every == 0 || it + 1 == cfg_.iterations) {
      log << rep.to_json().dump() << "\n" << std::flush;
      if (on_log) on_log(rep);
    }
    if ((it + 1) % cfg_.checkpoint_every == 0 && it + 1 < cfg_.iterations) {
      char name[32];
      std::snprintf(name, sizeof name, "iter_%06d", it + 1);
      save(out_dir / "checkpoints" / name);
    }
  }
  save(out_dir / "model");
}

void Trainer::save(const std::filesystem::path& stem) const {
  json hyper;
  hyper["train"] = cfg_.to_json();
  hyper["iteration"] = iteration_;
  hyper["adam_steps"] = adam_.steps();
  json betas = json::array();
  for (const auto& sub : data_.subjects) betas.push_back(std::vector<double>(sub.beta.data(), sub.beta.data() + kShapeDims));
  hyper["subject_betas"] = betas;
  ad::save_checkpoint(stem, store_, hyper);
  write_raw(std::filesystem::path(stem.string() + ".adam.bin"), adam_.first_moment(), adam_.second_moment());
}

void Trainer::resume(const std::filesystem::path& stem) {
  ad::Checkpoint ck = ad::load_checkpoint(stem);
  if (ck.params.size() != store_.size()) throw ValidationError("checkpoint does not match the model layout");
  store_.values() = ck.params.values();
  const auto path = std::filesystem::path(stem.string() + ".adam.bin");
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("missing optimizer state " + path.string());
  std::vector<double> m(store_.size()), v(store_.size());
  f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!f) throw IoError("truncated optimizer state " + path.string());
  adam_.restore(std::move(m), std::move(v), ck.hyperparameters.at("adam_steps").get<std::int64_t>());
  iteration_ = ck.hyperparameters.at("iteration").get<int>();
}

LoadedModel load_model(const std::filesystem::path& stem) {
  ad::Checkpoint ck = ad::load_checkpoint(stem);
  LoadedModel out;
  if (!ck.hyperparameters.contains("train")) throw ValidationError("checkpoint has no training configuration");
  out.config = TrainConfig::from_json(ck.hyperparameters["train"]);
  out.model.emplace(out.config.model);
  ad::ParamStore fresh(out.config.seed);
  out.model->allocate(fresh);
  const auto& a = fresh.segments();
  const auto& b = ck.params.segments();
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = a[i].name == b[i].name && a[i].length() == b[i].length();
  if (!same) throw ValidationError("checkpoint does not match the model layout");
  out.params = std::move(ck.params);
  out.iteration = ck.hyperparameters.value("iteration", 0);
  for (const auto& b : ck.hyperparameters.value("subject_betas", json::array())) {
    const auto v = b.get<std::vector<double>>();
    if (v.size() != kShapeDims) throw ValidationError("checkpoint: bad subject shape vector");
    out.subject_betas.emplace_back(Eigen::Map<const Eigen::Matrix<double, kShapeDims, 1>>(v.data()));
  }
  if (static_cast<int>(out.subject_betas.size()) != out.config.model.subjects) {
    throw ValidationError("checkpoint: subject shapes do not match the model");
  }
  return out;
}

}  // namespace avatarfield
