#include "avatarfield/grad_suite.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <numeric>
#include <random>

#include "avatarfield/autodiff/grad_check.hpp"
#include "avatarfield/autodiff/param_store.hpp"
#include "avatarfield/errors.hpp"
#include "avatarfield/trainer.hpp"

namespace avatarfield {

namespace {

constexpr double kStep = 1e-5;

Mat uniform(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// sum(y * P) with a small fixed random P per call site.
class Projection {
 public:
  explicit Projection(std::uint64_t seed) : rng_(seed) {}
  Var operator()(Tape& t, Var y) {
    const Mat& v = t.value(y);
    if (p_.rows() != v.rows() || p_.cols() != v.cols()) p_ = 1e-3 * uniform(rng_, v.rows(), v.cols(), -1.0, 1.0);
    return ad::sum(t, ad::mul(t, y, t.constant(p_)));
  }

 private:
  std::mt19937_64 rng_;
  Mat p_;
};

void jitter(ad::ParamStore& store, std::mt19937_64& rng, double sd, const std::string& skip = {}) {
  std::normal_distribution<double> n(0.0, sd);
  for (const auto& seg : store.segments()) {
    if (!skip.empty() && seg.name == skip) continue;
    for (double& v : store.view(seg.name)) v += n(rng);
  }
}

// Up to `per_segment` coordinates of every segment, largest |gradient| first.
std::vector<std::size_t> pick_coordinates(const ad::Objective& f, const ad::ParamStore& store, std::size_t per_segment) {
  ad::DecisionLog log;
  std::vector<double> grad;
  f(store.values(), log, &grad);
  std::vector<std::size_t> out;
  for (const auto& seg : store.segments()) {
    std::vector<std::size_t> idx(seg.length());
    std::iota(idx.begin(), idx.end(), seg.offset);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(grad[a]) > std::abs(grad[b]); });
    idx.resize(std::min(idx.size(), per_segment));
    out.insert(out.end(), idx.begin(), idx.end());
  }
  return out;
}

GradCase check(const std::string& name, ad::ParamStore& store, std::function<Var(Tape&)> build,
               std::size_t per_segment = 0) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<double> theta = store.values();
  const ad::Objective f = ad::tape_objective(store, std::move(build));
  std::vector<std::size_t> coords;
  if (per_segment > 0) coords = pick_coordinates(f, store, per_segment);
  const ad::GradCheckResult r = ad::finite_diff_check(f, theta, kStep, coords);
  store.values() = theta;
  GradCase c;
  c.name = name;
  c.max_relative_error = r.max_relative_error;
  c.checked = r.checked;
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.analytic = r.analytic;
  c.numeric = r.numeric;
  for (const auto& seg : store.segments()) {
    if (r.worst_coordinate >= seg.offset && r.worst_coordinate < seg.offset + seg.length()) {
      c.worst = seg.name + "[" + std::to_string(r.worst_coordinate - seg.offset) + "]";
    }
  }
  return c;
}

Camera ring_camera(double azimuth, int size, double focal) {
  const Eigen::Vector3d eye(2.5 * std::sin(azimuth), 0.8, 2.5 * std::cos(azimuth));
  return Camera::look_at(eye, {0, 0, 0}, {0, -1, 0}, focal, size, size);
}

GradCase encodings_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  HashGridConfig hc;
  hc.levels = 3;
  hc.log2_table_size = 6;
  hc.base_resolution = 2;
  hc.per_level_scale = 2.0;
  HashGrid grid(hc, "hashgrid");
  ad::ParamStore store(seed);
  grid.allocate(store, 0.5);
  store.add("u", 5, 3, ad::Init::Uniform, 0.4);
  for (double& v : store.view("u")) v += 0.5;
  store.add("x", 4, 3, ad::Init::Uniform, 0.15);
  const Mat joints = uniform(rng, 3, 3, -0.15, 0.15);
  const Camera cam = ring_camera(0.4, 64, 100.0);
  Projection p1(seed + 1), p2(seed + 2), p3(seed + 3), p4(seed + 4);
  return check("encodings", store, [&](Tape& t) {
    const Var u = t.parameter("u"), x = t.parameter("x");
    const Var a = ad::add(t, p1(t, grid.encode(t, u)), p2(t, grid.jacobian(t, u)));
    const Var b = ad::add(t, p3(t, fourier_encode(t, x, FourierConfig{3, true})),
                          p4(t, keypoint_encode(t, x, joints, cam, KeypointEncodingConfig{0.1, 3})));
    return ad::add(t, a, b);
  });
}

GradCase deformation_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  BodyModel m;
  auto pose = [&] {
    BodyParams p;
    p.theta = uniform(rng, m.joints(), 3, -0.4, 0.4);
    return p;
  };
  const PosedBody canon = m.canonical(BodyParams().beta);
  const BodyParams pt = pose(), po = pose();
  const PosedBody bt = m.pose(pt), bo = m.pose(po);
  DeformationConfig cfg;
  cfg.identity_dims = 4;
  cfg.width = 8;
  cfg.layers = 3;
  cfg.position_encoding = {2, true};
  DeformationField field(cfg, m.joints(), 4);
  ad::ParamStore store(seed);
  field.allocate(store);
  jitter(store, rng, 0.05);
  store.add("identity", 1, 4, ad::Init::Uniform, 0.5);
  store.add("hash", 6, 4, ad::Init::Uniform, 0.5);
  store.add("normal", 6, 3, ad::Init::Uniform, 1.0);
  Mat x_t(6, 3);
  for (int n = 0; n < 6; ++n) x_t.row(n) = bt.vertices.row(n * 37 % bt.vertices.rows()) + uniform(rng, 1, 3, -0.02, 0.02);
  const Mat w_b = skinning_weights(nearest_vertices(x_t, bt.vertices), bt, 0.1);
  const BoneSet bones_t = BoneSet::from_body(bt), bones_o = BoneSet::from_body(bo);
  const Mat base = inverse_blend(x_t, w_b, bones_t);
  Projection p1(seed + 1), p2(seed + 2);
  return check("deformation", store, [&](Tape& t) {
    const Var id = t.parameter("identity");
    const Var d_t = field.displacement(t, t.constant(x_t), id, pose_features(pt.theta));
    const Var x_c = ad::sub(t, t.constant(base), d_t);
    const Mat w_init = skinning_weights(nearest_vertices(t, t.value(x_c), canon.vertices), canon, 0.1);
    const Var w_f = forward_weights(t, field.weight_logits(t, t.parameter("hash"), id), w_init);
    const Var d_o = field.displacement(t, x_c, id, pose_features(po.theta));
    const Var x_o = forward_skin(t, w_f, x_c, d_o, bones_o);
    return ad::add(t, p1(t, x_o), p2(t, transport_normal(t, w_f, t.parameter("normal"), bones_o)));
  });
}

GradCase geometry_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  HashGridConfig hc;
  hc.levels = 2;
  hc.log2_table_size = 6;
  hc.base_resolution = 2;
  HashGrid grid(hc, "hashgrid");
  SdfConfig sc;
  sc.width = 12;
  sc.layers = 4;
  sc.skip = 2;
  SdfNetwork sdf(sc, hc.output_width(), 3, 4);
  ad::ParamStore store(seed);
  grid.allocate(store, 0.3);
  sdf.allocate(store);
  jitter(store, rng, 0.02, SdfNetwork::density_segment());
  store.add("x", 4, 3, ad::Init::Uniform, 0.3);
  store.add("geo", 4, 4, ad::Init::Uniform, 0.5);
  store.add("identity", 1, 3, ad::Init::Uniform, 0.5);
  const Box box{Eigen::Vector3d::Constant(-0.6), Eigen::Vector3d::Constant(0.6)};
  const Mat beta = uniform(rng, 1, kShapeDims, -0.5, 0.5);
  Projection p1(seed + 1), p2(seed + 2);
  return check("canonical-geometry", store, [&](Tape& t) {
    const CanonicalCoords c = canonical_coords(t, t.parameter("x"), box);
    const SdfInputs in{c, grid.encode(t, c.u), beta, t.parameter("identity"), t.parameter("geo")};
    MlpTrace trace;
    const Var s = sdf.eval(t, in, &trace);
    const Var n = sdf_normal(t, sdf.spatial_gradient(t, in, trace, grid));
    const Var sigma = sdf_to_density(t, s, t.parameter(SdfNetwork::density_segment()));
    return ad::add(t, p1(t, n), p2(t, sigma));
  });
}

GradCase appearance_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AppearanceConfig cfg;
  cfg.geo_channels = 3;
  cfg.rgb_channels = 2;
  cfg.cnn_hidden = 3;
  cfg.keypoint_features = 3;
  cfg.blend_width = 6;
  cfg.blend_layers = 3;
  cfg.keypoints.bands = 2;
  Appearance app(cfg, 3);
  ad::ParamStore store(seed);
  app.allocate(store);
  jitter(store, rng, 0.05);
  store.add("x", 3, 3, ad::Init::Uniform, 0.2);
  store.add("dir", 3, 3, ad::Init::Uniform, 1.0);
  const Mat joints = uniform(rng, 3, 3, -0.2, 0.2);
  std::vector<Image> images;
  for (int i = 0; i < 2; ++i) {
    Image img(8, 8, 3);
    img.pixels = uniform(rng, 64, 3, 0.0, 1.0);
    images.push_back(img);
  }
  Projection p1(seed + 1), p2(seed + 2), p3(seed + 3);
  return check("appearance", store, [&](Tape& t) {
    std::vector<ViewInput> views;
    Var pooled;
    for (int i = 0; i < 2; ++i) {
      ViewInput in;
      in.camera = ring_camera(1.3 * i, 8, 20.0);
      in.image = &images[static_cast<std::size_t>(i)];
      const Var img = t.constant(images[static_cast<std::size_t>(i)].pixels);
      in.geo_map = app.geo_cnn().forward(t, img, 8, 8);
      in.rgb_map = app.rgb_cnn().forward(t, img, 8, 8);
      in.map_width = in.map_height = 4;
      const Var q = quadrant_pool(t, in.rgb_map, 4, 4);
      pooled = pooled.valid() ? ad::add(t, pooled, q) : q;
      views.push_back(in);
    }
    const Var x = t.parameter("x");
    const FusedViews f = app.fuse(t, x, joints, views, app.visibility(t, t.value(x), views));
    const Var c = app.blend(t, f, t.parameter("dir"));
    return ad::add(t, ad::add(t, p1(t, c), p2(t, f.geo)), p3(t, pooled));
  });
}

GradCase shading_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ShadingConfig cfg;
  cfg.width = 8;
  ShadingNetwork net(cfg, 2, 3, 4);
  ad::ParamStore store(seed);
  net.allocate(store);
  jitter(store, rng, 0.2);
  store.add("n", 4, 3, ad::Init::Uniform, 1.0);
  store.add("id", 1, 3, ad::Init::Uniform, 1.0);
  store.add("L", 1, 4, ad::Init::Uniform, 1.0);
  store.add("c", 4, 3, ad::Init::Uniform, 0.4);
  for (double& v : store.view("c")) v += 0.5;
  const Mat view = uniform(rng, 4, 3, -1.0, 1.0);
  const Mat pose = uniform(rng, 1, 6, -1.0, 1.0);
  Projection proj(seed + 1);
  return check("shading", store, [&](Tape& t) {
    const Var a = net.shade(t, t.constant(view), pose, t.parameter("n"), t.parameter("id"), t.parameter("L"));
    return proj(t, modulate(t, t.parameter("c"), a));
  });
}

GradCase renderer_case(std::uint64_t seed) {
  ad::ParamStore store(seed);
  store.add("s", 6, 1, ad::Init::Uniform, 2.0);
  for (double& v : store.view("s")) v += 2.5;
  store.add("c", 6, 3, ad::Init::Uniform, 1.0);
  RayLayout layout;
  layout.rays = 2;
  layout.samples = 3;
  layout.index = {0, 1, 2, 5, 4, 3};
  layout.delta = {0.1, 0.2, 0.3, 0.15, 0.25, 0.05};
  Projection p1(seed + 1), p2(seed + 2);
  return check("renderer", store, [&](Tape& t) {
    const Var s = t.parameter("s");
    return ad::add(t, p1(t, composite(t, s, t.parameter("c"), layout)), p2(t, composite_mask(t, s, layout)));
  });
}

GradCase losses_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ad::ParamStore store(seed);
  store.add("pred", 16, 3, ad::Init::Uniform, 0.4);
  for (double& v : store.view("pred")) v += 0.5;
  store.add("mask", 16, 1, ad::Init::Uniform, 0.5);
  store.add("na", 5, 3, ad::Init::Uniform, 1.0);
  store.add("nb", 5, 3, ad::Init::Uniform, 1.0);
  store.add("grad", 5, 3, ad::Init::Uniform, 1.0);
  store.add("s", 5, 1, ad::Init::Uniform, 0.05);
  store.add("d", 5, 3, ad::Init::Uniform, 0.1);
  const Mat gt = uniform(rng, 16, 3, 0.0, 1.0);
  Mat labels = uniform(rng, 16, 1, 0.0, 1.0).unaryExpr([](double v) { return v > 0.5 ? 1.0 : 0.0; });
  const LossWeights w;
  const PerceptualProxy proxy;
  return check("losses", store, [&](Tape& t) {
    std::vector<Var> terms{
        color_loss(t, t.parameter("pred"), gt, 4, w, proxy),
        mask_loss(t, t.parameter("mask"), labels, w.mask),
        ad::scale(t, normal_smoothness(t, ad::normalize_rows(t, t.parameter("na"), 1e-8),
                                       ad::normalize_rows(t, t.parameter("nb"), 1e-8)), w.normal_omega),
        ad::scale(t, eikonal_loss(t, t.parameter("grad")), w.eikonal),
        ad::scale(t, min_sdf_bce(t, t.parameter("s"), labels.topRows(5), w.rho(0)), w.bce),
        ad::scale(t, displacement_loss(t, {t.parameter("d")}), w.displacement)};
    Var total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(t, total, terms[i]);
    return total;
  });
}

GradCase model_case(std::uint64_t seed) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("avatarfield-gradcheck-" + std::to_string(seed) + "-" +
                                                     std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  SceneSpec spec;
  spec.subjects = 2;
  spec.poses = 2;
  spec.image_size = 24;
  spec.focal = 45.0;
  spec.seed = seed;
  synthesize(spec, dir);
  GradCase c;
  try {
    const Dataset data = load_dataset(dir);
    TrainConfig cfg;
    ModelConfig& m = cfg.model;
    m.hash.levels = 2;
    m.hash.log2_table_size = 8;
    m.hash.base_resolution = 4;
    m.deformation.identity_dims = 3;
    m.deformation.width = 8;
    m.deformation.layers = 2;
    m.deformation.position_encoding.bands = 2;
    m.sdf.width = 8;
    m.sdf.layers = 3;
    m.sdf.skip = 0;
    m.appearance.geo_channels = 3;
    m.appearance.rgb_channels = 2;
    m.appearance.cnn_hidden = 3;
    m.appearance.keypoint_features = 3;
    m.appearance.blend_width = 6;
    m.appearance.blend_layers = 2;
    m.appearance.keypoints.bands = 2;
    m.shading.width = 6;
    m.shading.layers = 2;
    m.coarse_samples = 6;
    m.fine_samples = 3;
    cfg.patch_size = 4;
    cfg.warmup_iterations = 0;
    cfg.regularizers = {6, 3, 3, 0.01};
    cfg.seed = seed;
    Trainer trainer(data, cfg);
    std::mt19937_64 rng(seed + 1);
    jitter(trainer.store(), rng, 0.02, SdfNetwork::density_segment());
    const Batch batch = trainer.sample_batch(0);
    c = check("model", trainer.store(), [&](Tape& t) {
      // same 1e-3 output scale as the projections above
      LossReport rep;
      return ad::scale(t, trainer.build_loss(t, batch, 0, rep), 1e-3);
    }, 4);
  } catch (...) {
    fs::remove_all(dir);
    throw;
  }
  fs::remove_all(dir);
  return c;
}

}  // namespace

GradSuiteResult run_grad_suite(std::uint64_t seed, const std::function<void(const GradCase&)>& on_case) {
  const auto start = std::chrono::steady_clock::now();
  GradSuiteResult r;
  using Case = GradCase (*)(std::uint64_t);
  const Case cases[] = {encodings_case, deformation_case, geometry_case, appearance_case,
                        shading_case,   renderer_case,    losses_case,   model_case};
  std::uint64_t k = 0;
  for (Case c : cases) {
    GradCase g = c(seed * 100 + ++k);
    r.max_relative_error = std::max(r.max_relative_error, g.max_relative_error);
    if (on_case) on_case(g);
    r.cases.push_back(std::move(g));
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace avatarfield
