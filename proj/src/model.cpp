#include "avatarfield/model.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "avatarfield/errors.hpp"

namespace avatarfield {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FourierConfig, bands, include_input)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HashGridConfig, levels, log2_table_size, features_per_level,
                                                base_resolution, per_level_scale)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(KeypointEncodingConfig, eta, bands)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DeformationConfig, identity_dims, width, layers, position_encoding, tau)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SdfConfig, width, layers, skip, softplus_beta, init_radius,
                                                density_scale_init)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AppearanceConfig, geo_channels, rgb_channels, cnn_hidden,
                                                keypoint_features, blend_width, blend_layers, keypoints)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ShadingConfig, width, layers, direction_encoding, pose_encoding)

namespace {

json vec3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
Eigen::Vector3d vec3(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ValidationError("expected a 3-vector");
  return {v[0], v[1], v[2]};
}

template <class T>
T sub_config(const json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  T out = fallback;
  from_json(j.at(key), out);
  return out;
}

json skeleton_json(const Skeleton& s) {
  auto rows = [](const Mat& m) {
    json r = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) r.push_back({m(i, 0), m(i, 1), m(i, 2)});
    return r;
  };
  return {{"parent", s.parent},           {"offset", rows(s.offset)},      {"bone", rows(s.bone)},
          {"radius", s.radius},           {"length_slot", s.length_slot}, {"radius_slot", s.radius_slot},
          {"end_child", s.end_child},     {"canonical_pose", rows(s.canonical_pose)}};
}

Skeleton skeleton_parse(const json& j) {
  auto rows = [](const json& a) {
    Mat m(static_cast<Eigen::Index>(a.size()), 3);
    for (std::size_t i = 0; i < a.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = vec3(a[i]).transpose();
    return m;
  };
  Skeleton s;
  s.parent = j.at("parent").get<std::vector<int>>();
  s.offset = rows(j.at("offset"));
  s.bone = rows(j.at("bone"));
  s.radius = j.at("radius").get<std::vector<double>>();
  s.length_slot = j.at("length_slot").get<std::vector<int>>();
  s.radius_slot = j.at("radius_slot").get<std::vector<int>>();
  s.end_child = j.at("end_child").get<std::vector<int>>();
  s.canonical_pose = rows(j.at("canonical_pose"));
  s.validate();
  return s;
}

// (J+1)-simplex rows from synced nearest-vertex lookups; the inside-tau test
// is itself a recorded decision so replays keep the same foreground set.
Mat synced_weights(Tape& t, const Mat& points, const PosedBody& body, double tau, std::vector<std::int32_t>& inside) {
  const NearestVertex nn = nearest_vertices(t, points, body.vertices);
  inside.resize(nn.index.size());
  for (std::size_t n = 0; n < nn.index.size(); ++n) inside[n] = nn.distance[n] <= tau;
  t.sync(inside);
  const auto J = body.weights.cols();
  Mat w = Mat::Zero(points.rows(), J + 1);
  for (std::size_t n = 0; n < nn.index.size(); ++n) {
    const auto r = static_cast<Eigen::Index>(n);
    if (inside[n]) {
      w.row(r).head(J) = body.weights.row(nn.index[n]);
      w(r, J) = std::max(0.0, 1.0 - w.row(r).head(J).sum());
    } else {
      w(r, J) = 1.0;
    }
  }
  return w;
}

Mat gather(const Mat& m, const std::vector<std::int32_t>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

// One draw per call regardless of n, so the stream position never depends on data.
std::int32_t draw_index(std::mt19937_64& rng, std::size_t n) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (n == 0) return 0;
  return static_cast<std::int32_t>(std::min(n - 1, static_cast<std::size_t>(u * static_cast<double>(n))));
}

Var scatter_or_zero(Tape& t, const Var& v, const std::vector<std::int32_t>& rows, Eigen::Index out_rows,
                    Eigen::Index cols) {
  if (rows.empty()) return ad::zeros(t, out_rows, cols);
  return ad::scatter_rows(t, v, rows, out_rows);
}

}  // namespace

json AblationFlags::to_json() const {
  return {{"no_shading", no_shading},
          {"no_displacement", no_displacement},
          {"no_learnable_skinning", no_learnable_skinning},
          {"no_geo_feats", no_geo_feats},
          {"no_identity", no_identity},
          {"normals_to_viewdirs", normals_to_viewdirs}};
}

AblationFlags AblationFlags::from_json(const json& j) {
  AblationFlags f;
  for (const auto& [key, value] : j.items()) {
    const bool v = value.get<bool>();
    if (key == "no_shading") f.no_shading = v;
    else if (key == "no_displacement") f.no_displacement = v;
    else if (key == "no_learnable_skinning") f.no_learnable_skinning = v;
    else if (key == "no_geo_feats") f.no_geo_feats = v;
    else if (key == "no_identity") f.no_identity = v;
    else if (key == "normals_to_viewdirs") f.normals_to_viewdirs = v;
    else throw ValidationError("unknown ablation flag '" + key + "'");
  }
  return f;
}

void ModelConfig::validate() const {
  skeleton.validate();
  if (subjects < 1) throw ValidationError("model: need at least one subject");
  if (coarse_samples < 1 || fine_samples < 0) throw ValidationError("model: sample counts must be positive");
  if (!(canonical_box.extent().minCoeff() > 0.0)) throw ValidationError("model: canonical box is degenerate");
  if (!(deformation.tau > 0.0)) throw ValidationError("model: tau must be positive");
  if (hash.levels < 1 || hash.features_per_level < 1 || hash.log2_table_size < 4 || hash.log2_table_size > 24) {
    throw ValidationError("model: bad hash grid configuration");
  }
  if (sdf.width < 1 || sdf.layers < 2 || deformation.width < 1 || deformation.layers < 2 ||
      appearance.blend_layers < 2 || shading.layers < 2) {
    throw ValidationError("model: networks need at least two layers and positive width");
  }
}

json ModelConfig::to_json() const {
  json j;
  j["hash"] = hash;
  j["deformation"] = deformation;
  j["sdf"] = sdf;
  j["appearance"] = appearance;
  j["shading"] = shading;
  j["subjects"] = subjects;
  j["coarse_samples"] = coarse_samples;
  j["fine_samples"] = fine_samples;
  j["ray_box_margin"] = ray_box_margin;
  j["canonical_box"] = {{"lo", vec3(canonical_box.lo)}, {"hi", vec3(canonical_box.hi)}};
  j["ablations"] = ablations.to_json();
  j["skeleton"] = skeleton_json(skeleton);
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.hash = sub_config(j, "hash", c.hash);
    c.deformation = sub_config(j, "deformation", c.deformation);
    c.sdf = sub_config(j, "sdf", c.sdf);
    c.appearance = sub_config(j, "appearance", c.appearance);
    c.shading = sub_config(j, "shading", c.shading);
    c.subjects = j.value("subjects", c.subjects);
    c.coarse_samples = j.value("coarse_samples", c.coarse_samples);
    c.fine_samples = j.value("fine_samples", c.fine_samples);
    c.ray_box_margin = j.value("ray_box_margin", c.ray_box_margin);
    if (j.contains("canonical_box")) {
      c.canonical_box.lo = vec3(j["canonical_box"].at("lo"));
      c.canonical_box.hi = vec3(j["canonical_box"].at("hi"));
    }
    if (j.contains("ablations")) c.ablations = AblationFlags::from_json(j["ablations"]);
    if (j.contains("skeleton")) c.skeleton = skeleton_parse(j["skeleton"]);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

Box canonical_box_for(const BodyModel& body, const std::vector<Eigen::Matrix<double, kShapeDims, 1>>& betas,
                      double margin) {
  if (betas.empty()) throw ContractError("canonical_box_for: no shapes");
  Box box = vertex_box(body.canonical(betas[0]));
  for (std::size_t i = 1; i < betas.size(); ++i) {
    const Box b = vertex_box(body.canonical(betas[i]));
    box.lo = box.lo.cwiseMin(b.lo);
    box.hi = box.hi.cwiseMax(b.hi);
  }
  return box.expanded(margin);
}

AvatarModel::AvatarModel(ModelConfig cfg) : cfg_(std::move(cfg)), body_(cfg_.skeleton) {
  cfg_.validate();
  const int J = body_.joints();
  grid_ = HashGrid(cfg_.hash, "hashgrid");
  const int H = cfg_.hash.output_width();
  deform_ = DeformationField(cfg_.deformation, J, H);
  appearance_ = Appearance(cfg_.appearance, J);
  sdf_ = SdfNetwork(cfg_.sdf, H, cfg_.deformation.identity_dims, appearance_.geo_dims());
  shading_ = ShadingNetwork(cfg_.shading, J, cfg_.deformation.identity_dims, appearance_.illumination_dims());
}

void AvatarModel::allocate(ad::ParamStore& store) const {
  grid_.allocate(store);
  deform_.allocate(store);
  sdf_.allocate(store);
  appearance_.allocate(store);
  shading_.allocate(store);
  store.add("identity", static_cast<std::size_t>(cfg_.subjects), static_cast<std::size_t>(cfg_.deformation.identity_dims),
            ad::Init::Uniform, 1e-2);
}

Scene AvatarModel::scene(const RenderRequest& req) const {
  if (req.subject < 0 || req.subject >= cfg_.subjects) throw ValidationError("render: subject out of range");
  if (req.input_cameras.size() != req.input_images.size() || req.input_cameras.empty()) {
    throw ValidationError("render: need one image per input camera");
  }
  Scene s;
  s.subject = req.subject;
  s.beta = req.target.beta;
  s.target_body = body_.pose(req.target);
  BodyParams input = req.input;
  input.beta = req.target.beta;
  s.input_body = body_.pose(input);
  s.canonical_body = body_.canonical(req.target.beta);
  s.target_bones = BoneSet::from_body(s.target_body);
  s.input_bones = BoneSet::from_body(s.input_body);
  s.target_pose = pose_features(req.target.theta);
  s.input_pose = pose_features(input.theta);
  s.ray_box = vertex_box(s.target_body).expanded(cfg_.ray_box_margin);
  s.camera = req.camera;
  s.input_cameras = req.input_cameras;
  s.input_images = req.input_images;
  return s;
}

Var AvatarModel::identity_code(Tape& t, int subject) const {
  if (cfg_.ablations.no_identity) return ad::zeros(t, 1, cfg_.deformation.identity_dims);
  return ad::slice_rows(t, t.parameter("identity"), subject, 1);
}

SceneVars AvatarModel::prepare(Tape& t, const Scene& scene, Phase phase) const {
  SceneVars v;
  v.identity = identity_code(t, scene.subject);
  if (phase == Phase::Warmup) return v;
  v.appearance = true;
  Var pooled;
  for (std::size_t i = 0; i < scene.input_images.size(); ++i) {
    const Image& img = *scene.input_images[i];
    ViewInput in;
    in.camera = scene.input_cameras[i];
    in.image = &img;
    const Var pixels = t.constant(img.pixels);
    in.geo_map = appearance_.geo_cnn().forward(t, pixels, img.width, img.height);
    in.rgb_map = appearance_.rgb_cnn().forward(t, pixels, img.width, img.height);
    in.map_width = strided_size(img.width, 2);
    in.map_height = strided_size(img.height, 2);
    const Var q = quadrant_pool(t, in.rgb_map, in.map_width, in.map_height);
    pooled = pooled.valid() ? ad::add(t, pooled, q) : q;
    v.views.push_back(in);
  }
  v.illumination = ad::scale(t, pooled, 1.0 / static_cast<double>(scene.input_images.size()));
  return v;
}

SampleBatch AvatarModel::eval_samples(Tape& t, const Scene& scene, const SceneVars& vars, const Mat& x_t,
                                      const Mat& dirs, Phase phase) const {
  const AblationFlags& ab = cfg_.ablations;
  const double tau = cfg_.deformation.tau;
  SampleBatch b;
  std::vector<std::int32_t> inside;
  const Mat w_all = synced_weights(t, x_t, scene.target_body, tau, inside);
  for (std::size_t n = 0; n < inside.size(); ++n) {
    if (inside[n]) b.rows.push_back(static_cast<std::int32_t>(n));
  }
  if (b.rows.empty()) return b;

  Mat xt = gather(x_t, b.rows);
  Mat w_b = gather(w_all, b.rows);
  Mat view = gather(dirs, b.rows);
  const auto F = static_cast<Eigen::Index>(b.rows.size());
  const Mat beta = scene.beta.transpose();

  Var delta_t = ab.no_displacement ? ad::zeros(t, F, 3)
                                   : deform_.displacement(t, t.constant(xt), vars.identity, scene.target_pose);
  Var x_c = ad::sub(t, t.constant(inverse_blend(xt, w_b, scene.target_bones)), delta_t);
  CanonicalCoords coords = canonical_coords(t, x_c, cfg_.canonical_box);
  Var hash = grid_.encode(t, coords.u);

  if (phase == Phase::Warmup) {
    SdfInputs in{coords, hash, beta, vars.identity, Var{}};
    MlpTrace trace;
    b.s = sdf_.eval(t, in, &trace);
    b.gradient = sdf_.spatial_gradient(t, in, trace, grid_);
    b.sigma = sdf_to_density(t, b.s, t.parameter(SdfNetwork::density_segment()));
    b.x_c = x_c;
    b.delta_t = delta_t;
    return b;
  }

  std::vector<std::int32_t> inside_c;
  const Mat w_init = synced_weights(t, t.value(x_c), scene.canonical_body, tau, inside_c);
  Var w_f = ab.no_learnable_skinning ? t.constant(w_init)
                                     : forward_weights(t, deform_.weight_logits(t, hash, vars.identity), w_init);
  Var delta_o = ab.no_displacement ? ad::zeros(t, F, 3)
                                   : deform_.displacement(t, x_c, vars.identity, scene.input_pose);
  Var x_o = forward_skin(t, w_f, x_c, delta_o, scene.input_bones);

  std::vector<std::int32_t> valid = appearance_.visibility(t, t.value(x_o), vars.views);
  const std::size_t V = vars.views.size();
  std::vector<std::int32_t> keep;
  for (Eigen::Index n = 0; n < F; ++n) {
    bool any = false;
    for (std::size_t i = 0; i < V; ++i) any = any || valid[static_cast<std::size_t>(n) * V + i];
    if (any) keep.push_back(static_cast<std::int32_t>(n));
  }
  if (static_cast<Eigen::Index>(keep.size()) != F) {
    // samples no input view sees are dropped to empty space
    std::vector<std::int32_t> rows, kept_valid;
    for (auto k : keep) {
      rows.push_back(b.rows[static_cast<std::size_t>(k)]);
      for (std::size_t i = 0; i < V; ++i) kept_valid.push_back(valid[static_cast<std::size_t>(k) * V + i]);
    }
    b.rows = std::move(rows);
    valid = std::move(kept_valid);
    if (keep.empty()) return b;
    w_b = gather(w_b, keep);
    view = gather(view, keep);
    delta_t = ad::gather_rows(t, delta_t, keep);
    x_c = ad::gather_rows(t, x_c, keep);
    coords = canonical_coords(t, x_c, cfg_.canonical_box);
    hash = ad::gather_rows(t, hash, keep);
    w_f = ad::gather_rows(t, w_f, keep);
    delta_o = ad::gather_rows(t, delta_o, keep);
    x_o = ad::gather_rows(t, x_o, keep);
  }

  FusedViews fused = appearance_.fuse(t, x_o, scene.input_body.joints, vars.views, std::move(valid));
  const Var geo = ab.no_geo_feats ? Var{} : fused.geo;
  SdfInputs in{coords, hash, beta, vars.identity, geo};
  MlpTrace trace;
  b.s = sdf_.eval(t, in, &trace);
  b.sigma = sdf_to_density(t, b.s, t.parameter(SdfNetwork::density_segment()));
  b.gradient = sdf_.spatial_gradient(t, in, trace, grid_);
  b.normal = sdf_normal(t, b.gradient);
  const Var view_var = t.constant(view);
  const Var direction = ab.normals_to_viewdirs ? view_var : transport_normal(t, w_f, b.normal, scene.input_bones);
  Var color = appearance_.blend(t, fused, direction);
  if (!ab.no_shading) {
    const Var n_t = transport_normal(t, t.constant(w_b), b.normal, scene.target_bones);
    const Var alpha = shading_.shade(t, view_var, scene.target_pose, n_t, vars.identity, vars.illumination);
    color = modulate(t, color, alpha);
  }
  b.color = color;
  b.geo = geo;
  b.delta_t = delta_t;
  b.delta_o = delta_o;
  b.x_c = x_c;
  return b;
}

Var AvatarModel::canonical_normals(Tape& t, Var x_c, const Eigen::Matrix<double, kShapeDims, 1>& beta,
                                   Var identity, Var geo) const {
  const CanonicalCoords coords = canonical_coords(t, x_c, cfg_.canonical_box);
  SdfInputs in{coords, grid_.encode(t, coords.u), beta.transpose(), identity, geo};
  MlpTrace trace;
  sdf_.eval(t, in, &trace);
  return sdf_normal(t, sdf_.spatial_gradient(t, in, trace, grid_));
}

RayResult AvatarModel::render(Tape& t, const Scene& scene, const SceneVars& vars, const std::vector<Ray>& rays,
                              Phase phase, std::mt19937_64* rng, std::mt19937_64* aux_rng,
                              const RegularizerConfig* reg) const {
  const bool full = phase == Phase::Full;
  if (full && !vars.appearance) throw ContractError("render: full phase needs prepared input views");
  const int S = cfg_.coarse_samples, Fs = cfg_.fine_samples;
  const Eigen::Index width = full ? 4 : 1;
  RayResult out;
  out.rays = static_cast<int>(rays.size());

  std::vector<std::int32_t> hit;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    if (rays[r].hit) hit.push_back(static_cast<std::int32_t>(r));
  }
  const auto H = static_cast<Eigen::Index>(hit.size());
  const auto R = static_cast<Eigen::Index>(rays.size());
  if (H == 0) {
    out.coarse = ad::zeros(t, R, width);
    out.fine = ad::zeros(t, R, width);
    return out;
  }

  // coarse pass
  std::vector<std::vector<double>> depths(static_cast<std::size_t>(H));
  Mat xc(H * S, 3), dc(H * S, 3);
  for (Eigen::Index h = 0; h < H; ++h) {
    const Ray& ray = rays[static_cast<std::size_t>(hit[static_cast<std::size_t>(h)])];
    depths[static_cast<std::size_t>(h)] = stratified_coarse(ray.near, ray.far, S, rng);
    for (int k = 0; k < S; ++k) {
      xc.row(h * S + k) = (ray.origin + depths[static_cast<std::size_t>(h)][static_cast<std::size_t>(k)] * ray.direction).transpose();
      dc.row(h * S + k) = ray.direction.transpose();
    }
  }
  SampleBatch bc = eval_samples(t, scene, vars, xc, dc, phase);
  const Var sigma_c = scatter_or_zero(t, bc.sigma, bc.rows, H * S, 1);
  const Var color_c = full ? scatter_or_zero(t, bc.color, bc.rows, H * S, 3) : Var{};
  RayLayout lc;
  lc.rays = static_cast<int>(H);
  lc.samples = S;
  for (Eigen::Index h = 0; h < H; ++h) {
    const Ray& ray = rays[static_cast<std::size_t>(hit[static_cast<std::size_t>(h)])];
    const auto d = segment_lengths(depths[static_cast<std::size_t>(h)], ray.near, ray.far);
    for (int k = 0; k < S; ++k) {
      lc.index.push_back(static_cast<std::int32_t>(h * S + k));
      lc.delta.push_back(d[static_cast<std::size_t>(k)]);
    }
  }
  const Var coarse = full ? composite(t, sigma_c, color_c, lc) : composite_mask(t, sigma_c, lc);
  out.coarse = ad::scatter_rows(t, coarse, hit, R);

  // fine pass
  SampleBatch bf;
  Var sigma_all = sigma_c, color_all = color_c;
  RayLayout lf = lc;
  if (Fs > 0) {
    const std::vector<double> w = composite_weights(t.value(sigma_c), lc);
    std::vector<double> fine_depths;
    fine_depths.reserve(static_cast<std::size_t>(H * Fs));
    for (Eigen::Index h = 0; h < H; ++h) {
      const Ray& ray = rays[static_cast<std::size_t>(hit[static_cast<std::size_t>(h)])];
      const std::vector<double> wr(w.begin() + h * S, w.begin() + (h + 1) * S);
      const auto f = importance_fine(ray.near, ray.far, wr, Fs, rng);
      fine_depths.insert(fine_depths.end(), f.begin(), f.end());
    }
    t.sync(fine_depths);
    Mat xf(H * Fs, 3), df(H * Fs, 3);
    for (Eigen::Index h = 0; h < H; ++h) {
      const Ray& ray = rays[static_cast<std::size_t>(hit[static_cast<std::size_t>(h)])];
      for (int k = 0; k < Fs; ++k) {
        xf.row(h * Fs + k) = (ray.origin + fine_depths[static_cast<std::size_t>(h * Fs + k)] * ray.direction).transpose();
        df.row(h * Fs + k) = ray.direction.transpose();
      }
    }
    bf = eval_samples(t, scene, vars, xf, df, phase);
    const Var parts_s[] = {sigma_c, scatter_or_zero(t, bf.sigma, bf.rows, H * Fs, 1)};
    sigma_all = ad::concat_rows(t, parts_s);
    if (full) {
      const Var parts_c[] = {color_c, scatter_or_zero(t, bf.color, bf.rows, H * Fs, 3)};
      color_all = ad::concat_rows(t, parts_c);
    }
    lf.samples = S + Fs;
    lf.index.clear();
    lf.delta.clear();
    std::vector<std::pair<double, std::int32_t>> merged;
    std::vector<double> sorted;
    for (Eigen::Index h = 0; h < H; ++h) {
      const Ray& ray = rays[static_cast<std::size_t>(hit[static_cast<std::size_t>(h)])];
      merged.clear();
      for (int k = 0; k < S; ++k) merged.emplace_back(depths[static_cast<std::size_t>(h)][static_cast<std::size_t>(k)], static_cast<std::int32_t>(h * S + k));
      for (int k = 0; k < Fs; ++k) {
        merged.emplace_back(fine_depths[static_cast<std::size_t>(h * Fs + k)], static_cast<std::int32_t>(H * S + h * Fs + k));
      }
      std::sort(merged.begin(), merged.end());
      sorted.clear();
      for (const auto& m : merged) sorted.push_back(m.first);
      const auto d = segment_lengths(sorted, ray.near, ray.far);
      for (std::size_t k = 0; k < merged.size(); ++k) {
        lf.index.push_back(merged[k].second);
        lf.delta.push_back(d[k]);
      }
    }
  }
  const Var fine = full ? composite(t, sigma_all, color_all, lf) : composite_mask(t, sigma_all, lf);
  out.fine = ad::scatter_rows(t, fine, hit, R);

  // s_min over the foreground samples of each ray, both passes
  out.foreground_samples = bc.rows.size() + bf.rows.size();
  if (out.foreground_samples > 0) {
    std::vector<Var> s_parts;
    if (!bc.rows.empty()) s_parts.push_back(bc.s);
    if (!bf.rows.empty()) s_parts.push_back(bf.s);
    const Var s_all = s_parts.size() == 1 ? s_parts[0] : ad::concat_rows(t, s_parts);
    const Mat& sv = t.value(s_all);
    std::vector<std::int32_t> best(static_cast<std::size_t>(H), -1);
    auto consider = [&](Eigen::Index h, std::int32_t row) {
      auto& b = best[static_cast<std::size_t>(h)];
      if (b < 0 || sv(row, 0) < sv(b, 0)) b = row;
    };
    for (std::size_t i = 0; i < bc.rows.size(); ++i) consider(bc.rows[i] / S, static_cast<std::int32_t>(i));
    const auto off = static_cast<std::int32_t>(bc.rows.size());
    for (std::size_t i = 0; i < bf.rows.size(); ++i) consider(bf.rows[i] / Fs, off + static_cast<std::int32_t>(i));
    t.sync(best);
    std::vector<std::int32_t> chosen;
    for (Eigen::Index h = 0; h < H; ++h) {
      if (best[static_cast<std::size_t>(h)] < 0) continue;
      chosen.push_back(best[static_cast<std::size_t>(h)]);
      out.s_min_rays.push_back(hit[static_cast<std::size_t>(h)]);
    }
    out.s_min = ad::gather_rows(t, s_all, chosen);
  }

  if (reg == nullptr || aux_rng == nullptr) return out;

  // Omega: random foreground samples of both passes
  const std::size_t P = out.foreground_samples;
  std::vector<std::int32_t> omega;
  for (int k = 0; k < reg->omega_points; ++k) omega.push_back(draw_index(*aux_rng, P));
  std::uniform_real_distribution<double> eps(-reg->epsilon, reg->epsilon);
  Mat shift(reg->normal_points, 3);
  for (Eigen::Index i = 0; i < shift.size(); ++i) shift.data()[i] = eps(*aux_rng);
  std::vector<std::int32_t> vertices;
  for (int k = 0; k < reg->vertex_points; ++k) {
    vertices.push_back(draw_index(*aux_rng, static_cast<std::size_t>(scene.canonical_body.vertices.rows())));
  }
  Mat vshift(reg->vertex_points, 3);
  for (Eigen::Index i = 0; i < vshift.size(); ++i) vshift.data()[i] = eps(*aux_rng);

  if (P > 0) {
    auto both = [&](Var SampleBatch::*field) {
      std::vector<Var> parts;
      if (!bc.rows.empty()) parts.push_back(bc.*field);
      if (!bf.rows.empty()) parts.push_back(bf.*field);
      return parts.size() == 1 ? parts[0] : ad::concat_rows(t, parts);
    };
    out.omega_gradient = ad::gather_rows(t, both(&SampleBatch::gradient), omega);
    // warmup fits the SDF alone: Eikonal only
    if (!full) return out;
    out.omega_delta_t = ad::gather_rows(t, both(&SampleBatch::delta_t), omega);
    out.omega_delta_o = ad::gather_rows(t, both(&SampleBatch::delta_o), omega);
    const std::vector<std::int32_t> sub(omega.begin(), omega.begin() + std::min<std::size_t>(omega.size(), static_cast<std::size_t>(reg->normal_points)));
    if (!sub.empty()) {
      const Var xs = ad::add(t, ad::gather_rows(t, both(&SampleBatch::x_c), sub),
                             t.constant(shift.topRows(static_cast<Eigen::Index>(sub.size()))));
      const Var geo = cfg_.ablations.no_geo_feats ? Var{} : ad::gather_rows(t, both(&SampleBatch::geo), sub);
      out.omega_normal = ad::gather_rows(t, both(&SampleBatch::normal), sub);
      out.omega_normal_shifted = canonical_normals(t, xs, scene.beta, vars.identity, geo);
    }
  }
  if (full && reg->vertex_points > 0) {
    const Mat y = gather(scene.canonical_body.vertices, vertices);
    out.vertex_normal = canonical_normals(t, t.constant(y), scene.beta, vars.identity, Var{});
    out.vertex_normal_shifted = canonical_normals(t, t.constant(y + vshift), scene.beta, vars.identity, Var{});
  }
  return out;
}

void AvatarModel::render_image(const ad::ParamStore& store, const RenderRequest& req, Image& rgb, Image& mask,
                               int threads, int chunk) const {
  const Scene sc = scene(req);
  const Camera& cam = req.camera;
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(cam.width) * cam.height);
  const Eigen::Vector3d o = cam.center();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      Ray r;
      r.origin = o;
      r.direction = cam.ray_direction(x, y);
      r.pixel_x = x;
      r.pixel_y = y;
      r.hit = intersect_box(o, r.direction, sc.ray_box, r.near, r.far);
      rays.push_back(r);
    }
  }
  rgb = Image(cam.width, cam.height, 3);
  mask = Image(cam.width, cam.height, 1);
  const int chunks = static_cast<int>((rays.size() + static_cast<std::size_t>(chunk) - 1) / static_cast<std::size_t>(chunk));
  auto work = [&](int first, int step) {
    for (int c = first; c < chunks; c += step) {
      const std::size_t lo = static_cast<std::size_t>(c) * static_cast<std::size_t>(chunk);
      const std::size_t hi = std::min(rays.size(), lo + static_cast<std::size_t>(chunk));
      const std::vector<Ray> part(rays.begin() + static_cast<std::ptrdiff_t>(lo), rays.begin() + static_cast<std::ptrdiff_t>(hi));
      Tape t(&store);
      const SceneVars vars = prepare(t, sc, Phase::Full);
      const RayResult res = render(t, sc, vars, part, Phase::Full, nullptr);
      const Mat& v = t.value(res.fine);
      for (std::size_t i = 0; i < part.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(lo + i);
        rgb.pixels.row(row) = v.row(static_cast<Eigen::Index>(i)).head(3);
        mask.pixels(row, 0) = v(static_cast<Eigen::Index>(i), 3);
      }
    }
  };
  const int n = std::max(1, std::min(threads, chunks));
  if (n == 1) {
    work(0, 1);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    pool.emplace_back([&, i] {
      try {
        work(i, n);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Mat AvatarModel::canonical_sdf(const ad::ParamStore& store, int subject, const Mat& x_c,
                               const Eigen::Matrix<double, kShapeDims, 1>& beta) const {
  Tape t(&store);
  const CanonicalCoords coords = canonical_coords(t, t.constant(x_c), cfg_.canonical_box);
  SdfInputs in{coords, grid_.encode(t, coords.u), beta.transpose(), identity_code(t, subject), Var{}};
  return t.value(sdf_.eval(t, in));
}

}  // namespace avatarfield
