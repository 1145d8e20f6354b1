#include "avatarfield/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "avatarfield/errors.hpp"
#include "avatarfield/image_io.hpp"

namespace avatarfield {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "avatarfield-dataset";
constexpr int kVersion = 1;

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Mat mat_from_json(const json& j, Eigen::Index cols, const std::string& what) {
  if (!j.is_array()) throw ValidationError(what + ": expected an array of rows");
  Mat m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != static_cast<std::size_t>(cols)) {
      throw ValidationError(what + ": row " + std::to_string(r) + " must have " + std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = j[r][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json matrix3_to_json(const Eigen::Matrix3d& m) { return mat_to_json(Mat(m)); }

Eigen::Matrix3d matrix3_from_json(const json& j, const std::string& what) {
  const Mat m = mat_from_json(j, 3, what);
  if (m.rows() != 3) throw ValidationError(what + ": expected 3 rows");
  return m;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(1) << "\n";
  if (!out) throw IoError("write failed for " + p.string());
}

std::string frame_name(int s, int p, int c) {
  return "s" + std::to_string(s) + "_p" + std::to_string(p) + "_c" + std::to_string(c) + ".png";
}

Mat random_pose(std::mt19937_64& rng, int joints, double scale) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * 0.5 * (u(rng) + 1.0); };
  Mat theta = Mat::Zero(joints, 3);
  if (joints < 8) {
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta.data()[i] = 0.3 * scale * u(rng);
    return theta;
  }
  theta.row(0) << 0.1 * scale * u(rng), 0.3 * scale * u(rng), 0.1 * scale * u(rng);
  theta.row(1) << 0.3 * scale * u(rng), 0.3 * scale * u(rng), 0.2 * scale * u(rng);
  // arms away from the torso, elbows bent forward, legs swinging
  theta.row(2) << 0.4 * scale * u(rng), 0.0, range(0.3, 1.3) * scale;
  theta.row(3) << -range(0.0, 0.8) * scale, 0.0, 0.2 * scale * u(rng);
  theta.row(4) << 0.4 * scale * u(rng), 0.0, -range(0.3, 1.3) * scale;
  theta.row(5) << -range(0.0, 0.8) * scale, 0.0, 0.2 * scale * u(rng);
  theta.row(6) << 0.4 * scale * u(rng), 0.0, range(0.0, 0.3) * scale;
  theta.row(7) << 0.4 * scale * u(rng), 0.0, -range(0.0, 0.3) * scale;
  for (int j = 8; j < joints; ++j) theta.row(j) << 0.3 * scale * u(rng), 0.3 * scale * u(rng), 0.3 * scale * u(rng);
  return theta;
}

}  // namespace

void SceneSpec::validate() const {
  if (subjects < 1) throw ValidationError("scene: need at least one subject");
  if (cameras < 4) throw ValidationError("scene: need at least 4 cameras (3 inputs + 1 target)");
  if (poses < 2) throw ValidationError("scene: need at least 2 poses per subject for novel-pose evaluation");
  if (image_size < 8) throw ValidationError("scene: image_size must be at least 8");
  if (!(radius > 0.0) || !(focal > 0.0)) throw ValidationError("scene: radius and focal must be positive");
  if (!(beta_range >= 0.0) || beta_range > 2.0) throw ValidationError("scene: beta_range must be in [0, 2]");
  if (!(pose_scale >= 0.0)) throw ValidationError("scene: pose_scale must be nonnegative");
}

json SceneSpec::to_json() const {
  return {{"subjects", subjects},
          {"poses", poses},
          {"cameras", cameras},
          {"image_size", image_size},
          {"radius", radius},
          {"elevation_deg", elevation_deg},
          {"first_azimuth_deg", first_azimuth_deg},
          {"focal", focal},
          {"beta_range", beta_range},
          {"pose_scale", pose_scale},
          {"seed", seed}};
}

SceneSpec SceneSpec::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("scene spec must be a JSON object");
  SceneSpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "subjects") s.subjects = value.get<int>();
      else if (key == "poses") s.poses = value.get<int>();
      else if (key == "cameras") s.cameras = value.get<int>();
      else if (key == "image_size") s.image_size = value.get<int>();
      else if (key == "radius") s.radius = value.get<double>();
      else if (key == "elevation_deg") s.elevation_deg = value.get<double>();
      else if (key == "first_azimuth_deg") s.first_azimuth_deg = value.get<double>();
      else if (key == "focal") s.focal = value.get<double>();
      else if (key == "beta_range") s.beta_range = value.get<double>();
      else if (key == "pose_scale") s.pose_scale = value.get<double>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else throw ValidationError("scene spec: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scene spec: ") + e.what());
  }
  s.validate();
  return s;
}

Capsules posed_capsules(const BodyModel& model, const BodyParams& params) {
  const auto G = model.joint_frames(params);
  const Mat bones = model.scaled_bones(params.beta);
  const auto radii = model.scaled_radii(params.beta);
  Capsules c;
  for (int j = 0; j < model.joints(); ++j) {
    const Eigen::Matrix4d& g = G[static_cast<std::size_t>(j)];
    c.a.push_back(g.topRightCorner<3, 1>());
    c.b.push_back((g * bones.row(j).transpose().homogeneous()).head<3>());
    c.r.push_back(radii[static_cast<std::size_t>(j)]);
  }
  return c;
}

CapsuleHit trace_capsules(const Capsules& caps, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir_in) {
  const double scale = dir_in.norm();
  const Eigen::Vector3d rd = dir_in / scale;
  CapsuleHit best;
  for (std::size_t j = 0; j < caps.r.size(); ++j) {
    const Eigen::Vector3d ba = caps.b[j] - caps.a[j];
    const Eigen::Vector3d oa = origin - caps.a[j];
    const double r = caps.r[j];
    const double baba = ba.dot(ba), bard = ba.dot(rd), baoa = ba.dot(oa), rdoa = rd.dot(oa), oaoa = oa.dot(oa);
    const double qa = baba - bard * bard;
    double qb = baba * rdoa - baoa * bard;
    double qc = baba * oaoa - baoa * baoa - r * r * baba;
    double h = qb * qb - qa * qc;
    double t = -1.0;
    if (h >= 0.0) {
      const double tb = (-qb - std::sqrt(h)) / qa;
      const double y = baoa + tb * bard;
      if (y > 0.0 && y < baba) {
        t = tb;
      } else {
        // spherical caps
        const Eigen::Vector3d oc = y <= 0.0 ? oa : Eigen::Vector3d(origin - caps.b[j]);
        qb = rd.dot(oc);
        qc = oc.dot(oc) - r * r;
        h = qb * qb - qc;
        if (h > 0.0) t = -qb - std::sqrt(h);
      }
    }
    if (t > 0.0 && (!best.hit || t < best.depth * scale)) {
      const Eigen::Vector3d p = origin + t * rd;
      const double along = std::clamp((p - caps.a[j]).dot(ba) / baba, 0.0, 1.0);
      best.hit = true;
      best.depth = t / scale;
      best.normal = (p - (caps.a[j] + along * ba)).normalized();
      best.bone = static_cast<int>(j);
    }
  }
  return best;
}

void render_analytic(const BodyModel& model, const BodyParams& params, const Mat& albedo, const Camera& cam,
                     Image& rgb, Image& mask) {
  if (albedo.rows() != model.joints() || albedo.cols() != 3) throw ContractError("render_analytic: albedo must be J x 3");
  const Capsules caps = posed_capsules(model, params);
  rgb = Image(cam.width, cam.height, 3);
  mask = Image(cam.width, cam.height, 1);
  const Eigen::Vector3d o = cam.center();
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const CapsuleHit h = trace_capsules(caps, o, cam.ray_direction(x, y));
      if (!h.hit) continue;
      const Eigen::Index i = rgb.index(x, y);
      const double shade = kAmbient + (1.0 - kAmbient) * std::max(0.0, h.normal.dot(kLightDirection));
      rgb.pixels.row(i) = shade * albedo.row(h.bone);
      mask.pixels(i, 0) = 1.0;
    }
  }
}

std::vector<Camera> ring_cameras(const SceneSpec& spec) {
  std::vector<Camera> cams;
  const double el = spec.elevation_deg * std::numbers::pi / 180.0;
  const Eigen::Vector3d target(0.0, 0.05, 0.0);
  for (int k = 0; k < spec.cameras; ++k) {
    const double az = (spec.first_azimuth_deg + 360.0 * k / spec.cameras) * std::numbers::pi / 180.0;
    const Eigen::Vector3d eye =
        target + spec.radius * Eigen::Vector3d(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));
    cams.push_back(Camera::look_at(eye, target, Eigen::Vector3d::UnitY(), spec.focal, spec.image_size, spec.image_size));
  }
  return cams;
}

json skeleton_to_json(const Skeleton& s) {
  return {{"parent", s.parent},           {"offset", mat_to_json(s.offset)},
          {"bone", mat_to_json(s.bone)},   {"radius", s.radius},
          {"length_slot", s.length_slot}, {"radius_slot", s.radius_slot},
          {"end_child", s.end_child},     {"canonical_pose", mat_to_json(s.canonical_pose)}};
}

Skeleton skeleton_from_json(const json& j) {
  Skeleton s;
  try {
    s.parent = j.at("parent").get<std::vector<int>>();
    s.offset = mat_from_json(j.at("offset"), 3, "skeleton offset");
    s.bone = mat_from_json(j.at("bone"), 3, "skeleton bone");
    s.radius = j.at("radius").get<std::vector<double>>();
    s.length_slot = j.at("length_slot").get<std::vector<int>>();
    s.radius_slot = j.at("radius_slot").get<std::vector<int>>();
    s.end_child = j.at("end_child").get<std::vector<int>>();
    s.canonical_pose = mat_from_json(j.at("canonical_pose"), 3, "skeleton canonical pose");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("skeleton: ") + e.what());
  }
  s.validate();
  return s;
}

json camera_to_json(const Camera& c) {
  return {{"K", matrix3_to_json(c.K)},
          {"R", matrix3_to_json(c.R)},
          {"t", {c.t.x(), c.t.y(), c.t.z()}},
          {"width", c.width},
          {"height", c.height}};
}

Camera camera_from_json(const json& j) {
  Camera c;
  try {
    c.K = matrix3_from_json(j.at("K"), "camera K");
    c.R = matrix3_from_json(j.at("R"), "camera R");
    const auto t = j.at("t").get<std::vector<double>>();
    if (t.size() != 3) throw ValidationError("camera t must have 3 entries");
    c.t = Eigen::Vector3d(t[0], t[1], t[2]);
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("camera: ") + e.what());
  }
  c.validate();
  return c;
}

json pose_to_json(const BodyParams& p) {
  return {{"theta", mat_to_json(p.theta)}, {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

BodyParams pose_from_json(const json& j, int joints) {
  BodyParams p;
  try {
    p.theta = mat_from_json(j.at("theta"), 3, "pose theta");
    const auto t = j.value("translation", std::vector<double>{0.0, 0.0, 0.0});
    if (t.size() != 3) throw ValidationError("pose translation must have 3 entries");
    p.translation = Eigen::Vector3d(t[0], t[1], t[2]);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("pose: ") + e.what());
  }
  if (p.theta.rows() != joints) throw ValidationError("pose: expected " + std::to_string(joints) + " joints");
  if (!p.theta.allFinite() || !p.translation.allFinite()) throw ValidationError("pose: non-finite rotation");
  return p;
}

json synthesize(const SceneSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const BodyModel model;
  const int J = model.joints();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> tone(0.2, 0.95);

  std::vector<Subject> subjects(static_cast<std::size_t>(spec.subjects));
  std::vector<std::vector<BodyParams>> poses(subjects.size());
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    for (int k = 0; k < kShapeDims; ++k) subjects[s].beta[k] = spec.beta_range * u(rng);
    subjects[s].albedo.resize(J, 3);
    for (Eigen::Index i = 0; i < subjects[s].albedo.size(); ++i) subjects[s].albedo.data()[i] = tone(rng);
    for (int p = 0; p < spec.poses; ++p) {
      BodyParams bp;
      bp.beta = subjects[s].beta;
      bp.theta = random_pose(rng, J, spec.pose_scale);
      poses[s].push_back(bp);
    }
  }
  const auto cams = ring_cameras(spec);

  json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kVersion;
  manifest["spec"] = spec.to_json();
  manifest["skeleton"] = "skeleton.json";
  manifest["poses"] = "poses.json";
  manifest["cameras"] = json::array();
  for (const auto& c : cams) manifest["cameras"].push_back(camera_to_json(c));
  manifest["subjects"] = json::array();
  json pose_file = {{"subjects", json::array()}};
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    json b = json::array();
    for (int k = 0; k < kShapeDims; ++k) b.push_back(subjects[s].beta[k]);
    manifest["subjects"].push_back({{"beta", b}, {"albedo", mat_to_json(subjects[s].albedo)}});
    json ps = json::array();
    for (const auto& p : poses[s]) ps.push_back(pose_to_json(p));
    pose_file["subjects"].push_back(ps);
  }

  manifest["frames"] = json::array();
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    for (int p = 0; p < spec.poses; ++p) {
      for (int c = 0; c < spec.cameras; ++c) {
        Image rgb, mask;
        render_analytic(model, poses[s][static_cast<std::size_t>(p)], subjects[s].albedo, cams[static_cast<std::size_t>(c)],
                        rgb, mask);
        const std::string name = frame_name(static_cast<int>(s), p, c);
        write_png(out_dir / "images" / name, rgb);
        write_png(out_dir / "masks" / name, mask);
        manifest["frames"].push_back({{"subject", s},
                                      {"pose", p},
                                      {"camera", c},
                                      {"image", "images/" + name},
                                      {"mask", "masks/" + name}});
      }
    }
  }

  // Last pose is held out; the last camera is the evaluation target.
  const int test_pose = spec.poses - 1;
  const int target_cam = spec.cameras - 1;
  json train = json::array();
  for (int p = 0; p < test_pose; ++p) train.push_back(p);
  json nv = json::array(), np = json::array();
  for (int s = 0; s < spec.subjects; ++s) {
    nv.push_back({{"subject", s}, {"input_pose", test_pose}, {"input_cameras", {0, 1, 2}},
                  {"target_pose", test_pose}, {"target_camera", target_cam}});
    np.push_back({{"subject", s}, {"input_pose", 0}, {"input_cameras", {0, 1, 2}},
                  {"target_pose", test_pose}, {"target_camera", target_cam}});
  }
  manifest["splits"] = {{"train_poses", train}, {"novel_view", nv}, {"novel_pose", np}};

  write_json(out_dir / "skeleton.json", skeleton_to_json(model.skeleton()));
  write_json(out_dir / "poses.json", pose_file);
  write_json(out_dir / "manifest.json", manifest);
  return manifest;
}

namespace {

EvalPair pair_from_json(const json& j, const Dataset& d) {
  EvalPair e;
  e.subject = j.at("subject").get<int>();
  e.input_pose = j.at("input_pose").get<int>();
  e.input_cameras = j.at("input_cameras").get<std::vector<int>>();
  e.target_pose = j.at("target_pose").get<int>();
  e.target_camera = j.at("target_camera").get<int>();
  const int S = static_cast<int>(d.subjects.size()), P = d.pose_count(), C = static_cast<int>(d.cameras.size());
  auto in = [](int v, int n) { return v >= 0 && v < n; };
  bool ok = in(e.subject, S) && in(e.input_pose, P) && in(e.target_pose, P) && in(e.target_camera, C) &&
            !e.input_cameras.empty();
  for (int c : e.input_cameras) ok = ok && in(c, C);
  if (!ok) throw ValidationError("manifest: evaluation pair refers to a missing subject, pose or camera");
  return e;
}

}  // namespace

Dataset load_dataset(const fs::path& path) {
  const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
  Dataset d;
  d.root = manifest_path.parent_path();
  const json m = read_json(manifest_path);
  if (!m.is_object() || m.value("format", std::string()) != kFormat || m.value("version", -1) != kVersion) {
    throw ValidationError("manifest schema mismatch: expected format '" + std::string(kFormat) + "' version " +
                          std::to_string(kVersion) + " in " + manifest_path.string());
  }
  try {
    d.spec = SceneSpec::from_json(m.at("spec"));
    d.skeleton = skeleton_from_json(read_json(d.root / m.at("skeleton").get<std::string>()));
    const int J = d.skeleton.joints();
    for (std::size_t c = 0; c < m.at("cameras").size(); ++c) {
      try {
        d.cameras.push_back(camera_from_json(m["cameras"][c]));
      } catch (const ValidationError& e) {
        throw ValidationError("camera " + std::to_string(c) + ": " + e.what());
      }
    }
    for (const auto& s : m.at("subjects")) {
      Subject sub;
      const auto beta = s.at("beta").get<std::vector<double>>();
      if (beta.size() != kShapeDims) throw ValidationError("subject beta must have 10 entries");
      for (int k = 0; k < kShapeDims; ++k) sub.beta[k] = beta[static_cast<std::size_t>(k)];
      sub.albedo = mat_from_json(s.at("albedo"), 3, "subject albedo");
      d.subjects.push_back(sub);
    }
    const json pf = read_json(d.root / m.at("poses").get<std::string>());
    const auto& ps = pf.at("subjects");
    if (ps.size() != d.subjects.size()) throw ValidationError("poses.json: subject count differs from the manifest");
    for (std::size_t s = 0; s < ps.size(); ++s) {
      std::vector<BodyParams> list;
      for (const auto& p : ps[s]) {
        BodyParams bp = pose_from_json(p, J);
        bp.beta = d.subjects[s].beta;
        list.push_back(bp);
      }
      if (!d.poses.empty() && list.size() != d.poses[0].size()) throw ValidationError("poses.json: ragged pose lists");
      d.poses.push_back(std::move(list));
    }

    const std::size_t S = d.subjects.size(), P = static_cast<std::size_t>(d.pose_count()), C = d.cameras.size();
    d.images.assign(S, std::vector<std::vector<Image>>(P, std::vector<Image>(C)));
    d.masks = d.images;
    std::vector<std::uint8_t> seen(S * P * C, 0);
    for (const auto& f : m.at("frames")) {
      const int s = f.at("subject").get<int>(), p = f.at("pose").get<int>(), c = f.at("camera").get<int>();
      if (s < 0 || p < 0 || c < 0 || s >= static_cast<int>(S) || p >= static_cast<int>(P) || c >= static_cast<int>(C)) {
        throw ValidationError("manifest: frame index out of range");
      }
      const fs::path ip = d.root / f.at("image").get<std::string>();
      const fs::path mp = d.root / f.at("mask").get<std::string>();
      Image img = read_png(ip, 3);
      Image msk = read_png(mp, 1);
      const Camera& cam = d.cameras[static_cast<std::size_t>(c)];
      if (img.width != cam.width || img.height != cam.height || msk.width != cam.width || msk.height != cam.height) {
        throw ValidationError("image size does not match camera " + std::to_string(c) + ": " + ip.string());
      }
      for (Eigen::Index i = 0; i < msk.pixels.size(); ++i) {
        const double v = msk.pixels.data()[i];
        if (v != 0.0 && v != 1.0) throw ValidationError("mask is not binary: " + mp.string());
      }
      d.images[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)][static_cast<std::size_t>(c)] = std::move(img);
      d.masks[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)][static_cast<std::size_t>(c)] = std::move(msk);
      seen[(static_cast<std::size_t>(s) * P + static_cast<std::size_t>(p)) * C + static_cast<std::size_t>(c)] = 1;
    }
    for (auto v : seen) {
      if (!v) throw ValidationError("manifest: some (subject, pose, camera) frames are missing");
    }
    const auto& splits = m.at("splits");
    d.train_poses = splits.at("train_poses").get<std::vector<int>>();
    for (int p : d.train_poses) {
      if (p < 0 || p >= static_cast<int>(P)) throw ValidationError("manifest: training pose out of range");
    }
    if (d.train_poses.empty()) throw ValidationError("manifest: no training poses");
    for (const auto& e : splits.at("novel_view")) d.novel_view.push_back(pair_from_json(e, d));
    for (const auto& e : splits.at("novel_pose")) d.novel_pose.push_back(pair_from_json(e, d));
  } catch (const json::exception& e) {
    throw ValidationError("manifest " + manifest_path.string() + ": " + e.what());
  }
  return d;
}

}  // namespace avatarfield
