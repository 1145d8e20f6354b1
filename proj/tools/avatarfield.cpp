// avatarfield command line: synth | train | evaluate | render | animate | extract-mesh | grad-check
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "avatarfield/dataset.hpp"
#include "avatarfield/errors.hpp"
#include "avatarfield/evaluation.hpp"
#include "avatarfield/grad_suite.hpp"
#include "avatarfield/image_io.hpp"
#include "avatarfield/mesh.hpp"
#include "avatarfield/trainer.hpp"

using namespace avatarfield;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON configuration file");
  cmd->add_option("--seed", c.seed, "random seed")->each([&c](const std::string&) { c.seed_set = true; });
  cmd->add_option("--threads", c.threads, "worker threads for rendering")->check(CLI::PositiveNumber);
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
}

// Options shared by the commands that only render a trained model.
struct RenderOptions {
  int chunk = 512;
  std::optional<AblationFlags> ablations;
};

RenderOptions render_options(const std::string& path) {
  const json j = read_config(path);
  RenderOptions o;
  for (const auto& [key, value] : j.items()) {
    if (key == "chunk") o.chunk = value.get<int>();
    else if (key == "ablations") o.ablations = AblationFlags::from_json(value);
    else throw ValidationError("render config: unknown key '" + key + "'");
  }
  if (o.chunk < 1) throw ValidationError("render config: chunk must be positive");
  return o;
}

LoadedModel open_model(const std::string& stem, const RenderOptions& o) {
  LoadedModel m = load_model(stem);
  if (o.ablations) {
    m.config.model.ablations = *o.ablations;
    m.model.emplace(m.config.model);
  }
  return m;
}

void check_model_data(const LoadedModel& m, const Dataset& d) {
  if (static_cast<int>(d.subjects.size()) != m.config.model.subjects) {
    throw ValidationError("dataset has " + std::to_string(d.subjects.size()) + " subjects, model expects " +
                          std::to_string(m.config.model.subjects));
  }
}

std::vector<int> other_cameras(const Dataset& d, int target) {
  std::vector<int> out;
  for (int c = 0; c < static_cast<int>(d.cameras.size()) && out.size() < 3; ++c) {
    if (c != target) out.push_back(c);
  }
  return out;
}

void render_one(const LoadedModel& m, const RenderOptions& o, const RenderRequest& req, int threads,
                const fs::path& out, const fs::path& mask_out) {
  Image rgb, mask;
  m.model->render_image(m.params, req, rgb, mask, threads, o.chunk);
  write_png(out, rgb);
  if (!mask_out.empty()) write_png(mask_out, mask);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalizable animatable human avatars from sparse views"};
  app.require_subcommand(1);

  // synth
  Common synth_c;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a synthetic multi-view dataset");
  add_common(synth, synth_c);
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  Common train_c;
  std::string train_data, train_out, train_resume;
  int train_iterations = -1;
  AblationFlags flags;
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  add_common(train, train_c);
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "run directory")->required();
  train->add_option("--iterations", train_iterations, "override the iteration count");
  train->add_option("--resume", train_resume, "checkpoint stem to resume from");
  train->add_flag("--no-shading", flags.no_shading);
  train->add_flag("--no-displacement", flags.no_displacement);
  train->add_flag("--no-learnable-skinning", flags.no_learnable_skinning);
  train->add_flag("--no-geo-feats", flags.no_geo_feats);
  train->add_flag("--no-identity", flags.no_identity);
  train->add_flag("--normals-to-viewdirs", flags.normals_to_viewdirs);

  // evaluate
  Common eval_c;
  std::string eval_ckpt, eval_data, eval_out;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score novel-view and novel-pose renders");
  add_common(evaluate_cmd, eval_c);
  evaluate_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint stem")->required();
  evaluate_cmd->add_option("--data", eval_data, "dataset directory")->required();
  evaluate_cmd->add_option("--out", eval_out, "directory for renders and metrics.json");

  // render
  Common render_c;
  std::string render_ckpt, render_data, render_out, render_mask;
  int r_subject = 0, r_input_pose = 0, r_target_pose = 0, r_camera = -1;
  std::vector<int> r_inputs;
  auto* render = app.add_subcommand("render", "render one target view from input views");
  add_common(render, render_c);
  render->add_option("--checkpoint", render_ckpt, "checkpoint stem")->required();
  render->add_option("--data", render_data, "dataset directory")->required();
  render->add_option("--out", render_out, "output PNG")->required();
  render->add_option("--mask-out", render_mask, "optional output PNG for the accumulated mask");
  render->add_option("--subject", r_subject);
  render->add_option("--input-pose", r_input_pose);
  render->add_option("--target-pose", r_target_pose);
  render->add_option("--camera", r_camera, "target camera (default: last)");
  render->add_option("--input-cameras", r_inputs, "input cameras (default: three others)");

  // animate
  Common anim_c;
  std::string anim_ckpt, anim_data, anim_out, anim_poses;
  int a_subject = 0, a_input_pose = 0, a_camera = -1, a_frames = 12;
  auto* animate = app.add_subcommand("animate", "render a pose sequence from fixed input views");
  add_common(animate, anim_c);
  animate->add_option("--checkpoint", anim_ckpt, "checkpoint stem")->required();
  animate->add_option("--data", anim_data, "dataset directory")->required();
  animate->add_option("--out", anim_out, "output directory")->required();
  animate->add_option("--poses", anim_poses, "JSON file {\"poses\": [{theta, translation}, ...]}");
  animate->add_option("--frames", a_frames, "frames interpolated through the subject's poses when --poses is absent")
      ->check(CLI::PositiveNumber);
  animate->add_option("--subject", a_subject);
  animate->add_option("--input-pose", a_input_pose);
  animate->add_option("--camera", a_camera, "target camera (default: last)");

  // extract-mesh
  Common mesh_c;
  std::string mesh_ckpt, mesh_out;
  int m_subject = 0, m_resolution = 64;
  auto* mesh = app.add_subcommand("extract-mesh", "canonical zero level set as an OBJ mesh");
  add_common(mesh, mesh_c);
  mesh->add_option("--checkpoint", mesh_ckpt, "checkpoint stem")->required();
  mesh->add_option("--out", mesh_out, "output OBJ")->required();
  mesh->add_option("--subject", m_subject);
  mesh->add_option("--resolution", m_resolution)->check(CLI::Range(4, 512));

  // grad-check
  Common grad_c;
  double grad_tol = 1e-4;
  auto* grad = app.add_subcommand("grad-check", "finite-difference check of every module");
  add_common(grad, grad_c);
  grad->add_option("--tolerance", grad_tol, "maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*synth) {
      SceneSpec spec = SceneSpec::from_json(read_config(synth_c.config));
      if (synth_c.seed_set) spec.seed = synth_c.seed;
      synthesize(spec, synth_out);
      std::cout << "wrote " << spec.subjects * spec.poses * spec.cameras << " frames to " << synth_out << "\n";
    } else if (*train) {
      TrainConfig cfg = TrainConfig::from_json(read_config(train_c.config));
      if (train_c.seed_set) cfg.seed = train_c.seed;
      if (train_iterations >= 0) cfg.iterations = train_iterations;
      AblationFlags& ab = cfg.model.ablations;
      ab.no_shading |= flags.no_shading;
      ab.no_displacement |= flags.no_displacement;
      ab.no_learnable_skinning |= flags.no_learnable_skinning;
      ab.no_geo_feats |= flags.no_geo_feats;
      ab.no_identity |= flags.no_identity;
      ab.normals_to_viewdirs |= flags.normals_to_viewdirs;
      const Dataset data = load_dataset(train_data);
      Trainer trainer(data, cfg);
      if (!train_resume.empty()) trainer.resume(train_resume);
      trainer.run(train_out, [](const LossReport& r) {
        std::fprintf(stderr, "iter %6d  total %.5f  color %.5f  mask %.5f  eik %.5f\n", r.iteration, r.total, r.color,
                     r.mask, r.eikonal);
      });
      std::cout << "checkpoint " << (fs::path(train_out) / "model").string() << "\n";
    } else if (*evaluate_cmd) {
      const RenderOptions o = render_options(eval_c.config);
      const LoadedModel m = open_model(eval_ckpt, o);
      const Dataset data = load_dataset(eval_data);
      check_model_data(m, data);
      const EvalReport r = evaluate(*m.model, m.params, data, eval_c.threads, eval_out);
      const json j = r.to_json();
      if (!eval_out.empty()) {
        std::ofstream f(fs::path(eval_out) / "metrics.json");
        f << j.dump(2) << "\n";
      }
      std::cout << json{{"novel_view_psnr", r.novel_view.psnr}, {"novel_view_ssim", r.novel_view.ssim},
                        {"novel_pose_psnr", r.novel_pose.psnr}, {"novel_pose_ssim", r.novel_pose.ssim}}
                       .dump(2)
                << "\n";
    } else if (*render) {
      const RenderOptions o = render_options(render_c.config);
      const LoadedModel m = open_model(render_ckpt, o);
      const Dataset data = load_dataset(render_data);
      check_model_data(m, data);
      const int cam = r_camera < 0 ? static_cast<int>(data.cameras.size()) - 1 : r_camera;
      if (cam >= static_cast<int>(data.cameras.size()) || r_subject < 0 || r_subject >= static_cast<int>(data.subjects.size()) ||
          r_input_pose < 0 || r_input_pose >= data.pose_count() || r_target_pose < 0 || r_target_pose >= data.pose_count()) {
        throw ValidationError("render: subject, pose or camera out of range");
      }
      const auto inputs = r_inputs.empty() ? other_cameras(data, cam) : r_inputs;
      for (int c : inputs) {
        if (c < 0 || c >= static_cast<int>(data.cameras.size())) throw ValidationError("render: bad input camera");
      }
      render_one(m, o, make_request(data, r_subject, r_input_pose, inputs, r_target_pose, cam), render_c.threads,
                 render_out, render_mask);
    } else if (*animate) {
      const RenderOptions o = render_options(anim_c.config);
      const LoadedModel m = open_model(anim_ckpt, o);
      const Dataset data = load_dataset(anim_data);
      check_model_data(m, data);
      const int cam = a_camera < 0 ? static_cast<int>(data.cameras.size()) - 1 : a_camera;
      if (cam >= static_cast<int>(data.cameras.size()) || a_subject < 0 || a_subject >= static_cast<int>(data.subjects.size()) ||
          a_input_pose < 0 || a_input_pose >= data.pose_count()) {
        throw ValidationError("animate: subject, pose or camera out of range");
      }
      const int J = data.skeleton.joints();
      const auto& own = data.poses[static_cast<std::size_t>(a_subject)];
      std::vector<BodyParams> seq;
      if (!anim_poses.empty()) {
        const json j = read_config(anim_poses);
        try {
          for (const auto& p : j.at("poses")) seq.push_back(pose_from_json(p, J));
        } catch (const json::exception& e) {
          throw ValidationError(std::string("animate: ") + e.what());
        }
      } else {
        // piecewise-linear axis-angle path through the subject's poses
        for (int f = 0; f < a_frames; ++f) {
          const double s = a_frames == 1 ? 0.0 : static_cast<double>(f) * (own.size() - 1) / (a_frames - 1);
          const auto k = std::min<std::size_t>(static_cast<std::size_t>(s), own.size() - 2);
          const double a = s - static_cast<double>(k);
          BodyParams p = own[k];
          p.theta = (1.0 - a) * own[k].theta + a * own[k + 1].theta;
          p.translation = (1.0 - a) * own[k].translation + a * own[k + 1].translation;
          seq.push_back(p);
        }
      }
      const auto inputs = other_cameras(data, cam);
      RenderRequest req = make_request(data, a_subject, a_input_pose, inputs, 0, cam);
      for (std::size_t f = 0; f < seq.size(); ++f) {
        req.target = seq[f];
        req.target.beta = data.subjects[static_cast<std::size_t>(a_subject)].beta;
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.png", f);
        render_one(m, o, req, anim_c.threads, fs::path(anim_out) / name, {});
      }
      std::cout << "wrote " << seq.size() << " frames to " << anim_out << "\n";
    } else if (*mesh) {
      const LoadedModel m = open_model(mesh_ckpt, render_options(mesh_c.config));
      if (m_subject < 0 || m_subject >= m.config.model.subjects) throw ValidationError("extract-mesh: bad subject");
      const auto beta = m.subject_betas[static_cast<std::size_t>(m_subject)];
      const int threads = mesh_c.threads;
      const TriMesh tri = marching_tetrahedra(
          [&](const Mat& x) {
            Mat out(x.rows(), 1);
            const Eigen::Index n = std::max<Eigen::Index>(1, threads);
            const Eigen::Index step = (x.rows() + n - 1) / n;
            std::vector<std::thread> pool;
            for (Eigen::Index lo = 0; lo < x.rows(); lo += step) {
              pool.emplace_back([&, lo] {
                const Eigen::Index rows = std::min(step, x.rows() - lo);
                out.middleRows(lo, rows) = m.model->canonical_sdf(m.params, m_subject, x.middleRows(lo, rows), beta);
              });
            }
            for (auto& t : pool) t.join();
            return out;
          },
          m.config.model.canonical_box, m_resolution);
      write_obj(mesh_out, tri);
      std::cout << "wrote " << tri.vertices.rows() << " vertices, " << tri.faces.size() << " faces to " << mesh_out << "\n";
    } else if (*grad) {
      const json j = read_config(grad_c.config);
      for (const auto& [key, value] : j.items()) {
        if (key == "tolerance") grad_tol = value.get<double>();
        else throw ValidationError("grad-check config: unknown key '" + key + "'");
      }
      const GradSuiteResult r = run_grad_suite(grad_c.seed, [](const GradCase& c) {
        std::printf("%-20s max rel err %.3e over %zu coords (%.2fs), worst %s: %.6e vs %.6e\n", c.name.c_str(),
                    c.max_relative_error, c.checked, c.seconds, c.worst.c_str(), c.analytic, c.numeric);
      });
      const bool ok = r.max_relative_error <= grad_tol;
      std::printf("grad-check %s: max rel err %.3e (tol %.1e), %.1fs\n", ok ? "passed" : "FAILED", r.max_relative_error,
                  grad_tol, r.seconds);
      return ok ? kExitOk : kExitNumerical;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DegenerateError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
