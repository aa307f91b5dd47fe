// mbtrack command-line driver: simulate, track, register, ablate, global-ba,
// texture-export.
#include "mbtrack/config.hpp"
#include "mbtrack/registration.hpp"
#include "mbtrack/runner.hpp"
#include "mbtrack/simulator.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace mbtrack;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  int seed = -1;
  bool deterministic = false;
  bool parallel = false;
  std::vector<std::string> toggles;  // NAME or NAME=on|off
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_toggles = true) {
  cmd->add_option("--config", opts.config_path, "run configuration (TOML)")->required();
  cmd->add_option("--out", opts.out_dir, "output directory (overrides run.out)");
  cmd->add_option("--seed", opts.seed, "seed (overrides run.seed)");
  cmd->add_flag("--deterministic", opts.deterministic,
                "sequential tracking+mapping (reproducible)");
  cmd->add_flag("--parallel", opts.parallel, "threaded mapping worker");
  if (with_toggles) {
    cmd->add_option("--toggle", opts.toggles, "ablation toggle NAME[=on|off]");
  }
}

RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? make_run_config(ConfigFile::parse_string(""))
                                           : load_run_config(opts.config_path);
  if (opts.seed >= 0) {
    cfg.seed = uint64_t(opts.seed);
    cfg.pipeline.seed = cfg.seed;
    if (cfg.mode == InputMode::scenario) cfg.scenario.seed = cfg.seed;
  }
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.deterministic) cfg.pipeline.deterministic = true;
  if (opts.parallel) cfg.pipeline.deterministic = false;
  for (const std::string& t : opts.toggles) {
    std::string name = t;
    bool value = true;
    const size_t eq = t.find('=');
    if (eq != std::string::npos) {
      name = t.substr(0, eq);
      const std::string v = t.substr(eq + 1);
      value = v == "on" || v == "true" || v == "1";
    }
    if (name == "prior_init") {
      cfg.pipeline.enable_prior_init = value;
    } else if (name == "pseudo_mask") {
      cfg.pipeline.enable_mask = value;
    } else if (name == "shape_prior_ba") {
      cfg.pipeline.enable_shape_prior = value;
    } else {
      throw std::runtime_error("unknown toggle '" + name + "'");
    }
  }
  return cfg;
}

int cmd_simulate(const CommonOpts& opts, bool with_images) {
  RunConfig cfg = resolve_config(opts);
  if (cfg.mode != InputMode::scenario) throw std::runtime_error("simulate needs a scenario input");
  const ScenarioData data = generate_scenario(cfg.scenario);
  fs::create_directories(cfg.out_dir);
  save_observation_log(data.frames, data.k, (fs::path(cfg.out_dir) / "observations.txt").string());
  save_ground_truth_csv(data.truth, data.k,
                        (fs::path(cfg.out_dir) / "ground_truth.csv").string());
  save_pose_txt(data.t_init, (fs::path(cfg.out_dir) / "t_init.txt").string());
  save_correspondences_csv(data.correspondences,
                           (fs::path(cfg.out_dir) / "correspondences.csv").string());
  save_mesh_ply(data.mesh, (fs::path(cfg.out_dir) / "organ.ply").string());
  if (with_images) {
    const fs::path frame_dir = fs::path(cfg.out_dir) / "frames";
    fs::create_directories(frame_dir);
    RenderOptions render;
    for (int f = 0; f < int(data.frames.size()); ++f) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%05d.png", f);
      save_rgb(render_synthetic_image(data, f, render), (frame_dir / name).string());
    }
  }
  std::cout << "scenario '" << cfg.scenario_name << "' written to " << cfg.out_dir << " ("
            << data.frames.size() << " frames)\n";
  return 0;
}

int cmd_track(const CommonOpts& opts) {
  RunConfig cfg = resolve_config(opts);
  const RunArtifacts artifacts = run_tracking(cfg);
  std::cout << report_to_json(cfg, artifacts) << "\n";
  return artifacts.init_failed ? 2 : 0;
}

int cmd_register(const std::string& corr_path, const std::string& intrinsics_str,
                 const std::string& out_path) {
  std::vector<double> kv;
  std::stringstream ss(intrinsics_str);
  std::string tok;
  while (std::getline(ss, tok, ',')) kv.push_back(std::stod(tok));
  if (kv.size() != 6) {
    throw std::runtime_error("--intrinsics expects fx,fy,cx,cy,width,height");
  }
  Intrinsics k{kv[0], kv[1], kv[2], kv[3], int(kv[4]), int(kv[5])};
  const auto corrs = load_correspondences_csv(corr_path);
  const RegistrationResult result = solve_initial_registration(corrs, k);
  const auto m = result.pose.to_row_major();
  std::cout.precision(12);
  std::cout << "rms_px " << result.rms_px << (result.converged ? "" : " (no start converged)")
            << "\npose";
  for (int i = 0; i < 12; ++i) std::cout << " " << m[i];
  std::cout << "\n";
  if (!out_path.empty()) save_pose_txt(result.pose, out_path);
  return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::string& toggle) {
  RunConfig cfg = resolve_config(opts);
  const AblationArtifacts pair = run_ablation(cfg, toggle);
  std::ifstream in(pair.comparison_json);
  std::cout << in.rdbuf();
  return 0;
}

int cmd_global_ba(const CommonOpts& opts) {
  RunConfig cfg = resolve_config(opts);
  cfg.pipeline.global_ba_at_end = true;
  const RunArtifacts artifacts = run_tracking(cfg);
  std::cout << "global BA cost " << artifacts.global_ba_initial_cost << " -> "
            << artifacts.global_ba_final_cost << "\n";
  return 0;
}

int cmd_texture_export(const CommonOpts& opts, const std::string& mesh_out) {
  RunConfig cfg = resolve_config(opts);
  cfg.pipeline.texture_keyframes = true;
  if (cfg.mode == InputMode::scenario) cfg.render_images = true;
  const RunArtifacts artifacts = run_tracking(cfg);
  if (!mesh_out.empty() && !artifacts.textured_ply.empty()) {
    fs::copy_file(artifacts.textured_ply, mesh_out, fs::copy_options::overwrite_existing);
    std::cout << "textured mesh written to " << mesh_out << "\n";
  } else {
    std::cout << "textured mesh written to " << artifacts.textured_ply << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mbtrack: model-based monocular 3D tracking"};
  app.require_subcommand(1);

  CommonOpts sim_opts, track_opts, ablate_opts, ba_opts, tex_opts;
  bool sim_images = false;
  std::string reg_corrs, reg_intrinsics, reg_out, ablate_toggle, tex_out;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic scenario");
  add_common(sim, sim_opts);
  sim->add_flag("--images", sim_images, "also render PNG frames");

  auto* track = app.add_subcommand("track", "run the tracking pipeline");
  add_common(track, track_opts);

  auto* reg = app.add_subcommand("register", "solve the initial registration from a CSV");
  reg->add_option("--correspondences", reg_corrs, "CSV with x,y,z,u,v rows")->required();
  reg->add_option("--intrinsics", reg_intrinsics, "fx,fy,cx,cy,width,height")->required();
  reg->add_option("--out", reg_out, "write the pose as a 12-number text file");

  auto* ablate = app.add_subcommand("ablate", "paired run with one toggle flipped");
  add_common(ablate, ablate_opts, false);
  ablate->add_option("--toggle", ablate_toggle, "prior_init|pseudo_mask|shape_prior_ba")
      ->required();

  auto* gba = app.add_subcommand("global-ba", "track and report the final global BA");
  add_common(gba, ba_opts);

  auto* tex = app.add_subcommand("texture-export", "track with texturing and export the PLY");
  add_common(tex, tex_opts);
  tex->add_option("--mesh-out", tex_out, "destination PLY path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(sim_opts, sim_images);
    if (track->parsed()) return cmd_track(track_opts);
    if (reg->parsed()) return cmd_register(reg_corrs, reg_intrinsics, reg_out);
    if (ablate->parsed()) return cmd_ablate(ablate_opts, ablate_toggle);
    if (gba->parsed()) return cmd_global_ba(ba_opts);
    if (tex->parsed()) return cmd_texture_export(tex_opts, tex_out);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
