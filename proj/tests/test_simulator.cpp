#include "mbtrack/simulator.hpp"

#include "mbtrack/raster.hpp"
#include "test_helpers.hpp"

#include <doctest.h>

#include <filesystem>

using namespace mbtrack;
using namespace mbtrack::testing;

TEST_CASE("noise-free scenario: every emitted pixel is an exact projection") {
  ScenarioSpec spec = default_scenario(3);
  spec.frames = 40;
  spec.subdivisions = 3;
  spec.noise = NoiseSpec{0.0, 0.0, 0.0};
  const ScenarioData data = generate_scenario(spec);
  REQUIRE(int(data.frames.size()) == 40);
  size_t organ_obs = 0, bg_obs = 0;
  for (int f = 0; f < 40; ++f) {
    for (const Observation& obs : data.frames[f].observations) {
      REQUIRE(obs.feature_id.has_value());
      const int64_t fid = *obs.feature_id;
      if (fid < data.truth.organ_feature_count) {
        const auto px =
            project_point(data.truth.cam_rel_organ[f], spec.k, data.truth.organ_points[fid]);
        REQUIRE(px.has_value());
        CHECK((*px - obs.pixel).norm() == 0.0);
        ++organ_obs;
      } else {
        const auto px = project_point(
            data.truth.cam_in_lab[f], spec.k,
            data.truth.background_points[fid - data.truth.organ_feature_count]);
        REQUIRE(px.has_value());
        CHECK((*px - obs.pixel).norm() == 0.0);
        ++bg_obs;
      }
    }
  }
  CHECK(organ_obs > 1000);
  CHECK(bg_obs > 100);
}

TEST_CASE("ground truth reproduces pixels through the camera-relative-to-organ pose") {
  ScenarioSpec spec = organ_motion_scenario(5);
  spec.subdivisions = 2;
  spec.noise = NoiseSpec{0.0, 0.0, 0.0};
  const ScenarioData data = generate_scenario(spec);
  for (int f = 0; f < spec.frames; f += 17) {
    const Pose recomposed = data.truth.cam_in_lab[f].compose(data.truth.organ_in_lab[f]);
    CHECK(rotation_angle(recomposed, data.truth.cam_rel_organ[f]) < 1e-12);
    CHECK((recomposed.t - data.truth.cam_rel_organ[f].t).norm() < 1e-12);
  }
}

TEST_CASE("dropout 0.3 retains close to 70% of observations") {
  ScenarioSpec spec = default_scenario(11);
  spec.frames = 1000;
  spec.subdivisions = 3;
  spec.noise = NoiseSpec{0.0, 0.0, 0.0};
  const ScenarioData full = generate_scenario(spec);
  spec.noise.dropout = 0.3;
  const ScenarioData dropped = generate_scenario(spec);
  size_t n_full = 0, n_dropped = 0;
  for (const auto& f : full.frames) n_full += f.observations.size();
  for (const auto& f : dropped.frames) n_dropped += f.observations.size();
  REQUIRE(n_full > 100000);
  CHECK(double(n_dropped) / double(n_full) == doctest::Approx(0.70).epsilon(0.015));
}

TEST_CASE("out-of-FoV event empties the organ observations mid-event") {
  ScenarioSpec spec = out_of_fov_scenario(7);
  spec.subdivisions = 3;
  const ScenarioData data = generate_scenario(spec);
  const SimEvent& ev = spec.events[0];
  const int mid = (ev.start_frame + ev.end_frame) / 2;
  int organ_mid = 0;
  for (const Observation& obs : data.frames[mid].observations) {
    if (*obs.feature_id < data.truth.organ_feature_count) ++organ_mid;
  }
  CHECK(organ_mid == 0);
  int organ_before = 0;
  for (const Observation& obs : data.frames[ev.start_frame - 10].observations) {
    if (*obs.feature_id < data.truth.organ_feature_count) ++organ_before;
  }
  CHECK(organ_before > 50);
}

TEST_CASE("occlusion event removes observations inside the rectangle") {
  ScenarioSpec spec = occlusion_scenario(13);
  spec.subdivisions = 3;
  const ScenarioData data = generate_scenario(spec);
  const SimEvent& ev = spec.events[0];
  const int mid = (ev.start_frame + ev.end_frame) / 2;
  CHECK(data.frames[mid].observations.empty());  // full-screen rectangle
  CHECK_FALSE(data.frames[ev.start_frame - 5].observations.empty());
  CHECK_FALSE(data.frames[ev.end_frame + 5].observations.empty());
}

TEST_CASE("camera-relative-to-organ trajectory is invariant under a lab-frame rigid motion") {
  ScenarioSpec spec = organ_motion_scenario(17);
  spec.subdivisions = 2;
  const ScenarioData data = generate_scenario(spec);
  Rng rng(99);
  const Pose g = random_pose(rng, 2.0, 5.0);
  for (int f = 0; f < spec.frames; f += 50) {
    const Pose moved_cam = data.truth.cam_in_lab[f].compose(g.inverse());
    const Pose moved_organ = g.compose(data.truth.organ_in_lab[f]);
    const Pose rel = moved_cam.compose(moved_organ);
    CHECK(rotation_angle(rel, data.truth.cam_rel_organ[f]) < 1e-9);
    CHECK((rel.t - data.truth.cam_rel_organ[f].t).norm() < 1e-9);
  }
}

TEST_CASE("same spec and seed give bit-identical streams") {
  ScenarioSpec spec = fast_motion_scenario(23);
  spec.subdivisions = 2;
  const ScenarioData a = generate_scenario(spec);
  const ScenarioData b = generate_scenario(spec);
  REQUIRE(a.frames.size() == b.frames.size());
  for (size_t f = 0; f < a.frames.size(); ++f) {
    REQUIRE(a.frames[f].observations.size() == b.frames[f].observations.size());
    for (size_t i = 0; i < a.frames[f].observations.size(); ++i) {
      CHECK(a.frames[f].observations[i].pixel == b.frames[f].observations[i].pixel);
      CHECK(*a.frames[f].observations[i].feature_id == *b.frames[f].observations[i].feature_id);
    }
  }
}

TEST_CASE("fast-motion event compresses more trajectory into the window") {
  ScenarioSpec spec = fast_motion_scenario(29);
  spec.frames = 300;
  spec.subdivisions = 2;
  const SimEvent& ev = spec.events[0];
  const ScenarioData data = generate_scenario(spec);
  auto span = [&](int f0, int f1) {
    double d = 0.0;
    for (int f = f0 + 1; f < f1; ++f) {
      d += (data.truth.cam_in_lab[f].center() - data.truth.cam_in_lab[f - 1].center()).norm();
    }
    return d / double(f1 - f0 - 1);
  };
  const double inside = span(ev.start_frame, ev.end_frame);
  const double before = span(10, ev.start_frame - 10);
  CHECK(inside > 2.0 * before);
}

TEST_CASE("rendered frames are deterministic and detector-friendly") {
  ScenarioSpec spec = default_scenario(31);
  spec.frames = 3;
  spec.subdivisions = 3;
  const ScenarioData data = generate_scenario(spec);
  RenderOptions opts;
  const ImageRGB a = render_synthetic_image(data, 1, opts);
  const ImageRGB b = render_synthetic_image(data, 1, opts);
  CHECK(a.data == b.data);

  const ImageGray gray = to_gray(a);
  const auto corners = detect_corners_grid(gray, 600, 15);
  const BinaryMask mask = render_mask(data.mesh, data.truth.cam_rel_organ[1], spec.k, 0);
  int inside = 0;
  for (const Corner& c : corners) {
    if (mask.covers(c.pixel)) ++inside;
  }
  CHECK(inside >= 100);
}

TEST_CASE("rendered silhouette matches render_mask up to a 1-px band") {
  ScenarioSpec spec = default_scenario(37);
  spec.frames = 1;
  spec.subdivisions = 3;
  const ScenarioData data = generate_scenario(spec);
  RenderOptions opts;
  opts.background_speckle = false;  // black background isolates the organ
  opts.shading = false;
  opts.constant_albedo = true;
  opts.albedo_value = 200;
  const ImageRGB img = render_synthetic_image(data, 0, opts);
  BinaryMask rendered(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.at(x, y)[0] > 0) rendered.set(x, y);
    }
  }
  const BinaryMask mask = render_mask(data.mesh, data.truth.cam_rel_organ[0], spec.k, 0);
  const BinaryMask mask_grown = dilate(mask, 1);
  const BinaryMask rendered_grown = dilate(rendered, 1);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (rendered.at(x, y)) REQUIRE(mask_grown.at(x, y));
      if (mask.at(x, y)) REQUIRE(rendered_grown.at(x, y));
    }
  }
}

TEST_CASE("observation log round-trips") {
  ScenarioSpec spec = default_scenario(41);
  spec.frames = 12;
  spec.subdivisions = 2;
  const ScenarioData data = generate_scenario(spec);
  const auto path = (std::filesystem::temp_directory_path() / "obs.txt").string();
  save_observation_log(data.frames, spec.k, path);
  const ObservationLog log = load_observation_log(path);
  REQUIRE(log.frames.size() == data.frames.size());
  CHECK(log.k.fx == spec.k.fx);
  CHECK(log.k.width == spec.k.width);
  for (size_t f = 0; f < log.frames.size(); ++f) {
    REQUIRE(log.frames[f].observations.size() == data.frames[f].observations.size());
    for (size_t i = 0; i < log.frames[f].observations.size(); ++i) {
      CHECK(log.frames[f].observations[i].pixel == data.frames[f].observations[i].pixel);
    }
  }
}

TEST_CASE("pose text file round-trips") {
  Rng rng(47);
  const Pose pose = random_pose(rng);
  const auto path = (std::filesystem::temp_directory_path() / "pose.txt").string();
  save_pose_txt(pose, path);
  const Pose loaded = load_pose_txt(path);
  CHECK(rotation_angle(pose, loaded) < 1e-12);
  CHECK((pose.t - loaded.t).norm() < 1e-12);
}

TEST_CASE("pseudo-mask retention: next-frame points stay inside the dilated previous mask") {
  ScenarioSpec spec = default_scenario(53);
  spec.frames = 120;
  spec.subdivisions = 3;
  spec.noise = NoiseSpec{0.0, 0.0, 0.0};
  const ScenarioData data = generate_scenario(spec);
  const int dilation = 5;
  int total = 0, retained = 0;
  for (int f = 20; f < 100; f += 20) {
    const Pose& prev = data.truth.cam_rel_organ[f - 1];
    const Pose& cur = data.truth.cam_rel_organ[f];
    // Inter-frame motion in this scenario is well under 2 deg / 1% depth.
    REQUIRE(rotation_angle(prev, cur) < 2.0 * M_PI / 180.0);
    const BinaryMask mask = render_mask(data.mesh, prev, spec.k, dilation);
    for (const Observation& obs : data.frames[f].observations) {
      if (*obs.feature_id >= data.truth.organ_feature_count) continue;
      ++total;
      if (mask.covers(obs.pixel)) ++retained;
    }
  }
  REQUIRE(total > 300);
  CHECK(double(retained) / double(total) >= 0.99);
}
