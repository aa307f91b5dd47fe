#include "mbtrack/simulator.hpp"

#include "mbtrack/raster.hpp"
#include "mbtrack/surface_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mbtrack {

namespace {

// Camera looking from `position` toward `target`, lab +y as the up hint.
Pose look_at_pose(const Vec3& position, const Vec3& target) {
  const Vec3 z = (target - position).normalized();
  Vec3 up{0.0, 1.0, 0.0};
  if (std::abs(up.dot(z)) > 0.98) up = Vec3{1.0, 0.0, 0.0};
  const Vec3 x = up.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return Pose{r, -(r * position)};
}

Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double u) {
  const double u2 = u * u, u3 = u2 * u;
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * u + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2 +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u3);
}

// Piecewise Catmull-Rom over waypoints; s in [0, 1] spans the whole path by
// segment durations.
struct PathSampler {
  std::vector<CameraWaypoint> wp;
  std::vector<double> cum;  // cumulative duration
  double total = 0.0;

  explicit PathSampler(const std::vector<CameraWaypoint>& waypoints) : wp(waypoints) {
    cum.push_back(0.0);
    for (size_t i = 0; i + 1 < wp.size(); ++i) {
      total += std::max(1e-9, wp[i].duration_s);
      cum.push_back(total);
    }
    if (total <= 0.0) total = 1.0;
  }

  void sample(double s, Vec3& position, Vec3& look) const {
    if (wp.size() == 1) {
      position = wp[0].position;
      look = wp[0].look_at;
      return;
    }
    const double t = std::clamp(s, 0.0, 1.0) * total;
    size_t seg = 0;
    while (seg + 2 < cum.size() && t > cum[seg + 1]) ++seg;
    const double u = (t - cum[seg]) / (cum[seg + 1] - cum[seg]);
    auto at = [&](long i) -> const CameraWaypoint& {
      return wp[size_t(std::clamp(i, 0L, long(wp.size()) - 1))];
    };
    position = catmull_rom(at(long(seg) - 1).position, at(long(seg)).position,
                           at(long(seg) + 1).position, at(long(seg) + 2).position, u);
    look = catmull_rom(at(long(seg) - 1).look_at, at(long(seg)).look_at, at(long(seg) + 1).look_at,
                       at(long(seg) + 2).look_at, u);
  }
};

Pose interpolate_pose(const Pose& a, const Pose& b, double u) {
  return Pose{a.q.slerp(u, b.q), (1.0 - u) * a.t + u * b.t};
}

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

TriangleMesh build_organ(const ScenarioSpec& spec) {
  switch (spec.organ) {
    case ScenarioSpec::Organ::icosphere:
      return make_icosphere(spec.subdivisions, spec.organ_radius);
    case ScenarioSpec::Organ::ellipsoid:
      return make_ellipsoid(spec.subdivisions, spec.ellipsoid_radii);
    case ScenarioSpec::Organ::bumpy_ellipsoid:
      return make_bumpy_ellipsoid(spec.subdivisions, spec.ellipsoid_radii, spec.bump_amplitude,
                                  spec.seed);
    case ScenarioSpec::Organ::file:
      return load_mesh(spec.mesh_path);
  }
  throw std::logic_error("build_organ: unknown organ kind");
}

}  // namespace

ScenarioData generate_scenario(const ScenarioSpec& spec) {
  if (spec.frames <= 0 || spec.fps <= 0.0) {
    throw std::invalid_argument("generate_scenario: frames and fps must be positive");
  }
  for (const auto& e : spec.events) {
    if (e.start_frame < 0 || e.end_frame > spec.frames || e.start_frame > e.end_frame) {
      throw std::invalid_argument("generate_scenario: event window out of range");
    }
  }
  if (spec.noise.dropout < 0.0 || spec.noise.dropout > 1.0 || spec.noise.outlier < 0.0 ||
      spec.noise.outlier > 1.0) {
    throw std::invalid_argument("generate_scenario: probabilities must lie in [0,1]");
  }

  ScenarioData data;
  data.mesh = build_organ(spec);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Feature points: organ samples (organ frame) + background box (lab frame).
  {
    SurfaceIndex sampler(data.mesh, double(std::max(spec.organ_features, 1)) /
                                        std::max(data.mesh.surface_area(), 1e-12),
                         spec.seed ^ 0xfeedf00d);
    data.truth.organ_points = sampler.samples();
    data.truth.organ_points.resize(size_t(spec.organ_features),
                                   data.truth.organ_points.empty()
                                       ? Vec3::Zero().eval()
                                       : data.truth.organ_points.back());
  }
  for (int i = 0; i < spec.background_features; ++i) {
    Vec3 p;
    for (int a = 0; a < 3; ++a) {
      p[a] = spec.background_min[a] + uni(rng) * (spec.background_max[a] - spec.background_min[a]);
    }
    data.truth.background_points.push_back(p);
  }
  data.truth.organ_feature_count = spec.organ_features;

  // Time warp: fast-motion events advance path time faster; the spline
  // parameter is elapsed (warped) seconds over the total path duration, and
  // the camera holds the final waypoint once the path is exhausted.
  std::vector<double> speed(spec.frames, 1.0);
  for (const auto& e : spec.events) {
    if (e.type != SimEvent::Type::fast_motion) continue;
    for (int f = e.start_frame; f < e.end_frame; ++f) speed[f] = e.speed_factor;
  }

  std::vector<CameraWaypoint> cam_wp = spec.camera_waypoints;
  if (cam_wp.empty()) {
    cam_wp = default_scenario(spec.seed).camera_waypoints;
  }
  const PathSampler path(cam_wp);
  std::vector<double> warped(spec.frames, 0.0);
  double elapsed = 0.0;
  for (int f = 0; f < spec.frames; ++f) {
    warped[f] = std::min(elapsed / path.total, 1.0);
    elapsed += speed[f] / spec.fps;
  }

  // Organ motion parameter: advances inside organ_motion windows, else the
  // whole sequence when waypoints are given without an event.
  std::vector<double> organ_u(spec.frames, 0.0);
  bool has_organ_event = false;
  for (const auto& e : spec.events) {
    has_organ_event = has_organ_event || e.type == SimEvent::Type::organ_motion;
  }
  if (!spec.organ_waypoints.empty()) {
    if (has_organ_event) {
      double last = 0.0;
      for (int f = 0; f < spec.frames; ++f) {
        for (const auto& e : spec.events) {
          if (e.type == SimEvent::Type::organ_motion && f >= e.start_frame && f < e.end_frame) {
            last = std::max(last, double(f - e.start_frame + 1) /
                                      double(std::max(1, e.end_frame - e.start_frame)));
          }
        }
        organ_u[f] = last;
      }
    } else {
      for (int f = 0; f < spec.frames; ++f) {
        organ_u[f] = spec.frames > 1 ? double(f) / double(spec.frames - 1) : 0.0;
      }
    }
  }

  data.truth.cam_in_lab.resize(spec.frames);
  data.truth.organ_in_lab.resize(spec.frames);
  data.truth.cam_rel_organ.resize(spec.frames);
  for (int f = 0; f < spec.frames; ++f) {
    Vec3 pos, look;
    path.sample(warped[f], pos, look);
    Pose view = look_at_pose(pos, look);
    // Out-of-FoV excursions rotate the camera away and back.
    for (const auto& e : spec.events) {
      if (e.type != SimEvent::Type::out_of_fov || f < e.start_frame || f >= e.end_frame) {
        continue;
      }
      const double span = double(std::max(1, e.end_frame - e.start_frame));
      const double u = double(f - e.start_frame) / span;
      const double ramp = smoothstep(u / 0.25) * smoothstep((1.0 - u) / 0.25);
      const double yaw = ramp * e.yaw_deg * M_PI / 180.0;
      const Pose turn{Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vec3::UnitY())), Vec3::Zero()};
      view = turn.compose(view);
    }
    Pose organ = Pose::identity();
    if (!spec.organ_waypoints.empty()) {
      const double u = organ_u[f] * double(spec.organ_waypoints.size() - 1);
      const int seg = std::min(int(u), int(spec.organ_waypoints.size()) - 2);
      if (spec.organ_waypoints.size() == 1) {
        organ = spec.organ_waypoints[0];
      } else {
        organ = interpolate_pose(spec.organ_waypoints[size_t(seg)],
                                 spec.organ_waypoints[size_t(seg) + 1], u - seg);
      }
    }
    data.truth.cam_in_lab[f] = view;
    data.truth.organ_in_lab[f] = organ;
    data.truth.cam_rel_organ[f] = view.compose(organ);
  }

  // Markers: three well-spread frame-0-visible organ points.
  {
    const MeshBvh bvh(data.mesh);
    const Pose& p0 = data.truth.cam_rel_organ[0];
    std::vector<int> visible;
    for (int i = 0; i < int(data.truth.organ_points.size()); ++i) {
      const Vec3& p = data.truth.organ_points[i];
      const auto px = project_point(p0, spec.k, p);
      if (!px || !spec.k.in_bounds(*px)) continue;
      const Ray ray = ray_through_pixel(p0, spec.k, *px);
      const double dist = (p - ray.origin).norm();
      const auto hit = bvh.intersect(ray);
      if (hit && hit->t >= 0.999 * dist) visible.push_back(i);
    }
    if (int(visible.size()) < 3) {
      throw std::runtime_error("generate_scenario: fewer than 3 organ features visible at t=0");
    }
    data.truth.markers = {data.truth.organ_points[visible.front()],
                          data.truth.organ_points[visible[visible.size() / 2]],
                          data.truth.organ_points[visible.back()]};

    // Observation stream.
    const int n_organ = int(data.truth.organ_points.size());
    std::uniform_real_distribution<double> upx(0.0, double(spec.k.width) - 1e-6);
    std::uniform_real_distribution<double> upy(0.0, double(spec.k.height) - 1e-6);
    data.frames.resize(spec.frames);
    for (int f = 0; f < spec.frames; ++f) {
      FrameObservations& frame = data.frames[f];
      frame.frame_id = f;
      frame.timestamp = double(f) / spec.fps;
      frame.source = ObservationSource::simulator;
      const Pose& rel = data.truth.cam_rel_organ[f];
      const Pose& view = data.truth.cam_in_lab[f];
      const Pose organ_from_lab = data.truth.organ_in_lab[f].inverse();

      auto emit = [&](int64_t fid, const Vec2& true_px) {
        for (const auto& e : spec.events) {
          if (e.type == SimEvent::Type::occlusion && f >= e.start_frame && f < e.end_frame &&
              true_px.x() >= e.rect[0] && true_px.x() <= e.rect[2] && true_px.y() >= e.rect[1] &&
              true_px.y() <= e.rect[3]) {
            return;
          }
        }
        if (spec.noise.dropout > 0.0 && uni(rng) < spec.noise.dropout) return;
        Vec2 px = true_px;
        if (spec.noise.outlier > 0.0 && uni(rng) < spec.noise.outlier) {
          px = Vec2{upx(rng), upy(rng)};
        } else if (spec.noise.pixel_sigma > 0.0) {
          px.x() += spec.noise.pixel_sigma * gauss(rng);
          px.y() += spec.noise.pixel_sigma * gauss(rng);
        }
        if (!spec.k.in_bounds(px)) return;
        Observation obs;
        obs.frame_id = f;
        obs.pixel = px;
        obs.feature_id = fid;
        frame.observations.push_back(std::move(obs));
      };

      for (int i = 0; i < n_organ; ++i) {
        const Vec3& p = data.truth.organ_points[i];
        const auto px = project_point(rel, spec.k, p);
        if (!px || !spec.k.in_bounds(*px)) continue;
        const Ray ray = ray_through_pixel(rel, spec.k, *px);
        const double dist = (p - ray.origin).norm();
        const auto hit = bvh.intersect(ray);
        if (!hit || hit->t < 0.999 * dist) continue;  // self-occluded
        emit(i, *px);
      }
      for (int i = 0; i < int(data.truth.background_points.size()); ++i) {
        const Vec3& p_lab = data.truth.background_points[i];
        const auto px = project_point(view, spec.k, p_lab);
        if (!px || !spec.k.in_bounds(*px)) continue;
        // Occluded when the organ lies in front along this pixel.
        const Vec3 p_org = organ_from_lab.apply(p_lab);
        const Ray ray = ray_through_pixel(rel, spec.k, *px);
        const double dist = (p_org - ray.origin).norm();
        const auto hit = bvh.intersect(ray);
        if (hit && hit->t < 0.999 * dist) continue;
        emit(int64_t(n_organ) + i, *px);
      }
    }
  }

  data.t_init = data.truth.cam_rel_organ[0];
  data.k = spec.k;
  data.seed = spec.seed;

  // 20 exact frame-0 correspondences for registration tests.
  const Pose& p0 = data.truth.cam_rel_organ[0];
  for (const Observation& obs : data.frames.empty() ? std::vector<Observation>{}
                                                    : data.frames[0].observations) {
    if (int(data.correspondences.size()) >= 20) break;
    if (!obs.feature_id || *obs.feature_id >= data.truth.organ_feature_count) continue;
    const Vec3& p = data.truth.organ_points[size_t(*obs.feature_id)];
    const auto px = project_point(p0, spec.k, p);
    if (!px) continue;
    data.correspondences.push_back(
        Correspondence{p, *px, int(data.correspondences.size())});
  }
  return data;
}

// ---------------------------------------------------------------------------
// Synthetic rendering
// ---------------------------------------------------------------------------

namespace {

uint32_t hash32(uint32_t x) {
  x ^= x >> 16;
  x *= 0x7feb352du;
  x ^= x >> 15;
  x *= 0x846ca68bu;
  x ^= x >> 16;
  return x;
}

// Seeded value noise on a lattice, bilinear between cells.
double value_noise(double x, double y, uint32_t seed) {
  const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto lattice = [&](int xi, int yi) {
    return double(hash32(uint32_t(xi) * 73856093u ^ uint32_t(yi) * 19349663u ^ seed) & 0xFFu) /
           255.0;
  };
  const double v00 = lattice(x0, y0), v10 = lattice(x0 + 1, y0);
  const double v01 = lattice(x0, y0 + 1), v11 = lattice(x0 + 1, y0 + 1);
  const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
  return (1 - sy) * ((1 - sx) * v00 + sx * v10) + sy * ((1 - sx) * v01 + sx * v11);
}

}  // namespace

ImageRGB render_synthetic_image(const ScenarioData& data, int frame, const RenderOptions& opts) {
  const Intrinsics& k = data.k;
  if (frame < 0 || frame >= int(data.truth.cam_rel_organ.size())) {
    throw std::out_of_range("render_synthetic_image: frame out of range");
  }
  const Pose& rel = data.truth.cam_rel_organ[frame];
  const Pose& view = data.truth.cam_in_lab[frame];
  ImageRGB img(k.width, k.height);

  // Background: a procedural plane fixed in the lab frame behind the organ.
  const double plane_z = 350.0;
  if (opts.background_speckle) {
    const Pose lab_from_cam = view.inverse();
    for (int y = 0; y < k.height; ++y) {
      for (int x = 0; x < k.width; ++x) {
        const Vec3 dir_cam{(x + 0.5 - k.cx) / k.fx, (y + 0.5 - k.cy) / k.fy, 1.0};
        const Vec3 dir = lab_from_cam.rotate(dir_cam);
        const Vec3 origin = lab_from_cam.t;
        uint8_t value = 30;
        if (std::abs(dir.z()) > 1e-9) {
          const double t = (plane_z - origin.z()) / dir.z();
          if (t > 0.0) {
            const Vec3 hit = origin + t * dir;
            const double n = 0.6 * value_noise(hit.x() * 0.09, hit.y() * 0.09,
                                               uint32_t(data.seed) ^ 0xB6u) +
                             0.4 * value_noise(hit.x() * 0.017, hit.y() * 0.017,
                                               uint32_t(data.seed) ^ 0x5Au);
            value = uint8_t(40 + 120 * n);
          }
        }
        uint8_t* px = img.at(x, y);
        px[0] = px[1] = uint8_t(value * 0.9);
        px[2] = value;
      }
    }
  }

  // Organ: z-buffered rasterization with per-face albedo.
  const TriangleMesh& mesh = data.mesh;
  std::vector<float> zbuf(size_t(k.width) * k.height, std::numeric_limits<float>::max());
  std::vector<uint32_t> albedo(mesh.face_count());
  for (int f = 0; f < mesh.face_count(); ++f) {
    if (opts.constant_albedo) {
      albedo[f] = uint32_t(opts.albedo_value) * 0x010101u;
    } else {
      const uint32_t h = hash32(uint32_t(f) * 0x9E3779B9u ^ uint32_t(data.seed));
      const uint32_t r = 70 + (h & 0x7F);
      const uint32_t g = 40 + ((h >> 8) & 0x3F);
      const uint32_t b = 40 + ((h >> 16) & 0x3F);
      albedo[f] = (r << 16) | (g << 8) | b;  // reddish tissue-like palette
    }
  }
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Vec3 cam[3] = {rel.apply(mesh.v0(f)), rel.apply(mesh.v1(f)), rel.apply(mesh.v2(f))};
    Vec3 clipped[2][3];
    const int n = clip_triangle_near(cam, clipped);
    if (n == 0) continue;
    double shade = 1.0;
    if (opts.shading) {
      const Vec3 n_cam = rel.rotate(mesh.face_normals[f]);
      shade = 0.35 + 0.65 * std::max(0.0, -n_cam.z());
    }
    const uint32_t col = albedo[f];
    const double cr = ((col >> 16) & 0xFF) * shade;
    const double cg = ((col >> 8) & 0xFF) * shade;
    const double cb = (col & 0xFF) * shade;
    for (int i = 0; i < n; ++i) {
      const Vec3& a = clipped[i][0];
      const Vec3& b = clipped[i][1];
      const Vec3& c = clipped[i][2];
      const Vec2 pa{k.fx * a.x() / a.z() + k.cx, k.fy * a.y() / a.z() + k.cy};
      const Vec2 pb{k.fx * b.x() / b.z() + k.cx, k.fy * b.y() / b.z() + k.cy};
      const Vec2 pc{k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy};
      // Faces are tiny at this scale; the nearest vertex depth is enough for
      // hidden-surface removal.
      const float depth = float(std::min({a.z(), b.z(), c.z()}));
      rasterize_triangle(pa, pb, pc, k.width, k.height, [&](int x, int y) {
        float& z = zbuf[size_t(y) * k.width + x];
        if (depth >= z) return;
        z = depth;
        uint8_t* px = img.at(x, y);
        px[0] = uint8_t(std::clamp(cr, 0.0, 255.0));
        px[1] = uint8_t(std::clamp(cg, 0.0, 255.0));
        px[2] = uint8_t(std::clamp(cb, 0.0, 255.0));
      });
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Builtin scenarios
// ---------------------------------------------------------------------------

ScenarioSpec default_scenario(uint64_t seed) {
  ScenarioSpec spec;
  spec.seed = seed;
  spec.frames = 1000;
  // Gentle arc around the organ at ~0.15 m with mild depth change; the path
  // spans the default 1000-frame run at 30 fps.
  spec.camera_waypoints = {
      {{0.0, 0.0, -150.0}, {0.0, 0.0, 0.0}, 5.6},
      {{50.0, 20.0, -140.0}, {0.0, 0.0, 0.0}, 5.6},
      {{80.0, -20.0, -125.0}, {5.0, 0.0, 0.0}, 5.6},
      {{40.0, -40.0, -150.0}, {0.0, 5.0, 0.0}, 5.6},
      {{-30.0, 10.0, -160.0}, {0.0, 0.0, 0.0}, 5.6},
      {{-60.0, 30.0, -140.0}, {-5.0, 0.0, 0.0}, 5.6},
      {{0.0, 0.0, -150.0}, {0.0, 0.0, 0.0}, 5.6},
  };
  return spec;
}

ScenarioSpec organ_motion_scenario(uint64_t seed) {
  ScenarioSpec spec = default_scenario(seed);
  spec.frames = 420;
  spec.organ_features = 400;
  // A textured wall dominates the feature count, as an abdominal wall
  // dominates the image; it sits behind the organ and off to the side the
  // close-up turns away from, so the unmasked tracker eventually starves.
  spec.background_features = 1100;
  spec.background_min = Vec3{-300.0, -300.0, 140.0};
  spec.background_max = Vec3{-20.0, 300.0, 180.0};
  // The scope tracks the organ and closes in while it is manipulated; at
  // close range the organ fills the view and the background starves.
  spec.camera_waypoints = {
      {{0.0, 0.0, -150.0}, {0.0, 0.0, 0.0}, 2.0},
      {{10.0, 0.0, -150.0}, {0.0, 0.0, 0.0}, 2.5},
      {{50.0, 10.0, -130.0}, {40.0, 10.0, 20.0}, 3.0},
      {{100.0, 30.0, -55.0}, {95.0, 25.0, 42.0}, 3.5},
      {{105.0, 28.0, -38.0}, {100.0, 25.0, 45.0}, 3.0},
  };
  Pose organ_end;
  organ_end.q = quat_exp(Vec3{0.05, 0.12, 0.03});
  organ_end.t = Vec3{100.0, 25.0, 45.0};
  spec.organ_waypoints = {Pose::identity(), organ_end};
  SimEvent move;
  move.type = SimEvent::Type::organ_motion;
  move.start_frame = 140;
  move.end_frame = 400;
  spec.events = {move};
  return spec;
}

ScenarioSpec out_of_fov_scenario(uint64_t seed) {
  ScenarioSpec spec = default_scenario(seed);
  spec.frames = 420;
  SimEvent ev;
  ev.type = SimEvent::Type::out_of_fov;
  ev.start_frame = 150;
  ev.end_frame = 270;
  ev.yaw_deg = 85.0;
  spec.events = {ev};
  return spec;
}

ScenarioSpec occlusion_scenario(uint64_t seed) {
  ScenarioSpec spec = default_scenario(seed);
  spec.frames = 360;
  SimEvent ev;
  ev.type = SimEvent::Type::occlusion;
  ev.start_frame = 140;
  ev.end_frame = 200;
  ev.rect[0] = 0.0;
  ev.rect[1] = 0.0;
  ev.rect[2] = double(spec.k.width);
  ev.rect[3] = double(spec.k.height);
  spec.events = {ev};
  return spec;
}

ScenarioSpec fast_motion_scenario(uint64_t seed) {
  ScenarioSpec spec = default_scenario(seed);
  spec.frames = 420;
  SimEvent ev;
  ev.type = SimEvent::Type::fast_motion;
  ev.start_frame = 150;
  ev.end_frame = 210;
  ev.speed_factor = 4.0;
  spec.events = {ev};
  return spec;
}

ScenarioSpec static_opening_scenario(uint64_t seed) {
  ScenarioSpec spec = default_scenario(seed);
  spec.frames = 400;
  // Exactly zero camera translation for the first 3 s (the spline segment is
  // flanked by identical control points), then the default arc.
  std::vector<CameraWaypoint> wp = {
      {{0.0, 0.0, -150.0}, {0.0, 0.0, 0.0}, 3.0},
      {{0.0, 0.0, -150.0}, {0.0, 0.0, 0.0}, 1.0},
  };
  for (const auto& w : spec.camera_waypoints) wp.push_back(w);
  spec.camera_waypoints = std::move(wp);
  return spec;
}

ScenarioSpec scenario_by_name(const std::string& name, uint64_t seed) {
  if (name == "default") return default_scenario(seed);
  if (name == "organ_motion") return organ_motion_scenario(seed);
  if (name == "out_of_fov") return out_of_fov_scenario(seed);
  if (name == "occlusion") return occlusion_scenario(seed);
  if (name == "fast_motion") return fast_motion_scenario(seed);
  if (name == "static_opening") return static_opening_scenario(seed);
  throw std::invalid_argument("unknown scenario '" + name + "'");
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

void save_observation_log(const std::vector<FrameObservations>& frames, const Intrinsics& k,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for write");
  out.precision(17);
  out << "mbtrack-observations 1\n";
  out << "frames " << frames.size() << "\n";
  out << "intrinsics " << k.fx << " " << k.fy << " " << k.cx << " " << k.cy << " " << k.width
      << " " << k.height << "\n";
  for (const auto& frame : frames) {
    for (const auto& obs : frame.observations) {
      out << frame.frame_id << " " << obs.feature_id.value_or(-1) << " " << obs.pixel.x() << " "
          << obs.pixel.y() << "\n";
    }
  }
}

ObservationLog load_observation_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "mbtrack-observations") throw std::runtime_error(path + ": bad magic");
  std::string tag;
  size_t n_frames = 0;
  ObservationLog log;
  in >> tag >> n_frames;
  if (tag != "frames") throw std::runtime_error(path + ": missing frame count");
  in >> tag >> log.k.fx >> log.k.fy >> log.k.cx >> log.k.cy >> log.k.width >> log.k.height;
  if (tag != "intrinsics") throw std::runtime_error(path + ": missing intrinsics");
  log.frames.resize(n_frames);
  for (size_t f = 0; f < n_frames; ++f) {
    log.frames[f].frame_id = int(f);
    log.frames[f].source = ObservationSource::simulator;
  }
  int frame_id;
  int64_t feature_id;
  double u, v;
  while (in >> frame_id >> feature_id >> u >> v) {
    if (frame_id < 0 || size_t(frame_id) >= n_frames) {
      throw std::runtime_error(path + ": record references missing frame");
    }
    Observation obs;
    obs.frame_id = frame_id;
    obs.pixel = Vec2{u, v};
    if (feature_id >= 0) obs.feature_id = feature_id;
    log.frames[frame_id].observations.push_back(std::move(obs));
  }
  return log;
}

void save_ground_truth_csv(const GroundTruth& truth, const Intrinsics& k,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for write");
  out.precision(17);
  out << "frame_id,r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz,"
         "m0u,m0v,m1u,m1v,m2u,m2v\n";
  for (size_t f = 0; f < truth.cam_rel_organ.size(); ++f) {
    const auto m = truth.cam_rel_organ[f].to_row_major();
    out << f;
    for (int i = 0; i < 12; ++i) out << "," << m[i];
    for (const Vec3& marker : truth.markers) {
      const auto px = project_point(truth.cam_rel_organ[f], k, marker);
      if (px) {
        out << "," << px->x() << "," << px->y();
      } else {
        out << ",nan,nan";
      }
    }
    out << "\n";
  }
}

void save_pose_txt(const Pose& pose, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for write");
  out.precision(17);
  const auto m = pose.to_row_major();
  for (int i = 0; i < 12; ++i) out << m[i] << (i + 1 < 12 ? " " : "\n");
}

Pose load_pose_txt(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  Eigen::Matrix<double, 12, 1> m;
  for (int i = 0; i < 12; ++i) {
    if (!(in >> m[i])) throw std::runtime_error(path + ": expected 12 pose numbers");
  }
  return Pose::from_row_major(m);
}

}  // namespace mbtrack
