#include "mbtrack/pipeline.hpp"

#include "mbtrack/registration.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

namespace mbtrack {

const char* to_string(TrackingState s) {
  switch (s) {
    case TrackingState::NotInitialized: return "not_initialized";
    case TrackingState::Tracking: return "tracking";
    case TrackingState::Lost: return "lost";
  }
  return "?";
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

// ---------------------------------------------------------------------------
// BA problem construction over the map
// ---------------------------------------------------------------------------

BaBinding build_ba_problem(const SlamMap& map, const std::vector<int>& optimizable_kfs,
                           const std::vector<int>& fixed_kfs, const Intrinsics& k,
                           bool with_shape, const SurfaceIndex* surface,
                           double free_parallax_deg) {
  BaBinding binding;
  BaProblem& p = binding.problem;
  p.k = k;
  p.surface = with_shape ? surface : nullptr;

  std::map<int, int> pose_of_kf;
  auto add_pose = [&](int kf_id, bool fixed) {
    const Keyframe& kf = map.keyframes.at(kf_id);
    pose_of_kf[kf_id] = int(p.poses.size());
    binding.kf_of_pose.push_back(kf_id);
    p.poses.push_back(kf.pose);
    p.pose_fixed.push_back(uint8_t(fixed || kf.fixed));
  };
  for (int kf : optimizable_kfs) add_pose(kf, false);
  for (int kf : fixed_kfs) {
    if (!pose_of_kf.count(kf)) add_pose(kf, true);
  }
  // Gauge: at least one pose must be held.
  bool any_fixed = false;
  for (uint8_t f : p.pose_fixed) any_fixed = any_fixed || f;
  if (!any_fixed && !p.poses.empty()) {
    int lowest = 0;
    for (size_t i = 1; i < binding.kf_of_pose.size(); ++i) {
      if (binding.kf_of_pose[i] < binding.kf_of_pose[lowest]) lowest = int(i);
    }
    p.pose_fixed[lowest] = 1;
  }

  std::set<int> optimizable_set(optimizable_kfs.begin(), optimizable_kfs.end());
  std::map<int64_t, int> slot_of_point;
  for (const auto& [pid, mp] : map.points) {
    bool touches = false;
    for (const auto& [kf, idx] : mp.observations) {
      if (optimizable_set.count(kf)) {
        touches = true;
        break;
      }
    }
    if (!touches) continue;
    const int slot = int(p.points.size());
    slot_of_point[pid] = slot;
    binding.id_of_point.push_back(pid);
    p.points.push_back(mp.position);
    int edge_count = 0;
    std::vector<int> observers;
    for (const auto& [kf, idx] : mp.observations) {
      auto it = pose_of_kf.find(kf);
      if (it == pose_of_kf.end()) continue;
      const Keyframe& keyframe = map.keyframes.at(kf);
      p.edges.push_back({it->second, slot, keyframe.frame.observations[idx].pixel});
      observers.push_back(kf);
      ++edge_count;
    }
    // A point is adjustable only once its observing rays span real parallax;
    // until then its creation depth (simulated depth or triangulation) is the
    // better estimate.
    const double cos_gate = std::cos(free_parallax_deg * M_PI / 180.0);
    bool has_parallax = false;
    for (size_t a = 0; a < observers.size() && !has_parallax; ++a) {
      const Vec3 da = (map.keyframes.at(observers[a]).pose.center() - mp.position).normalized();
      for (size_t b = a + 1; b < observers.size() && !has_parallax; ++b) {
        const Vec3 db = (map.keyframes.at(observers[b]).pose.center() - mp.position).normalized();
        has_parallax = da.dot(db) < cos_gate;
      }
    }
    const bool free_point = edge_count >= 2 && has_parallax;
    p.point_fixed.push_back(uint8_t(!free_point));
    if (with_shape && surface != nullptr && free_point) p.shape_points.push_back(slot);
  }
  return binding;
}

void write_back(const BaBinding& binding, SlamMap& map) {
  const BaProblem& p = binding.problem;
  for (size_t i = 0; i < binding.kf_of_pose.size(); ++i) {
    auto it = map.keyframes.find(binding.kf_of_pose[i]);
    if (it != map.keyframes.end() && !p.pose_fixed[i]) it->second.pose = p.poses[i];
  }
  for (size_t j = 0; j < binding.id_of_point.size(); ++j) {
    auto it = map.points.find(binding.id_of_point[j]);
    if (it != map.points.end() && !p.point_fixed[j]) it->second.position = p.points[j];
  }
}

BaResult local_bundle_adjust(SlamMap& map, int center_kf, int window, const Intrinsics& k,
                             const OptimizerConfig& config, bool with_shape,
                             const SurfaceIndex* surface, int min_shared,
                             double free_parallax_deg) {
  if (!map.keyframes.count(center_kf)) {
    throw std::invalid_argument("local_bundle_adjust: unknown center keyframe");
  }
  std::vector<int> optimizable{center_kf};
  for (const auto& [kf, shared] : map.covisible_keyframes(center_kf, min_shared)) {
    if (int(optimizable.size()) > window) break;
    optimizable.push_back(kf);
  }
  std::set<int> inside(optimizable.begin(), optimizable.end());
  std::set<int> outside;
  for (const auto& [pid, mp] : map.points) {
    bool in_window = false;
    for (const auto& [kf, idx] : mp.observations) {
      if (inside.count(kf)) {
        in_window = true;
        break;
      }
    }
    if (!in_window) continue;
    for (const auto& [kf, idx] : mp.observations) {
      if (!inside.count(kf)) outside.insert(kf);
    }
  }
  BaBinding binding =
      build_ba_problem(map, optimizable, std::vector<int>(outside.begin(), outside.end()), k,
                       with_shape, surface, free_parallax_deg);
  BaResult result = bundle_adjust(binding.problem, config);
  write_back(binding, map);
  return result;
}

BaResult run_global_ba(SlamMap& map, const Intrinsics& k, const OptimizerConfig& config,
                       bool with_shape, const SurfaceIndex* surface, double free_parallax_deg) {
  if (map.keyframes.size() < 2) {
    throw std::logic_error("run_global_ba: fewer than 2 keyframes");
  }
  std::vector<int> all;
  for (const auto& [id, kf] : map.keyframes) all.push_back(id);
  BaBinding binding = build_ba_problem(map, all, {}, k, with_shape, surface, free_parallax_deg);
  BaResult result = bundle_adjust(binding.problem, config);
  write_back(binding, map);
  return result;
}

// ---------------------------------------------------------------------------
// Tracker
// ---------------------------------------------------------------------------

Tracker::Tracker(TriangleMesh mesh, const Intrinsics& k, const PipelineConfig& config,
                 const Pose& t_init)
    : mesh_(std::move(mesh)), k_(k), cfg_(config), t_init_(t_init) {
  if (!k_.valid()) throw std::invalid_argument("Tracker: invalid intrinsics");
  if (mesh_.face_count() == 0) throw std::invalid_argument("Tracker: empty mesh");
  if (cfg_.surface_density > 0.0) {
    surface_ = std::make_unique<SurfaceIndex>(mesh_, cfg_.surface_density, cfg_.seed);
  } else {
    surface_ = std::make_unique<SurfaceIndex>(build_default_surface_index(mesh_, cfg_.seed));
  }
  bvh_ = std::make_unique<MeshBvh>(mesh_);
  eff_dilation_ =
      cfg_.dilation_px <= 0
          ? 0
          : std::max(1, int(std::lround(cfg_.dilation_px * double(k_.width) / 1280.0)));
  // Shape kernel default scales with the mesh (2% of the bbox diagonal).
  if (cfg_.opt.shape_kernel.kind == RobustKernel::Kind::huber &&
      cfg_.opt.shape_kernel.delta <= 0.0) {
    cfg_.opt.shape_kernel.delta = 0.02 * mesh_.bbox_diagonal();
  }
  if (!cfg_.deterministic) {
    worker_ = std::thread([this] { mapping_worker(); });
  }
}

Tracker::~Tracker() { finish(); }

void Tracker::finish() {
  if (worker_.joinable()) {
    {
      std::unique_lock<std::mutex> lock(queue_mutex_);
      queue_cv_.wait(lock, [this] { return kf_queue_.empty(); });
      stop_worker_ = true;
    }
    queue_cv_.notify_all();
    worker_.join();
  }
}

void Tracker::mapping_worker() {
  for (;;) {
    std::pair<int, std::optional<ImageRGB>> job;
    {
      std::unique_lock<std::mutex> lock(queue_mutex_);
      queue_cv_.wait(lock, [this] { return stop_worker_ || !kf_queue_.empty(); });
      if (kf_queue_.empty()) {
        if (stop_worker_) return;
        continue;
      }
      job = std::move(kf_queue_.front());
      kf_queue_.pop_front();
    }
    mapping_task(job.first, std::move(job.second));
    queue_cv_.notify_all();
  }
}

void Tracker::set_state(int frame_id, TrackingState next) {
  if (next == state_) return;
  transitions_.push_back({frame_id, state_, next});
  state_ = next;
  if (next == TrackingState::Lost) {
    // Track chains are no longer trustworthy.
    active_tracks_.clear();
    prev_gray_.reset();
    have_velocity_ = false;
  }
}

BinaryMask Tracker::current_mask(int) const {
  if (!cfg_.enable_mask) return BinaryMask(k_.width, k_.height, true);
  return render_mask(mesh_, prev_pose_, k_, eff_dilation_);
}

FrameObservations Tracker::acquire_observations(const FrameInput& input, const BinaryMask& mask,
                                                bool lost) {
  if (input.obs.source == ObservationSource::simulator || !input.obs.observations.empty()) {
    return filter_by_mask(input.obs, mask);
  }

  // Image mode: pyramidal tracking of carried features + replenishment.
  const ImageGray* gray = nullptr;
  ImageGray converted;
  if (input.gray) {
    gray = &*input.gray;
  } else if (input.rgb) {
    converted = to_gray(*input.rgb);
    gray = &converted;
  } else {
    return FrameObservations{input.obs.frame_id, input.obs.timestamp, {},
                             ObservationSource::detector};
  }

  FrameObservations out;
  out.frame_id = input.obs.frame_id;
  out.timestamp = input.obs.timestamp;
  out.source = ObservationSource::detector;

  std::vector<TrackEntry> next_tracks;
  if (prev_gray_ && !active_tracks_.empty() && !lost) {
    std::vector<Vec2> prev_px(active_tracks_.size());
    for (size_t i = 0; i < active_tracks_.size(); ++i) prev_px[i] = active_tracks_[i].pixel;
    const auto tracked = track_features(*prev_gray_, *gray, prev_px, cfg_.track);
    for (size_t i = 0; i < tracked.size(); ++i) {
      if (tracked[i] && mask.covers(*tracked[i])) {
        next_tracks.push_back({active_tracks_[i].id, *tracked[i]});
      }
    }
  }

  // Occupancy grid keeps replenished corners away from live tracks.
  const int cell = 8;
  const int gw = (k_.width + cell - 1) / cell;
  const int gh = (k_.height + cell - 1) / cell;
  std::vector<uint8_t> occupied(size_t(gw) * gh, 0);
  auto mark = [&](const Vec2& px) {
    const int gx = std::clamp(int(px.x()) / cell, 0, gw - 1);
    const int gy = std::clamp(int(px.y()) / cell, 0, gh - 1);
    occupied[size_t(gy) * gw + gx] = 1;
  };
  auto is_free = [&](const Vec2& px) {
    const int gx = std::clamp(int(px.x()) / cell, 0, gw - 1);
    const int gy = std::clamp(int(px.y()) / cell, 0, gh - 1);
    return occupied[size_t(gy) * gw + gx] == 0;
  };
  for (const TrackEntry& t : next_tracks) mark(t.pixel);

  if (int(next_tracks.size()) < cfg_.corner_budget) {
    const auto corners = detect_corners_grid(*gray, cfg_.corner_budget, cfg_.fast_threshold);
    for (const Corner& c : corners) {
      if (int(next_tracks.size()) >= cfg_.corner_budget) break;
      if (!mask.covers(c.pixel) || !is_free(c.pixel)) continue;
      next_tracks.push_back({next_track_id_++, c.pixel});
      mark(c.pixel);
    }
  }

  for (const TrackEntry& t : next_tracks) {
    Observation obs;
    obs.frame_id = out.frame_id;
    obs.pixel = t.pixel;
    obs.feature_id = t.id;
    obs.descriptor = compute_descriptor(*gray, t.pixel);
    out.observations.push_back(std::move(obs));
  }
  active_tracks_ = std::move(next_tracks);
  prev_gray_ = *gray;
  return out;
}

FrameResult Tracker::initialize_prior(const FrameInput& frame0) {
  const auto t0 = Clock::now();
  FrameResult result;
  result.frame_id = frame0.obs.frame_id;

  prev_pose_ = t_init_;
  const auto t_mask = Clock::now();
  BinaryMask mask = cfg_.enable_mask ? render_mask(mesh_, t_init_, k_, eff_dilation_)
                                     : BinaryMask(k_.width, k_.height, true);
  result.timing.mask_ms = ms_since(t_mask);
  result.mask_coverage = mask.coverage();

  const auto t_feat = Clock::now();
  FrameObservations obs = acquire_observations(frame0, mask, false);
  result.timing.features_ms = ms_since(t_feat);

  // Back-project masked features through the mesh ("simulated depth").
  struct DepthHit {
    int obs_index;
    Vec3 world;
  };
  std::vector<DepthHit> hits;
  for (int i = 0; i < int(obs.observations.size()); ++i) {
    const Vec2& px = obs.observations[i].pixel;
    if (!k_.in_bounds(px)) continue;
    const Ray ray = ray_through_pixel(t_init_, k_, px);
    if (const auto hit = bvh_->intersect(ray)) {
      hits.push_back({i, ray.at(hit->t)});
    }
  }
  if (int(hits.size()) < cfg_.min_init_depth_points) {
    last_error_ = "InsufficientDepthPoints: " + std::to_string(hits.size()) + " < " +
                  std::to_string(cfg_.min_init_depth_points);
    result.state = TrackingState::NotInitialized;
    result.timing.total_ms = ms_since(t0);
    return result;
  }

  std::unique_lock<std::shared_mutex> lock(map_mutex_);
  const int kf_id = map_.add_keyframe(t_init_, obs, true);
  auto& index = kf_feature_index_[kf_id];
  for (const DepthHit& hit : hits) {
    const Observation& o = obs.observations[hit.obs_index];
    const int64_t fid = o.feature_id.value_or(-1);
    const int64_t pid = map_.add_point(hit.world, MapPoint::Origin::prior_depth, fid, o.descriptor);
    map_.points.at(pid).created_kf = kf_id;
    map_.add_observation(pid, kf_id, hit.obs_index);
  }
  for (int i = 0; i < int(obs.observations.size()); ++i) {
    if (obs.observations[i].feature_id) index[*obs.observations[i].feature_id] = i;
  }
  recent_kfs_.push_back(kf_id);
  ref_kf_id_ = kf_id;
  frames_since_kf_ = 0;
  lock.unlock();

  set_state(result.frame_id, TrackingState::Tracking);
  result.state = TrackingState::Tracking;
  result.pose = t_init_;
  result.inlier_count = int(hits.size());
  result.timing.total_ms = ms_since(t0);
  return result;
}

FrameResult Tracker::process_frame(const FrameInput& input) {
  StageTimings timing;
  const auto t0 = Clock::now();
  FrameResult result;
  switch (state_) {
    case TrackingState::NotInitialized:
      result = cfg_.enable_prior_init ? initialize_prior(input) : try_two_view_init(input);
      break;
    case TrackingState::Tracking:
      result = track_frame(input, timing);
      break;
    case TrackingState::Lost:
      result = relocalize(input, timing);
      break;
  }
  result.timing.total_ms = ms_since(t0);
  return result;
}

FrameResult Tracker::track_frame(const FrameInput& input, StageTimings& timing) {
  FrameResult result;
  result.frame_id = input.obs.frame_id;

  const auto t_mask = Clock::now();
  const BinaryMask mask = current_mask(result.frame_id);
  timing.mask_ms = ms_since(t_mask);
  result.mask_coverage = mask.coverage();

  const auto t_feat = Clock::now();
  FrameObservations obs = acquire_observations(input, mask, false);

  // Associate to map points by persistent feature identity.
  std::vector<MatchedPoint> matches;
  {
    std::shared_lock<std::shared_mutex> lock(map_mutex_);
    for (int i = 0; i < int(obs.observations.size()); ++i) {
      const auto& o = obs.observations[i];
      if (!o.feature_id) continue;
      if (const MapPoint* mp = map_.point_of_feature(*o.feature_id)) {
        matches.push_back({mp->id, mp->position, o.pixel, i});
      }
    }
  }
  timing.features_ms = ms_since(t_feat);

  if (int(matches.size()) < 6) {
    set_state(result.frame_id, TrackingState::Lost);
    result.state = TrackingState::Lost;
    result.timing = timing;
    return result;
  }

  const auto t_opt = Clock::now();
  std::vector<PoseObservation> pose_obs(matches.size());
  for (size_t i = 0; i < matches.size(); ++i) {
    pose_obs[i] = PoseObservation{matches[i].position, matches[i].pixel};
  }
  const Pose seed = have_velocity_ ? velocity_.compose(prev_pose_) : prev_pose_;
  const PoseResult opt = optimize_pose(pose_obs, k_, seed, cfg_.opt);
  timing.optimize_ms = ms_since(t_opt);

  if (opt.inlier_count < cfg_.min_inliers) {
    set_state(result.frame_id, TrackingState::Lost);
    result.state = TrackingState::Lost;
    result.inlier_count = opt.inlier_count;
    result.timing = timing;
    return result;
  }

  velocity_ = opt.pose.compose(prev_pose_.inverse());
  have_velocity_ = true;
  prev_pose_ = opt.pose;
  result.state = TrackingState::Tracking;
  result.pose = opt.pose;
  result.inlier_count = opt.inlier_count;

  // Keyframe policy: weak overlap with the reference keyframe or a frame cap.
  const auto t_map = Clock::now();
  ++frames_since_kf_;
  int ref_count = 0;
  {
    std::shared_lock<std::shared_mutex> lock(map_mutex_);
    for (const auto& [pid, mp] : map_.points) {
      for (const auto& [kf, idx] : mp.observations) {
        if (kf == ref_kf_id_) {
          ++ref_count;
          break;
        }
      }
    }
  }
  const double ratio = ref_count > 0 ? double(opt.inlier_count) / double(ref_count) : 0.0;
  if (ratio < cfg_.kf_inlier_ratio || frames_since_kf_ >= cfg_.kf_max_interval) {
    insert_keyframe(input, obs, opt.pose, matches, opt.inliers);
  }
  timing.mapping_ms = ms_since(t_map);
  result.timing = timing;
  return result;
}

void Tracker::insert_keyframe(const FrameInput& input, const FrameObservations& obs,
                              const Pose& pose, const std::vector<MatchedPoint>& matches,
                              const std::vector<uint8_t>& inliers) {
  std::optional<ImageRGB> texture_image;
  if (cfg_.texture_keyframes && input.rgb) texture_image = *input.rgb;

  {
    std::unique_lock<std::shared_mutex> lock(map_mutex_);
    const int kf_id = map_.add_keyframe(pose, obs, false);
    auto& index = kf_feature_index_[kf_id];
    for (int i = 0; i < int(obs.observations.size()); ++i) {
      if (obs.observations[i].feature_id) index[*obs.observations[i].feature_id] = i;
    }
    std::set<int64_t> matched_features;
    for (size_t m = 0; m < matches.size(); ++m) {
      if (!inliers[m]) continue;
      auto it = map_.points.find(matches[m].point_id);
      if (it == map_.points.end()) continue;
      map_.add_observation(matches[m].point_id, kf_id, matches[m].obs_index);
      const auto& o = obs.observations[matches[m].obs_index];
      if (o.descriptor) it->second.descriptor = o.descriptor;
      if (o.feature_id) matched_features.insert(*o.feature_id);
    }

    // Triangulate new in-mask features against recent keyframes.
    for (int i = 0; i < int(obs.observations.size()); ++i) {
      const auto& o = obs.observations[i];
      if (!o.feature_id || matched_features.count(*o.feature_id)) continue;
      if (map_.point_of_feature(*o.feature_id)) continue;
      for (auto rit = recent_kfs_.rbegin(); rit != recent_kfs_.rend(); ++rit) {
        const int other_kf = *rit;
        if (other_kf == kf_id) continue;
        auto idx_it = kf_feature_index_.find(other_kf);
        if (idx_it == kf_feature_index_.end()) continue;
        auto fit = idx_it->second.find(*o.feature_id);
        if (fit == idx_it->second.end()) continue;
        const Keyframe& other = map_.keyframes.at(other_kf);
        const Vec2& px_other = other.frame.observations[fit->second].pixel;
        // Older keyframes carry more baseline; keep looking until one works.
        const auto tri = triangulate(other.pose, pose, px_other, o.pixel, k_,
                                     cfg_.min_parallax_deg);
        if (!tri) continue;
        const Vec2 r0 = reprojection_residual(other.pose, k_, tri->point, px_other);
        const Vec2 r1 = reprojection_residual(pose, k_, tri->point, o.pixel);
        if (r0.norm() > cfg_.triangulation_reproj_px || r1.norm() > cfg_.triangulation_reproj_px) {
          continue;
        }
        const int64_t pid =
            map_.add_point(tri->point, MapPoint::Origin::triangulated, *o.feature_id, o.descriptor);
        map_.points.at(pid).created_kf = kf_id;
        map_.add_observation(pid, other_kf, fit->second);
        map_.add_observation(pid, kf_id, i);
        break;
      }
    }

    recent_kfs_.push_back(kf_id);
    if (recent_kfs_.size() > 10) recent_kfs_.erase(recent_kfs_.begin());
    ref_kf_id_ = kf_id;
    frames_since_kf_ = 0;

    if (cfg_.deterministic) {
      lock.unlock();
      mapping_task(kf_id, std::move(texture_image));
      return;
    }
    // Parallel mode: hand the keyframe to the mapping worker.
    const int enqueue_id = kf_id;
    lock.unlock();
    std::unique_lock<std::mutex> qlock(queue_mutex_);
    queue_cv_.wait(qlock, [this] { return kf_queue_.size() < kQueueCapacity; });
    kf_queue_.emplace_back(enqueue_id, std::move(texture_image));
    qlock.unlock();
    queue_cv_.notify_all();
  }
}

void Tracker::mapping_task(int kf_id, std::optional<ImageRGB> image) {
  const bool with_shape = cfg_.enable_shape_prior && cfg_.opt.w_shape > 0.0;

  BaBinding binding;
  {
    std::shared_lock<std::shared_mutex> lock(map_mutex_);
    if (map_.keyframes.size() >= 2) {
      std::vector<int> optimizable{kf_id};
      for (const auto& [kf, shared] : map_.covisible_keyframes(kf_id, cfg_.covis_min_shared)) {
        if (int(optimizable.size()) > cfg_.local_ba_window) break;
        optimizable.push_back(kf);
      }
      std::set<int> inside(optimizable.begin(), optimizable.end());
      std::set<int> outside;
      for (const auto& [pid, mp] : map_.points) {
        bool in_window = false;
        for (const auto& [kf, idx] : mp.observations) {
          if (inside.count(kf)) {
            in_window = true;
            break;
          }
        }
        if (!in_window) continue;
        for (const auto& [kf, idx] : mp.observations) {
          if (!inside.count(kf)) outside.insert(kf);
        }
      }
      binding = build_ba_problem(map_, optimizable,
                                 std::vector<int>(outside.begin(), outside.end()), k_, with_shape,
                                 surface_.get(), cfg_.min_parallax_deg);
    }
  }
  if (!binding.problem.poses.empty()) {
    bundle_adjust(binding.problem, cfg_.opt);
    std::unique_lock<std::shared_mutex> lock(map_mutex_);
    write_back(binding, map_);
  }

  {
    std::unique_lock<std::shared_mutex> lock(map_mutex_);
    cull_recent_points();
  }

  if (image) {
    Pose kf_pose;
    {
      std::shared_lock<std::shared_mutex> lock(map_mutex_);
      kf_pose = map_.keyframes.at(kf_id).pose;
    }
    std::lock_guard<std::mutex> mesh_lock(mesh_mutex_);
    texture_update(mesh_, kf_pose, *image, k_);
  }
}

void Tracker::cull_recent_points() {
  if (recent_kfs_.size() < 3) return;
  std::vector<int> last3(recent_kfs_.end() - 3, recent_kfs_.end());
  const int newest = last3.back();
  const int grace_kf = last3.front();

  std::vector<int64_t> to_remove;
  for (const auto& [pid, mp] : map_.points) {
    if (mp.origin != MapPoint::Origin::triangulated) continue;
    if (mp.created_kf > grace_kf) continue;  // still inside the observation window
    int should = 0, seen = 0;
    for (int kf_id : last3) {
      const Keyframe& kf = map_.keyframes.at(kf_id);
      const Vec3 pc = kf.pose.apply(mp.position);
      if (pc.z() <= kMinDepth) continue;
      const auto px = project_point(kf.pose, k_, mp.position);
      if (!px || !k_.in_bounds(*px)) continue;
      // Occlusion-aware expectation: the mesh must not block the view.
      const Ray ray = ray_through_pixel(kf.pose, k_, *px);
      const double dist = (mp.position - ray.origin).norm();
      const auto hit = bvh_->intersect(ray);
      if (hit && hit->t < 0.999 * dist) continue;
      ++should;
      for (const auto& [okf, idx] : mp.observations) {
        if (okf == kf_id) {
          ++seen;
          break;
        }
      }
    }
    (void)newest;
    if (should >= 2 && seen < 2) to_remove.push_back(pid);
  }
  for (int64_t pid : to_remove) map_.remove_point(pid);
}

FrameResult Tracker::relocalize(const FrameInput& input, StageTimings& timing) {
  FrameResult result;
  result.frame_id = input.obs.frame_id;
  result.state = TrackingState::Lost;

  const auto t_feat = Clock::now();
  const BinaryMask full(k_.width, k_.height, true);
  FrameObservations obs = acquire_observations(input, full, true);

  // Global matching: persistent ids when available, else descriptors.
  std::vector<Correspondence> corrs;
  std::vector<int> obs_of_corr;
  {
    std::shared_lock<std::shared_mutex> lock(map_mutex_);
    for (int i = 0; i < int(obs.observations.size()); ++i) {
      const auto& o = obs.observations[i];
      const MapPoint* mp = nullptr;
      if (o.feature_id) mp = map_.point_of_feature(*o.feature_id);
      if (!mp && o.descriptor) {
        int best = 256, second = 256;
        const MapPoint* best_mp = nullptr;
        for (const auto& [pid, cand] : map_.points) {
          if (!cand.descriptor) continue;
          const int d = hamming_distance(*o.descriptor, *cand.descriptor);
          if (d < best) {
            second = best;
            best = d;
            best_mp = &cand;
          } else if (d < second) {
            second = d;
          }
        }
        if (best_mp && best <= cfg_.reloc_descriptor_gate && double(best) < 0.9 * double(second)) {
          mp = best_mp;
        }
      }
      if (mp) {
        corrs.push_back(Correspondence{mp->position, o.pixel, int(corrs.size())});
        obs_of_corr.push_back(i);
      }
    }
  }
  timing.features_ms = ms_since(t_feat);

  if (int(corrs.size()) < cfg_.reloc_min_matches) {
    result.timing = timing;
    return result;
  }

  const auto t_opt = Clock::now();
  RegistrationConfig reg;
  reg.kernel = cfg_.opt.reprojection_kernel;
  reg.extra_seeds.push_back(prev_pose_);
  const RegistrationResult solved = solve_initial_registration(corrs, k_, reg);
  // Motion-only polish with outlier rejection sharpens the candidate.
  std::vector<PoseObservation> pose_obs;
  pose_obs.reserve(corrs.size());
  for (const auto& c : corrs) pose_obs.push_back({c.point3, c.pixel});
  Pose candidate = solved.pose;
  if (pose_obs.size() >= 6) {
    candidate = optimize_pose(pose_obs, k_, candidate, cfg_.opt).pose;
  }
  int inliers = 0;
  for (const auto& c : corrs) {
    if (reprojection_residual(candidate, k_, c.point3, c.pixel).norm() <= cfg_.reloc_px_gate) {
      ++inliers;
    }
  }
  timing.optimize_ms = ms_since(t_opt);

  if (inliers < cfg_.reloc_min_inliers) {
    result.timing = timing;
    return result;
  }

  prev_pose_ = candidate;
  have_velocity_ = false;
  set_state(result.frame_id, TrackingState::Tracking);
  result.state = TrackingState::Tracking;
  result.pose = candidate;
  result.inlier_count = inliers;
  result.timing = timing;
  return result;
}

BaResult Tracker::global_ba() {
  std::unique_lock<std::shared_mutex> lock(map_mutex_);
  const bool with_shape = cfg_.enable_shape_prior && cfg_.opt.w_shape > 0.0;
  return run_global_ba(map_, k_, cfg_.opt, with_shape, surface_.get(), cfg_.min_parallax_deg);
}

// ---------------------------------------------------------------------------
// Two-view initialization (the monocular baseline the prior replaces)
// ---------------------------------------------------------------------------

namespace {

struct NormalizedPair {
  Vec3 x0;  // homogeneous normalized image points
  Vec3 x1;
  int obs0;
  int obs1;
};

Mat3 essential_from_pairs(const std::vector<NormalizedPair>& pairs,
                          const std::vector<int>& subset) {
  Eigen::MatrixXd a(subset.size(), 9);
  for (size_t r = 0; r < subset.size(); ++r) {
    const auto& p = pairs[subset[r]];
    a.row(r) << p.x1.x() * p.x0.x(), p.x1.x() * p.x0.y(), p.x1.x(), p.x1.y() * p.x0.x(),
        p.x1.y() * p.x0.y(), p.x1.y(), p.x0.x(), p.x0.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd e = svd.matrixV().col(8);
  Mat3 em;
  em << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  // Project onto the essential manifold.
  Eigen::JacobiSVD<Mat3> esvd(em, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = esvd.singularValues();
  const double mean = 0.5 * (s(0) + s(1));
  return esvd.matrixU() * Eigen::DiagonalMatrix<double, 3>(mean, mean, 0.0) *
         esvd.matrixV().transpose();
}

double sampson_error(const Mat3& e, const Vec3& x0, const Vec3& x1) {
  const Vec3 ex0 = e * x0;
  const Vec3 etx1 = e.transpose() * x1;
  const double num = x1.dot(ex0);
  const double den = ex0.head<2>().squaredNorm() + etx1.head<2>().squaredNorm();
  return den > 0.0 ? num * num / den : std::numeric_limits<double>::max();
}

// Midpoint-style DLT triangulation from normalized cameras (I|0) and (R|t).
Vec3 triangulate_normalized(const Mat3& r, const Vec3& t, const Vec3& x0, const Vec3& x1) {
  Eigen::Matrix<double, 3, 4> p0 = Eigen::Matrix<double, 3, 4>::Zero();
  p0.leftCols<3>() = Mat3::Identity();
  Eigen::Matrix<double, 3, 4> p1;
  p1.leftCols<3>() = r;
  p1.col(3) = t;
  Eigen::Matrix4d a;
  a.row(0) = x0.x() * p0.row(2) - p0.row(0);
  a.row(1) = x0.y() * p0.row(2) - p0.row(1);
  a.row(2) = x1.x() * p1.row(2) - p1.row(0);
  a.row(3) = x1.y() * p1.row(2) - p1.row(1);
  Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  return h.head<3>() / h(3);
}

}  // namespace

FrameResult Tracker::try_two_view_init(const FrameInput& input) {
  FrameResult result;
  result.frame_id = input.obs.frame_id;
  result.state = TrackingState::NotInitialized;

  const BinaryMask full(k_.width, k_.height, true);
  FrameObservations obs = acquire_observations(input, full, false);
  if (!init_frame0_) {
    init_frame0_ = obs;
    last_error_ = "TwoViewInit: waiting for a second view";
    return result;
  }

  std::unordered_map<int64_t, int> first;
  for (int i = 0; i < int(init_frame0_->observations.size()); ++i) {
    if (init_frame0_->observations[i].feature_id) {
      first[*init_frame0_->observations[i].feature_id] = i;
    }
  }
  std::vector<NormalizedPair> pairs;
  for (int i = 0; i < int(obs.observations.size()); ++i) {
    const auto& o = obs.observations[i];
    if (!o.feature_id) continue;
    auto it = first.find(*o.feature_id);
    if (it == first.end()) continue;
    const Vec2& p0 = init_frame0_->observations[it->second].pixel;
    NormalizedPair pair;
    pair.x0 = Vec3{(p0.x() - k_.cx) / k_.fx, (p0.y() - k_.cy) / k_.fy, 1.0};
    pair.x1 = Vec3{(o.pixel.x() - k_.cx) / k_.fx, (o.pixel.y() - k_.cy) / k_.fy, 1.0};
    pair.obs0 = it->second;
    pair.obs1 = i;
    pairs.push_back(pair);
  }
  if (int(pairs.size()) < cfg_.two_view_min_matches) {
    last_error_ = "TwoViewInit: too few matches (" + std::to_string(pairs.size()) + ")";
    return result;
  }

  // MSAC over 8-point samples; errors in normalized units.
  const double f_mean = 0.5 * (k_.fx + k_.fy);
  const double thresh = 2.0 / f_mean;
  const double thresh2 = thresh * thresh;
  std::mt19937_64 rng(cfg_.seed ^ 0x7775ee);
  std::uniform_int_distribution<int> pick(0, int(pairs.size()) - 1);
  Mat3 best_e = Mat3::Zero();
  double best_score = std::numeric_limits<double>::max();
  for (int iter = 0; iter < 60; ++iter) {
    std::set<int> subset_set;
    while (subset_set.size() < 8) subset_set.insert(pick(rng));
    const std::vector<int> subset(subset_set.begin(), subset_set.end());
    const Mat3 e = essential_from_pairs(pairs, subset);
    double score = 0.0;
    for (const auto& p : pairs) score += std::min(sampson_error(e, p.x0, p.x1), thresh2);
    if (score < best_score) {
      best_score = score;
      best_e = e;
    }
  }
  std::vector<int> inlier_idx;
  for (int i = 0; i < int(pairs.size()); ++i) {
    if (sampson_error(best_e, pairs[i].x0, pairs[i].x1) < thresh2) inlier_idx.push_back(i);
  }
  if (int(inlier_idx.size()) >= 8) best_e = essential_from_pairs(pairs, inlier_idx);

  // Decompose and pick the candidate with the best cheirality support.
  Eigen::JacobiSVD<Mat3> svd(best_e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0.0) u.col(2) *= -1.0;
  if (v.determinant() < 0.0) v.col(2) *= -1.0;
  Mat3 w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Mat3 rots[2] = {u * w * v.transpose(), u * w.transpose() * v.transpose()};
  const Vec3 ts[2] = {u.col(2), -u.col(2)};

  int best_support = -1;
  Mat3 r_rel;
  Vec3 t_rel;
  std::vector<Vec3> best_points;
  std::vector<int> best_pairs;
  for (const Mat3& r : rots) {
    for (const Vec3& t : ts) {
      int support = 0;
      std::vector<Vec3> pts;
      std::vector<int> kept;
      std::vector<double> parallaxes;
      for (int idx : inlier_idx) {
        const auto& p = pairs[idx];
        const Vec3 x = triangulate_normalized(r, t, p.x0, p.x1);
        const double z0 = x.z();
        const double z1 = (r * x + t).z();
        if (z0 <= 0.0 || z1 <= 0.0) continue;
        const Vec3 ray0 = x.normalized();
        const Vec3 ray1 = (x - (-r.transpose() * t)).normalized();
        const double par =
            std::acos(std::clamp(ray0.dot(ray1), -1.0, 1.0)) * 180.0 / M_PI;
        parallaxes.push_back(par);
        ++support;
        pts.push_back(x);
        kept.push_back(idx);
      }
      if (support > best_support) {
        best_support = support;
        r_rel = r;
        t_rel = t;
        best_points = std::move(pts);
        best_pairs = std::move(kept);
      }
    }
  }

  if (best_support < cfg_.two_view_min_matches / 2) {
    last_error_ = "TwoViewInit: cheirality support too low";
    return result;
  }
  std::vector<double> parallax(best_points.size());
  std::vector<double> depths(best_points.size());
  const Vec3 c1 = -r_rel.transpose() * t_rel;
  for (size_t i = 0; i < best_points.size(); ++i) {
    const Vec3& x = best_points[i];
    parallax[i] =
        std::acos(std::clamp(x.normalized().dot((x - c1).normalized()), -1.0, 1.0)) * 180.0 / M_PI;
    depths[i] = x.z();
  }
  auto median_of = [](std::vector<double> vals) {
    std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
    return vals[vals.size() / 2];
  };
  if (median_of(parallax) < cfg_.two_view_min_parallax_deg) {
    last_error_ = "TwoViewInit: insufficient parallax";
    return result;
  }

  // Monocular scale is unobservable; normalize the median depth to 1.
  const double scale = 1.0 / median_of(depths);
  for (Vec3& x : best_points) x *= scale;
  const Vec3 t_scaled = scale * t_rel;

  std::unique_lock<std::shared_mutex> lock(map_mutex_);
  const int kf1 = map_.add_keyframe(t_init_, *init_frame0_, true);
  const Pose pose2 = Pose(r_rel, t_scaled).compose(t_init_);
  const int kf2 = map_.add_keyframe(pose2, obs, false);
  auto& index1 = kf_feature_index_[kf1];
  for (int i = 0; i < int(init_frame0_->observations.size()); ++i) {
    if (init_frame0_->observations[i].feature_id) {
      index1[*init_frame0_->observations[i].feature_id] = i;
    }
  }
  auto& index2 = kf_feature_index_[kf2];
  for (int i = 0; i < int(obs.observations.size()); ++i) {
    if (obs.observations[i].feature_id) index2[*obs.observations[i].feature_id] = i;
  }
  const Pose world_from_cam0 = t_init_.inverse();
  for (size_t i = 0; i < best_points.size(); ++i) {
    const auto& p = pairs[best_pairs[i]];
    const auto& o = obs.observations[p.obs1];
    const int64_t pid = map_.add_point(world_from_cam0.apply(best_points[i]),
                                       MapPoint::Origin::triangulated,
                                       o.feature_id.value_or(-1), o.descriptor);
    map_.points.at(pid).created_kf = kf2;
    map_.add_observation(pid, kf1, p.obs0);
    map_.add_observation(pid, kf2, p.obs1);
  }
  recent_kfs_ = {kf1, kf2};
  ref_kf_id_ = kf2;
  frames_since_kf_ = 0;
  lock.unlock();

  prev_pose_ = pose2;
  set_state(result.frame_id, TrackingState::Tracking);
  result.state = TrackingState::Tracking;
  result.pose = pose2;
  result.inlier_count = int(best_points.size());
  return result;
}

}  // namespace mbtrack
