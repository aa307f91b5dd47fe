// Sparse map: map points, keyframes and the observation graph.
#pragma once

#include "mbtrack/features.hpp"
#include "mbtrack/geometry.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

namespace mbtrack {

struct MapPoint {
  enum class Origin { prior_depth, triangulated };

  int64_t id = 0;
  Vec3 position;
  // (keyframe id, index into that keyframe's observations)
  std::vector<std::pair<int, int>> observations;
  std::optional<Descriptor> descriptor;
  Origin origin = Origin::prior_depth;
  int64_t feature_id = -1;  // persistent track identity that created it
  int created_kf = 0;
};

struct Keyframe {
  int id = 0;
  Pose pose;
  FrameObservations frame;
  bool fixed = false;  // keyframe 1 stays at T_init forever
};

class SlamMap {
 public:
  std::map<int, Keyframe> keyframes;
  std::map<int64_t, MapPoint> points;

  int add_keyframe(const Pose& pose, const FrameObservations& frame, bool fixed);
  int64_t add_point(const Vec3& position, MapPoint::Origin origin, int64_t feature_id,
                    std::optional<Descriptor> descriptor);
  void add_observation(int64_t point_id, int keyframe_id, int obs_index);
  void remove_point(int64_t point_id);

  const MapPoint* point_of_feature(int64_t feature_id) const;
  MapPoint* point_of_feature(int64_t feature_id);

  // Keyframes sharing at least min_shared map points with kf_id, most-shared
  // first (ties by lower id).
  std::vector<std::pair<int, int>> covisible_keyframes(int kf_id, int min_shared) const;

  int64_t next_point_id() const { return next_point_id_; }

 private:
  int next_keyframe_id_ = 1;
  int64_t next_point_id_ = 1;
  std::unordered_map<int64_t, int64_t> feature_to_point_;
};

}  // namespace mbtrack
