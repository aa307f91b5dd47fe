#include "mbtrack/map.hpp"

#include <algorithm>
#include <stdexcept>

namespace mbtrack {

int SlamMap::add_keyframe(const Pose& pose, const FrameObservations& frame, bool fixed) {
  const int id = next_keyframe_id_++;
  keyframes.emplace(id, Keyframe{id, pose, frame, fixed});
  return id;
}

int64_t SlamMap::add_point(const Vec3& position, MapPoint::Origin origin, int64_t feature_id,
                           std::optional<Descriptor> descriptor) {
  const int64_t id = next_point_id_++;
  MapPoint mp;
  mp.id = id;
  mp.position = position;
  mp.origin = origin;
  mp.feature_id = feature_id;
  mp.descriptor = std::move(descriptor);
  points.emplace(id, std::move(mp));
  if (feature_id >= 0) feature_to_point_[feature_id] = id;
  return id;
}

void SlamMap::add_observation(int64_t point_id, int keyframe_id, int obs_index) {
  auto it = points.find(point_id);
  if (it == points.end()) throw std::logic_error("add_observation: unknown point");
  it->second.observations.emplace_back(keyframe_id, obs_index);
}

void SlamMap::remove_point(int64_t point_id) {
  auto it = points.find(point_id);
  if (it == points.end()) return;
  if (it->second.feature_id >= 0) feature_to_point_.erase(it->second.feature_id);
  points.erase(it);
}

const MapPoint* SlamMap::point_of_feature(int64_t feature_id) const {
  auto it = feature_to_point_.find(feature_id);
  if (it == feature_to_point_.end()) return nullptr;
  auto pit = points.find(it->second);
  return pit == points.end() ? nullptr : &pit->second;
}

MapPoint* SlamMap::point_of_feature(int64_t feature_id) {
  return const_cast<MapPoint*>(static_cast<const SlamMap*>(this)->point_of_feature(feature_id));
}

std::vector<std::pair<int, int>> SlamMap::covisible_keyframes(int kf_id, int min_shared) const {
  std::map<int, int> shared;  // keyframe id -> shared point count
  for (const auto& [pid, mp] : points) {
    bool seen_here = false;
    for (const auto& [kf, idx] : mp.observations) {
      if (kf == kf_id) {
        seen_here = true;
        break;
      }
    }
    if (!seen_here) continue;
    for (const auto& [kf, idx] : mp.observations) {
      if (kf != kf_id) ++shared[kf];
    }
  }
  std::vector<std::pair<int, int>> out;
  for (const auto& [kf, count] : shared) {
    if (count >= min_shared) out.emplace_back(kf, count);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

}  // namespace mbtrack
