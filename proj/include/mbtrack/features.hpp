// Corner detection (FAST-9 segment test), pyramidal patch tracking, BRIEF-like
// patch descriptors and mask filtering of per-frame observations.
#pragma once

#include "mbtrack/geometry.hpp"
#include "mbtrack/image.hpp"
#include "mbtrack/raster.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace mbtrack {

using Descriptor = std::array<uint8_t, 32>;  // 256 bits

int hamming_distance(const Descriptor& a, const Descriptor& b);

/// One 2D feature measurement.
struct Observation {
  int frame_id = 0;
  Vec2 pixel;
  std::optional<int64_t> feature_id;  // persistent track identity
  std::optional<Descriptor> descriptor;
};

enum class ObservationSource { detector, simulator };

struct FrameObservations {
  int frame_id = 0;
  double timestamp = 0.0;
  std::vector<Observation> observations;
  ObservationSource source = ObservationSource::detector;
};

struct Corner {
  Vec2 pixel;   // integer detector position
  double score; // sum of absolute threshold exceedances on the circle
};

/// FAST-9: a pixel is a corner iff >= 9 contiguous pixels on its radius-3
/// Bresenham circle are all brighter than center+threshold or all darker than
/// center-threshold. 3x3 non-maximum suppression on the score; output sorted
/// by score (ties by row-major position), truncated to max_count.
std::vector<Corner> detect_corners(const ImageGray& image, int max_count, int threshold);

/// Bucketed variant: corners spread over an 8x8 grid with a per-cell quota,
/// remaining budget filled by global score order.
std::vector<Corner> detect_corners_grid(const ImageGray& image, int max_count, int threshold,
                                        int grid = 8);

struct TrackConfig {
  int levels = 3;
  int iterations = 30;
  double epsilon = 0.01;        // convergence step, pixels
  double max_ssd_per_pixel = 400.0;
};

/// Pyramidal translational alignment of 15x15 patches; nullopt when the
/// window leaves the image or the final per-pixel SSD exceeds the threshold.
std::vector<std::optional<Vec2>> track_features(const ImageGray& prev_image,
                                                const ImageGray& next_image,
                                                const std::vector<Vec2>& prev_pixels,
                                                const TrackConfig& config = {});

/// 256-bit intensity-comparison signature of the 15x15 patch around the
/// pixel; nullopt when the patch does not fit.
std::optional<Descriptor> compute_descriptor(const ImageGray& image, const Vec2& pixel);

/// Keeps exactly the observations whose pixel lies on a set mask bit.
FrameObservations filter_by_mask(const FrameObservations& frame, const BinaryMask& mask);

}  // namespace mbtrack
