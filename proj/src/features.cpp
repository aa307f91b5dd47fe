#include "mbtrack/features.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mbtrack {

int hamming_distance(const Descriptor& a, const Descriptor& b) {
  int d = 0;
  for (size_t i = 0; i < a.size(); ++i) d += std::popcount(uint8_t(a[i] ^ b[i]));
  return d;
}

namespace {

constexpr int kCircle[16][2] = {{0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0},  {3, 1},
                                {2, 2},  {1, 3},  {0, 3},  {-1, 3}, {-2, 2}, {-3, 1},
                                {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}};

// Segment test + exceedance score at one pixel; score 0 means "not a corner".
double fast_score_at(const ImageGray& img, int x, int y, int threshold) {
  const int c = img.at(x, y);
  const int hi = c + threshold;
  const int lo = c - threshold;
  uint32_t bright = 0, dark = 0;
  int vals[16];
  for (int i = 0; i < 16; ++i) {
    vals[i] = img.at(x + kCircle[i][0], y + kCircle[i][1]);
    if (vals[i] > hi) bright |= 1u << i;
    if (vals[i] < lo) dark |= 1u << i;
  }
  auto has_run9 = [](uint32_t m) {
    const uint32_t wrapped = m | (m << 16);
    uint32_t run = wrapped;
    for (int s = 1; s < 9; ++s) run &= wrapped >> s;
    return (run & 0xFFFFu) != 0;
  };
  if (has_run9(bright)) {
    double s = 0.0;
    for (int i = 0; i < 16; ++i) {
      if (bright & (1u << i)) s += vals[i] - hi;
    }
    return s;
  }
  if (has_run9(dark)) {
    double s = 0.0;
    for (int i = 0; i < 16; ++i) {
      if (dark & (1u << i)) s += lo - vals[i];
    }
    return s;
  }
  return 0.0;
}

}  // namespace

std::vector<Corner> detect_corners(const ImageGray& image, int max_count, int threshold) {
  std::vector<Corner> out;
  if (image.width < 7 || image.height < 7) {
    throw std::invalid_argument("detect_corners: image smaller than 7x7");
  }
  const int w = image.width, h = image.height;
  std::vector<double> score(size_t(w) * h, 0.0);
  for (int y = 3; y < h - 3; ++y) {
    for (int x = 3; x < w - 3; ++x) {
      score[size_t(y) * w + x] = fast_score_at(image, x, y, threshold);
    }
  }
  // 3x3 NMS; equal scores resolved toward the earlier row-major position.
  for (int y = 3; y < h - 3; ++y) {
    for (int x = 3; x < w - 3; ++x) {
      const double s = score[size_t(y) * w + x];
      if (s <= 0.0) continue;
      bool keep = true;
      for (int dy = -1; dy <= 1 && keep; ++dy) {
        for (int dx = -1; dx <= 1 && keep; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const double sn = score[size_t(y + dy) * w + (x + dx)];
          if (sn > s || (sn == s && (dy < 0 || (dy == 0 && dx < 0)))) keep = false;
        }
      }
      if (keep) out.push_back(Corner{Vec2(x, y), s});
    }
  }
  std::stable_sort(out.begin(), out.end(), [w](const Corner& a, const Corner& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.pixel.y() * w + a.pixel.x() < b.pixel.y() * w + b.pixel.x();
  });
  if (int(out.size()) > max_count) out.resize(max_count);
  return out;
}

std::vector<Corner> detect_corners_grid(const ImageGray& image, int max_count, int threshold,
                                        int grid) {
  std::vector<Corner> all = detect_corners(image, image.width * image.height, threshold);
  if (int(all.size()) <= max_count) return all;
  const int quota = (max_count + grid * grid - 1) / (grid * grid);
  std::vector<int> cell_count(size_t(grid) * grid, 0);
  std::vector<uint8_t> taken(all.size(), 0);
  std::vector<Corner> out;
  out.reserve(max_count);
  for (size_t i = 0; i < all.size() && int(out.size()) < max_count; ++i) {
    const int cx = std::min(grid - 1, int(all[i].pixel.x()) * grid / image.width);
    const int cy = std::min(grid - 1, int(all[i].pixel.y()) * grid / image.height);
    if (cell_count[size_t(cy) * grid + cx] >= quota) continue;
    ++cell_count[size_t(cy) * grid + cx];
    taken[i] = 1;
    out.push_back(all[i]);
  }
  for (size_t i = 0; i < all.size() && int(out.size()) < max_count; ++i) {
    if (!taken[i]) out.push_back(all[i]);
  }
  return out;
}

namespace {

constexpr int kPatchRadius = 7;  // 15x15 window

bool window_inside(const ImageGray& img, const Vec2& p) {
  return p.x() - kPatchRadius >= 0.0 && p.y() - kPatchRadius >= 0.0 &&
         p.x() + kPatchRadius <= img.width - 1 && p.y() + kPatchRadius <= img.height - 1;
}

ImageGray downsample(const ImageGray& img) {
  ImageGray out(img.width / 2, img.height / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const int s = img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) + img.at(2 * x, 2 * y + 1) +
                    img.at(2 * x + 1, 2 * y + 1);
      out.at(x, y) = uint8_t((s + 2) / 4);
    }
  }
  return out;
}

// One-level translational alignment; returns false if the window leaves the
// image during iteration.
bool align_patch(const ImageGray& prev, const ImageGray& next, const Vec2& p, Vec2& d,
                 const TrackConfig& cfg) {
  if (!window_inside(prev, p)) return false;
  // Template intensities and gradients from the previous image (fixed).
  double tmpl[15][15], gx[15][15], gy[15][15];
  Eigen::Matrix2d g = Eigen::Matrix2d::Zero();
  for (int dy = -kPatchRadius; dy <= kPatchRadius; ++dy) {
    for (int dx = -kPatchRadius; dx <= kPatchRadius; ++dx) {
      const double x = p.x() + dx, y = p.y() + dy;
      tmpl[dy + kPatchRadius][dx + kPatchRadius] = prev.sample(x, y);
      const double ix = 0.5 * (prev.sample(std::min(x + 1, double(prev.width - 1)), y) -
                               prev.sample(std::max(x - 1, 0.0), y));
      const double iy = 0.5 * (prev.sample(x, std::min(y + 1, double(prev.height - 1))) -
                               prev.sample(x, std::max(y - 1, 0.0)));
      gx[dy + kPatchRadius][dx + kPatchRadius] = ix;
      gy[dy + kPatchRadius][dx + kPatchRadius] = iy;
      g(0, 0) += ix * ix;
      g(0, 1) += ix * iy;
      g(1, 0) += ix * iy;
      g(1, 1) += iy * iy;
    }
  }
  if (std::abs(g.determinant()) < 1e-12) return false;
  const Eigen::Matrix2d g_inv = g.inverse();

  for (int it = 0; it < cfg.iterations; ++it) {
    const Vec2 q = p + d;
    if (!window_inside(next, q)) return false;
    Eigen::Vector2d b = Eigen::Vector2d::Zero();
    for (int dy = -kPatchRadius; dy <= kPatchRadius; ++dy) {
      for (int dx = -kPatchRadius; dx <= kPatchRadius; ++dx) {
        const double diff = tmpl[dy + kPatchRadius][dx + kPatchRadius] -
                            next.sample(q.x() + dx, q.y() + dy);
        b(0) += diff * gx[dy + kPatchRadius][dx + kPatchRadius];
        b(1) += diff * gy[dy + kPatchRadius][dx + kPatchRadius];
      }
    }
    const Eigen::Vector2d step = g_inv * b;
    d += step;
    if (step.norm() < cfg.epsilon) break;
  }
  return window_inside(next, p + d);
}

double patch_ssd(const ImageGray& prev, const ImageGray& next, const Vec2& p, const Vec2& q) {
  double ssd = 0.0;
  for (int dy = -kPatchRadius; dy <= kPatchRadius; ++dy) {
    for (int dx = -kPatchRadius; dx <= kPatchRadius; ++dx) {
      const double diff = prev.sample(p.x() + dx, p.y() + dy) - next.sample(q.x() + dx, q.y() + dy);
      ssd += diff * diff;
    }
  }
  return ssd / (15.0 * 15.0);
}

}  // namespace

std::vector<std::optional<Vec2>> track_features(const ImageGray& prev_image,
                                                const ImageGray& next_image,
                                                const std::vector<Vec2>& prev_pixels,
                                                const TrackConfig& config) {
  if (prev_image.width != next_image.width || prev_image.height != next_image.height) {
    throw std::invalid_argument("track_features: image sizes differ");
  }
  std::vector<ImageGray> prev_pyr{prev_image}, next_pyr{next_image};
  for (int l = 1; l < config.levels; ++l) {
    if (prev_pyr.back().width < 32 || prev_pyr.back().height < 32) break;
    prev_pyr.push_back(downsample(prev_pyr.back()));
    next_pyr.push_back(downsample(next_pyr.back()));
  }

  std::vector<std::optional<Vec2>> out(prev_pixels.size());
  for (size_t i = 0; i < prev_pixels.size(); ++i) {
    const int top = int(prev_pyr.size()) - 1;
    Vec2 d = Vec2::Zero();
    bool ok = true;
    for (int l = top; l >= 0; --l) {
      const double scale = double(1 << l);
      Vec2 p_l = prev_pixels[i] / scale;
      if (!align_patch(prev_pyr[l], next_pyr[l], p_l, d, config)) {
        // Coarse levels may clip near the border; only level 0 is fatal.
        if (l == 0) {
          ok = false;
          break;
        }
        d *= 2.0;
        continue;
      }
      if (l > 0) d *= 2.0;
    }
    if (!ok) continue;
    const Vec2 q = prev_pixels[i] + d;
    if (!window_inside(next_image, q)) continue;
    if (patch_ssd(prev_image, next_image, prev_pixels[i], q) > config.max_ssd_per_pixel) continue;
    out[i] = q;
  }
  return out;
}

namespace {

struct ComparisonPattern {
  int8_t a[256][2];
  int8_t b[256][2];
};

const ComparisonPattern& brief_pattern() {
  static const ComparisonPattern pattern = [] {
    ComparisonPattern p;
    std::mt19937 rng(0x9E3779B9u);  // fixed pattern, shared by all descriptors
    std::uniform_int_distribution<int> off(-kPatchRadius, kPatchRadius);
    for (int i = 0; i < 256; ++i) {
      p.a[i][0] = int8_t(off(rng));
      p.a[i][1] = int8_t(off(rng));
      p.b[i][0] = int8_t(off(rng));
      p.b[i][1] = int8_t(off(rng));
    }
    return p;
  }();
  return pattern;
}

}  // namespace

std::optional<Descriptor> compute_descriptor(const ImageGray& image, const Vec2& pixel) {
  const int cx = int(std::lround(pixel.x()));
  const int cy = int(std::lround(pixel.y()));
  if (cx < kPatchRadius || cy < kPatchRadius || cx > image.width - 1 - kPatchRadius ||
      cy > image.height - 1 - kPatchRadius) {
    return std::nullopt;
  }
  const ComparisonPattern& p = brief_pattern();
  Descriptor d{};
  for (int i = 0; i < 256; ++i) {
    const uint8_t va = image.at(cx + p.a[i][0], cy + p.a[i][1]);
    const uint8_t vb = image.at(cx + p.b[i][0], cy + p.b[i][1]);
    if (va < vb) d[i / 8] |= uint8_t(1u << (i % 8));
  }
  return d;
}

FrameObservations filter_by_mask(const FrameObservations& frame, const BinaryMask& mask) {
  FrameObservations out = frame;
  out.observations.clear();
  for (const Observation& obs : frame.observations) {
    if (mask.covers(obs.pixel)) out.observations.push_back(obs);
  }
  return out;
}

}  // namespace mbtrack
