#include "mbtrack/features.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <random>

using namespace mbtrack;
using namespace mbtrack::testing;

namespace {

// Independent FAST-9 oracle: naive per-pixel segment test, score as the sum
// of absolute exceedances of the passing polarity, 3x3 NMS with the
// earliest-row-major tie rule.
std::vector<Corner> fast9_oracle(const ImageGray& img, int max_count, int threshold) {
  static const int circle[16][2] = {{0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0},   {3, 1},
                                    {2, 2},  {1, 3},  {0, 3},  {-1, 3}, {-2, 2},  {-3, 1},
                                    {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}};
  const int w = img.width, h = img.height;
  std::vector<double> score(size_t(w) * h, 0.0);
  for (int y = 3; y < h - 3; ++y) {
    for (int x = 3; x < w - 3; ++x) {
      const int c = img.at(x, y);
      bool bright[16], dark[16];
      for (int i = 0; i < 16; ++i) {
        const int p = img.at(x + circle[i][0], y + circle[i][1]);
        bright[i] = p > c + threshold;
        dark[i] = p < c - threshold;
      }
      auto run9 = [&](const bool* flags) {
        for (int start = 0; start < 16; ++start) {
          bool all = true;
          for (int j = 0; j < 9; ++j) all = all && flags[(start + j) % 16];
          if (all) return true;
        }
        return false;
      };
      double s = 0.0;
      if (run9(bright)) {
        for (int i = 0; i < 16; ++i) {
          const int p = img.at(x + circle[i][0], y + circle[i][1]);
          if (bright[i]) s += p - c - threshold;
        }
      } else if (run9(dark)) {
        for (int i = 0; i < 16; ++i) {
          const int p = img.at(x + circle[i][0], y + circle[i][1]);
          if (dark[i]) s += c - threshold - p;
        }
      }
      score[size_t(y) * w + x] = s;
    }
  }
  std::vector<Corner> out;
  for (int y = 3; y < h - 3; ++y) {
    for (int x = 3; x < w - 3; ++x) {
      const double s = score[size_t(y) * w + x];
      if (s <= 0.0) continue;
      bool keep = true;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
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

ImageGray random_image(int w, int h, uint64_t seed) {
  ImageGray img(w, h);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  for (auto& px : img.data) px = uint8_t(u(rng));
  return img;
}

}  // namespace

TEST_CASE("detect_corners: uniform image has no corners") {
  const ImageGray img(64, 64, 128);
  CHECK(detect_corners(img, 100, 20).empty());
}

TEST_CASE("detect_corners: bright square corners found at or next to the corners") {
  ImageGray img(64, 64, 20);
  for (int y = 20; y < 25; ++y) {
    for (int x = 20; x < 25; ++x) img.at(x, y) = 220;
  }
  const auto corners = detect_corners(img, 100, 20);
  REQUIRE_FALSE(corners.empty());
  const Vec2 expected[4] = {{20, 20}, {24, 20}, {20, 24}, {24, 24}};
  for (const Vec2& e : expected) {
    bool found = false;
    for (const Corner& c : corners) {
      if (std::abs(c.pixel.x() - e.x()) <= 1.0 && std::abs(c.pixel.y() - e.y()) <= 1.0) {
        found = true;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("detect_corners: equivalent to the brute-force oracle on random images") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    const ImageGray img = random_image(64, 64, seed);
    const auto got = detect_corners(img, 10000, 20);
    const auto expected = fast9_oracle(img, 10000, 20);
    REQUIRE(got.size() == expected.size());
    for (size_t i = 0; i < got.size(); ++i) {
      REQUIRE(got[i].pixel == expected[i].pixel);
      REQUIRE(got[i].score == expected[i].score);
    }
  }
}

TEST_CASE("detect_corners: translation equivariance for interior corners") {
  const ImageGray img = random_image(96, 96, 9);
  const int dx = 5, dy = 3;
  ImageGray shifted(96, 96, 0);
  for (int y = 0; y < 96; ++y) {
    for (int x = 0; x < 96; ++x) {
      const int sx = x - dx, sy = y - dy;
      if (sx >= 0 && sy >= 0) shifted.at(x, y) = img.at(sx, sy);
    }
  }
  const auto base = detect_corners(img, 10000, 20);
  const auto moved = detect_corners(shifted, 10000, 20);
  auto has = [&](const std::vector<Corner>& list, const Vec2& p) {
    for (const Corner& c : list) {
      if (c.pixel == p) return true;
    }
    return false;
  };
  int interior = 0;
  for (const Corner& c : base) {
    // Stay clear of both image borders and the shifted-in band.
    if (c.pixel.x() < 10 || c.pixel.y() < 10 || c.pixel.x() > 80 || c.pixel.y() > 86) continue;
    ++interior;
    CHECK(has(moved, c.pixel + Vec2{dx, dy}));
  }
  CHECK(interior > 10);
}

TEST_CASE("detect_corners_grid spreads detections and respects the budget") {
  ImageGray img = random_image(128, 128, 21);
  const auto corners = detect_corners_grid(img, 64, 15);
  CHECK(int(corners.size()) <= 64);
  CHECK(corners.size() > 10);
}

TEST_CASE("track_features: identity pair returns zero displacement") {
  const ImageGray img = random_image(96, 96, 33);
  std::vector<Vec2> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(Vec2{12.0 + 3.5 * i, 40.0 + (i % 5)});
  const auto tracked = track_features(img, img, pts);
  for (size_t i = 0; i < pts.size(); ++i) {
    REQUIRE(tracked[i].has_value());
    CHECK((*tracked[i] - pts[i]).norm() == 0.0);
  }
}

TEST_CASE("track_features: recovers an integer shift within half a pixel") {
  const ImageGray img = random_image(128, 128, 55);
  const int dx = 3, dy = 2;
  ImageGray shifted(128, 128, 0);
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      const int sx = x - dx, sy = y - dy;
      if (sx >= 0 && sy >= 0) shifted.at(x, y) = img.at(sx, sy);
    }
  }
  std::vector<Vec2> pts;
  for (int i = 0; i < 15; ++i) pts.push_back(Vec2{20.0 + 6 * i, 30.0 + 5 * i});
  const auto tracked = track_features(img, shifted, pts);
  int ok = 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    if (!tracked[i]) continue;
    CHECK((*tracked[i] - (pts[i] + Vec2{dx, dy})).norm() < 0.5);
    ++ok;
  }
  CHECK(ok >= 12);
}

TEST_CASE("track_features: windows leaving the image are lost") {
  const ImageGray img = random_image(64, 64, 77);
  // Within 7 px of the border: the 15x15 window does not fit.
  const auto tracked = track_features(img, img, {Vec2{5.0, 30.0}, Vec2{30.0, 60.0}});
  CHECK_FALSE(tracked[0].has_value());
  CHECK_FALSE(tracked[1].has_value());
}

TEST_CASE("filter_by_mask keeps exactly the observations on set bits") {
  FrameObservations frame;
  frame.frame_id = 4;
  Rng rng(91);
  std::uniform_real_distribution<double> u(0.0, 63.999);
  for (int i = 0; i < 200; ++i) {
    Observation obs;
    obs.frame_id = 4;
    obs.pixel = Vec2{u(rng), u(rng)};
    obs.feature_id = i;
    frame.observations.push_back(obs);
  }

  SUBCASE("all-true mask is the identity") {
    const BinaryMask mask(64, 64, true);
    const auto out = filter_by_mask(frame, mask);
    REQUIRE(out.observations.size() == frame.observations.size());
    for (size_t i = 0; i < out.observations.size(); ++i) {
      CHECK(out.observations[i].pixel == frame.observations[i].pixel);
    }
  }

  SUBCASE("all-false mask empties the frame") {
    const BinaryMask mask(64, 64, false);
    CHECK(filter_by_mask(frame, mask).observations.empty());
  }

  SUBCASE("half-plane mask matches the predicate") {
    BinaryMask mask(64, 64, false);
    for (int y = 0; y < 64; ++y) {
      for (int x = 32; x < 64; ++x) mask.set(x, y);
    }
    const auto out = filter_by_mask(frame, mask);
    size_t expected = 0;
    for (const auto& obs : frame.observations) {
      if (int(std::floor(obs.pixel.x())) >= 32) ++expected;
    }
    CHECK(out.observations.size() == expected);
    int64_t prev = -1;
    for (const auto& obs : out.observations) {
      CHECK(int(std::floor(obs.pixel.x())) >= 32);
      CHECK(*obs.feature_id > prev);  // order preserved
      prev = *obs.feature_id;
    }
  }
}

TEST_CASE("descriptors: deterministic, border-safe, discriminative") {
  const ImageGray img = random_image(64, 64, 101);
  const auto d1 = compute_descriptor(img, Vec2{30.0, 30.0});
  const auto d2 = compute_descriptor(img, Vec2{30.0, 30.0});
  REQUIRE(d1.has_value());
  CHECK(hamming_distance(*d1, *d2) == 0);
  CHECK_FALSE(compute_descriptor(img, Vec2{3.0, 30.0}).has_value());
  const auto d3 = compute_descriptor(img, Vec2{45.0, 20.0});
  REQUIRE(d3.has_value());
  CHECK(hamming_distance(*d1, *d3) > 32);  // unrelated patches differ widely
}
