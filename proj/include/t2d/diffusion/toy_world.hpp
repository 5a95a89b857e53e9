#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "t2d/core/image_io.hpp"
#include "t2d/core/rng.hpp"
#include "t2d/core/tensor.hpp"

namespace t2d {
namespace toy {

inline constexpr int kImageSize = 64;
inline constexpr int kNumClasses = 4;  // 0 = background + three shape classes

inline const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names = {"circle", "square", "triangle"};
  return names;  // class ids 1..3; 0 is background
}

struct ShapeSpec {
  int cls = 1;  // 1 circle, 2 square, 3 triangle
  float cx = 0, cy = 0, radius = 0, angle = 0;
  std::array<float, 3> color{};
  float depth_m = 4.0f;
};

struct WorldSample {
  Tensor image;                       // [3,S,S] in [0,1]
  LabelMap semantic;                  // [S,S] 0..3
  std::vector<LabelMap> inst_masks;   // binary [S,S]
  std::vector<int> inst_classes;      // class id per instance
  Tensor depth;                       // [S,S] meters
  std::vector<std::array<float, 3>> keypoints;  // pose mode: 17 x (x,y,vis)
  std::vector<int> present_classes;   // sorted unique shape ids
  std::string prompt_text;            // training template prompt
};

namespace detail {

inline float shape_coverage(const ShapeSpec& s, float px, float py) {
  // Signed membership via 3x3 subsamples; returns fraction inside.
  int hits = 0;
  for (int sy = 0; sy < 3; ++sy)
    for (int sx = 0; sx < 3; ++sx) {
      const float x = px + (sx - 1) / 3.0f;
      const float y = py + (sy - 1) / 3.0f;
      const float dx = x - s.cx, dy = y - s.cy;
      bool in = false;
      if (s.cls == 1) {
        in = dx * dx + dy * dy <= s.radius * s.radius;
      } else {
        const float ca = std::cos(s.angle), sa = std::sin(s.angle);
        const float rx = ca * dx + sa * dy;
        const float ry = -sa * dx + ca * dy;
        if (s.cls == 2) {
          const float half = s.radius * 0.8862f;  // area-match a circle
          in = std::abs(rx) <= half && std::abs(ry) <= half;
        } else {
          // Upward triangle inscribed in radius (before rotation).
          const float r = s.radius * 1.2f;
          const float y0 = -r, y1 = r * 0.5f;  // apex at top
          if (ry >= y0 && ry <= y1) {
            const float width = (ry - y0) / (y1 - y0) * r * 0.866f * 2.0f;
            in = std::abs(rx) <= width * 0.5f;
          }
        }
      }
      hits += in ? 1 : 0;
    }
  return hits / 9.0f;
}

inline std::array<float, 3> random_color(Rng& rng, float lo, float hi) {
  return {static_cast<float>(rng.uniform(lo, hi)),
          static_cast<float>(rng.uniform(lo, hi)),
          static_cast<float>(rng.uniform(lo, hi))};
}

inline float color_dist(const std::array<float, 3>& a, const std::array<float, 3>& b) {
  float d = 0;
  for (int c = 0; c < 3; ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(d);
}

}  // namespace detail

struct WorldOptions {
  int min_shapes = 1;
  int max_shapes = 2;
  bool pose_mode = false;
};

// Deterministic per seed. Shapes carry no class-color correlation, so class
// identity is carried by geometry alone.
inline WorldSample make_sample(uint64_t seed, const WorldOptions& opt = {}) {
  const int S = kImageSize;
  Rng rng = Rng::for_stream(seed, 0x5a17);
  WorldSample out;
  out.image = Tensor({3, S, S});
  out.semantic = LabelMap({S, S});
  out.depth = Tensor({S, S});

  // Background: linear gradient between two muted colors along a random axis.
  const auto bg0 = detail::random_color(rng, 0.15, 0.85);
  auto bg1 = detail::random_color(rng, 0.15, 0.85);
  const float ang = static_cast<float>(rng.uniform(0, 2 * M_PI));
  const float gx = std::cos(ang), gy = std::sin(ang);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const float tt = 0.5f + 0.5f * ((x - S / 2) * gx + (y - S / 2) * gy) / (0.71f * S);
      for (int c = 0; c < 3; ++c)
        out.image.at(c, y, x) = bg0[c] + (bg1[c] - bg0[c]) * std::clamp(tt, 0.f, 1.f);
      // Background plane recedes toward the top of the frame.
      out.depth.at(y, x) = 8.0f - 5.0f * static_cast<float>(y) / (S - 1);
    }
  const std::array<float, 3> bg_mean = {(bg0[0] + bg1[0]) / 2, (bg0[1] + bg1[1]) / 2,
                                        (bg0[2] + bg1[2]) / 2};

  std::vector<ShapeSpec> shapes;
  if (!opt.pose_mode) {
    const int n = opt.min_shapes +
                  static_cast<int>(rng.uniform_int(opt.max_shapes - opt.min_shapes + 1));
    for (int i = 0; i < n; ++i) {
      ShapeSpec s;
      s.cls = 1 + static_cast<int>(rng.uniform_int(3));
      s.radius = static_cast<float>(rng.uniform(11.0, 22.0));
      s.cx = static_cast<float>(rng.uniform(s.radius * 0.8, S - s.radius * 0.8));
      s.cy = static_cast<float>(rng.uniform(s.radius * 0.8, S - s.radius * 0.8));
      s.angle = static_cast<float>(rng.uniform(-0.5, 0.5));
      do {
        s.color = detail::random_color(rng, 0.05, 0.95);
      } while (detail::color_dist(s.color, bg_mean) < 0.45f);
      s.depth_m = std::clamp(9.0f - s.radius / 3.0f, 1.0f, 8.5f);
      shapes.push_back(s);
    }
  }

  for (const auto& s : shapes) {
    LabelMap inst({S, S});
    bool any = false;
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const float cov = detail::shape_coverage(s, static_cast<float>(x), static_cast<float>(y));
        if (cov <= 0.f) continue;
        for (int c = 0; c < 3; ++c)
          out.image.at(c, y, x) = (1 - cov) * out.image.at(c, y, x) + cov * s.color[c];
        if (cov >= 0.5f) {
          out.semantic.at(y, x) = s.cls;
          out.depth.at(y, x) = s.depth_m;
          inst.at(y, x) = 1;
          any = true;
        }
      }
    if (any) {
      out.inst_masks.push_back(std::move(inst));
      out.inst_classes.push_back(s.cls);
    }
  }

  if (opt.pose_mode) {
    // 17 COCO-ordered keypoints on a jittered stick figure.
    const float scale = static_cast<float>(rng.uniform(0.55, 0.95));
    const float cx = static_cast<float>(rng.uniform(24, S - 24));
    const float cy = static_cast<float>(rng.uniform(26, S - 22));
    const float rot = static_cast<float>(rng.uniform(-0.35, 0.35));
    // Template in unit torso coordinates: x right, y down.
    static const std::array<std::array<float, 2>, 17> tmpl = {{
        {0.0f, -1.30f},   // nose
        {-0.10f, -1.38f}, {0.10f, -1.38f},   // eyes
        {-0.22f, -1.30f}, {0.22f, -1.30f},   // ears
        {-0.50f, -0.90f}, {0.50f, -0.90f},   // shoulders
        {-0.70f, -0.35f}, {0.70f, -0.35f},   // elbows
        {-0.80f, 0.20f},  {0.80f, 0.20f},    // wrists
        {-0.30f, 0.10f},  {0.30f, 0.10f},    // hips
        {-0.32f, 0.75f},  {0.32f, 0.75f},    // knees
        {-0.34f, 1.40f},  {0.34f, 1.40f},    // ankles
    }};
    const float unit = 18.0f * scale;
    const float ca = std::cos(rot), sa = std::sin(rot);
    auto limb_color = detail::random_color(rng, 0.05, 0.5);
    out.keypoints.resize(17);
    std::array<std::array<float, 2>, 17> pts;
    for (int k = 0; k < 17; ++k) {
      const float jx = static_cast<float>(rng.uniform(-1.2, 1.2));
      const float jy = static_cast<float>(rng.uniform(-1.2, 1.2));
      const float lx = tmpl[k][0] * unit, ly = tmpl[k][1] * unit;
      const float x = cx + ca * lx - sa * ly + jx;
      const float y = cy + sa * lx + ca * ly + jy;
      pts[k] = {x, y};
      const bool vis = x >= 0 && x < S && y >= 0 && y < S;
      out.keypoints[k] = {x, y, vis ? 1.f : 0.f};
    }
    static const int bones[][2] = {{5, 7}, {7, 9}, {6, 8}, {8, 10}, {5, 6}, {5, 11},
                                   {6, 12}, {11, 12}, {11, 13}, {13, 15}, {12, 14}, {14, 16}};
    auto draw_disc = [&](float px, float py, float r, const std::array<float, 3>& col) {
      const int x0 = std::max(0, static_cast<int>(px - r - 1));
      const int x1 = std::min(S - 1, static_cast<int>(px + r + 1));
      const int y0 = std::max(0, static_cast<int>(py - r - 1));
      const int y1 = std::min(S - 1, static_cast<int>(py + r + 1));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const float d2 = (x - px) * (x - px) + (y - py) * (y - py);
          if (d2 <= r * r)
            for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = col[c];
        }
    };
    for (const auto& b : bones) {
      const auto& p0 = pts[b[0]];
      const auto& p1 = pts[b[1]];
      const int steps = 24;
      for (int i = 0; i <= steps; ++i) {
        const float f = static_cast<float>(i) / steps;
        draw_disc(p0[0] + (p1[0] - p0[0]) * f, p0[1] + (p1[1] - p0[1]) * f, 1.6f, limb_color);
      }
    }
    draw_disc(pts[0][0], pts[0][1] - 2.0f, 4.5f, limb_color);  // head
    out.prompt_text = "a photo of a person";
  }

  std::vector<int> present;
  for (int c : out.inst_classes)
    if (std::find(present.begin(), present.end(), c) == present.end()) present.push_back(c);
  std::sort(present.begin(), present.end());
  out.present_classes = present;
  if (!opt.pose_mode) {
    std::string p = "a photo of a ";
    if (present.empty()) p = "a photo of a plain background";
    for (size_t i = 0; i < present.size(); ++i) {
      if (i) p += ", a ";
      p += shape_class_names()[static_cast<size_t>(present[i] - 1)];
    }
    out.prompt_text = p;
  }
  return out;
}

}  // namespace toy
}  // namespace t2d
