#pragma once

// Test-only reference classifiers for the synthetic benchmark. The shape
// oracle proves the task is solvable from content alone (threshold mask
// extraction + glyph template match); the color oracle proves the source
// domain carries a color shortcut that breaks on the targets (nearest
// per-class channel-mean centroid). Neither is part of the library.

#include <algorithm>
#include <array>
#include <bitset>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "advstyle/data.hpp"

namespace oracles {

inline constexpr std::size_t kPix = advstyle::kImageSize * advstyle::kImageSize;
using MaskBits = std::bitset<kPix>;

struct TemplateBank {
  std::vector<MaskBits> masks;
  std::vector<int> labels;
};

// Every class rendered over the full placement grid the generator draws
// from: translations -4..4 in 1 px steps, scales 0.8..1.2 in 0.1 steps.
inline const TemplateBank& template_bank() {
  static const TemplateBank bank = [] {
    TemplateBank b;
    constexpr std::array<double, 5> scales = {0.8, 0.9, 1.0, 1.1, 1.2};
    for (std::size_t k = 0; k < advstyle::kNumClasses; ++k)
      for (int dx = -4; dx <= 4; ++dx)
        for (int dy = -4; dy <= 4; ++dy)
          for (double s : scales) {
            advstyle::GlyphParams gp;
            gp.dx = dx;
            gp.dy = dy;
            gp.scale = s;
            const std::vector<float> m = advstyle::render_mask(k, gp);
            MaskBits bits;
            for (std::size_t p = 0; p < kPix; ++p)
              if (m[p] > 0.5f) bits.set(p);
            b.masks.push_back(bits);
            b.labels.push_back(static_cast<int>(k));
          }
    return b;
  }();
  return bank;
}

// Threshold segmentation. The per-channel median estimates the background
// level (no glyph covers half the frame); a pixel is foreground when some
// channel deviates by more than half the image's peak deviation.
inline MaskBits extract_mask(const float* img) {
  std::array<double, 3> bg{};
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<float> v(img + c * kPix, img + (c + 1) * kPix);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(kPix / 2), v.end());
    bg[c] = v[kPix / 2];
  }
  std::vector<double> dist(kPix, 0.0);
  double peak = 0.0;
  for (std::size_t p = 0; p < kPix; ++p) {
    double d = 0.0;
    for (std::size_t c = 0; c < 3; ++c)
      d = std::max(d, std::abs(static_cast<double>(img[c * kPix + p]) - bg[c]));
    dist[p] = d;
    peak = std::max(peak, d);
  }
  MaskBits bits;
  const double thr = 0.5 * peak;
  for (std::size_t p = 0; p < kPix; ++p)
    if (dist[p] > thr) bits.set(p);
  return bits;
}

inline int shape_predict(const float* img) {
  const MaskBits mask = extract_mask(img);
  const TemplateBank& bank = template_bank();
  double best = -1.0;
  int best_label = 0;
  for (std::size_t i = 0; i < bank.masks.size(); ++i) {
    const double inter = static_cast<double>((mask & bank.masks[i]).count());
    const double uni = static_cast<double>((mask | bank.masks[i]).count());
    const double iou = uni > 0.0 ? inter / uni : 0.0;
    if (iou > best) {
      best = iou;
      best_label = bank.labels[i];
    }
  }
  return best_label;
}

inline double shape_accuracy(const advstyle::Split& s) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < s.n; ++i)
    if (shape_predict(s.images.data() + i * 3 * kPix) == s.labels[i]) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(s.n);
}

inline std::array<double, 3> channel_means(const float* img) {
  std::array<double, 3> m{};
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t p = 0; p < kPix; ++p) sum += img[c * kPix + p];
    m[c] = sum / static_cast<double>(kPix);
  }
  return m;
}

struct ColorCentroids {
  std::array<std::array<double, 3>, advstyle::kNumClasses> mean{};
};

inline ColorCentroids fit_color_centroids(const advstyle::Split& train) {
  ColorCentroids cc;
  std::array<std::size_t, advstyle::kNumClasses> counts{};
  for (std::size_t i = 0; i < train.n; ++i) {
    const auto m = channel_means(train.images.data() + i * 3 * kPix);
    const auto k = static_cast<std::size_t>(train.labels[i]);
    for (std::size_t c = 0; c < 3; ++c) cc.mean[k][c] += m[c];
    ++counts[k];
  }
  for (std::size_t k = 0; k < advstyle::kNumClasses; ++k)
    for (std::size_t c = 0; c < 3; ++c)
      if (counts[k] > 0) cc.mean[k][c] /= static_cast<double>(counts[k]);
  return cc;
}

inline int color_predict(const float* img, const ColorCentroids& cc) {
  const auto m = channel_means(img);
  double best = std::numeric_limits<double>::infinity();
  int best_label = 0;
  for (std::size_t k = 0; k < advstyle::kNumClasses; ++k) {
    double d = 0.0;
    for (std::size_t c = 0; c < 3; ++c) d += (m[c] - cc.mean[k][c]) * (m[c] - cc.mean[k][c]);
    if (d < best) {
      best = d;
      best_label = static_cast<int>(k);
    }
  }
  return best_label;
}

inline double color_accuracy(const advstyle::Split& s, const ColorCentroids& cc) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < s.n; ++i)
    if (color_predict(s.images.data() + i * 3 * kPix, cc) == s.labels[i]) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(s.n);
}

}  // namespace oracles
