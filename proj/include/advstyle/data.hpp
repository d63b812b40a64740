#pragma once

// Procedural multi-domain benchmark: 7 glyph classes rendered at 32x32 and
// colored by per-domain palettes. The source domain ties palette to class
// (a color shortcut that a classifier can exploit); target domains draw
// palettes independently of class, so the shortcut breaks while shape stays
// predictive. Target palettes are disjoint from source palettes and domain
// noise grows with the domain index, giving a graded style shift.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "advstyle/common.hpp"
#include "advstyle/io.hpp"
#include "advstyle/random.hpp"

namespace advstyle {

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kNumClasses = 7;
inline constexpr std::size_t kNumDomains = 4;  // 0 = source, 1..3 = targets
inline constexpr double kForeground = 0.85;
inline constexpr double kBackground = 0.15;

struct Palette {
  std::array<double, 3> gain{};
  std::array<double, 3> bias{};
};

struct DomainSpec {
  int id = 0;
  std::vector<Palette> palettes;  // one per class
  double gain_jitter = 0.04;
  double bias_jitter = 0.03;
  double contrast_lo = 0.85;
  double contrast_hi = 1.15;
  bool class_correlated = false;

  void validate() const {
    if (palettes.size() != kNumClasses)
      throw ValueError("DomainSpec: expected " + std::to_string(kNumClasses) + " palettes");
    for (const auto& p : palettes)
      for (double g : p.gain)
        if (std::abs(g) < 0.05)
          throw ValueError("DomainSpec: |gain| must be >= 0.05, got " + std::to_string(g));
    if (!(contrast_lo > 0) || !(contrast_hi >= contrast_lo))
      throw ValueError("DomainSpec: bad contrast range");
    if (class_correlated) {
      for (std::size_t a = 0; a < palettes.size(); ++a)
        for (std::size_t b = a + 1; b < palettes.size(); ++b)
          if (palette_linf(palettes[a], palettes[b]) < 0.5)
            throw ValueError("DomainSpec: class palettes " + std::to_string(a) + " and " +
                             std::to_string(b) + " are closer than 0.5 in Linf");
    }
  }

  static double palette_linf(const Palette& a, const Palette& b) {
    double d = 0;
    for (int c = 0; c < 3; ++c) {
      d = std::max(d, std::abs(a.gain[c] - b.gain[c]));
      d = std::max(d, std::abs(a.bias[c] - b.bias[c]));
    }
    return d;
  }
};

struct GlyphParams {
  double dx = 0;  // translation, +-4 px
  double dy = 0;
  double scale = 1;  // 0.8 - 1.2
};

// Base glyph radius. 9 * 1.2 + 4 = 14.8 < 15.5, so every glyph stays fully
// inside the frame at maximum translation and scale.
inline constexpr double kGlyphRadius = 9.0;

inline bool glyph_hit(std::size_t cls, double x, double y, double r) {
  const double ax = std::abs(x), ay = std::abs(y);
  switch (cls) {
    case 0:  // disk
      return x * x + y * y <= r * r;
    case 1:  // square
      return std::max(ax, ay) <= 0.8 * r;
    case 2:  // cross
      return (ax <= 0.28 * r && ay <= r) || (ay <= 0.28 * r && ax <= r);
    case 3: {  // triangle (apex up)
      const double x1 = 0, y1 = -r;
      const double x2 = -0.9 * r, y2 = 0.75 * r;
      const double x3 = 0.9 * r, y3 = 0.75 * r;
      const auto side = [](double px, double py, double qx, double qy, double rx, double ry) {
        return (qx - px) * (ry - py) - (qy - py) * (rx - px);
      };
      const double d1 = side(x1, y1, x2, y2, x, y);
      const double d2 = side(x2, y2, x3, y3, x, y);
      const double d3 = side(x3, y3, x1, y1, x, y);
      const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
      const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
      return !(has_neg && has_pos);
    }
    case 4:  // ring
      return x * x + y * y <= r * r && x * x + y * y >= 0.62 * r * 0.62 * r;
    case 5:  // horizontal stripes
      return ax <= r && ay <= r &&
             static_cast<long long>(std::floor((y + r) / (r / 2))) % 2 == 0;
    case 6:  // vertical stripes
      return ax <= r && ay <= r &&
             static_cast<long long>(std::floor((x + r) / (r / 2))) % 2 == 0;
    default:
      throw ValueError("glyph_hit: class out of range: " + std::to_string(cls));
  }
}

// Binary 32x32 content mask for a class at the given placement.
inline std::vector<float> render_mask(std::size_t cls, const GlyphParams& gp) {
  if (cls >= kNumClasses) throw ValueError("render_mask: class out of range");
  const double cx = 15.5 + gp.dx, cy = 15.5 + gp.dy;
  const double r = kGlyphRadius * gp.scale;
  std::vector<float> m(kImageSize * kImageSize, 0.0f);
  for (std::size_t py = 0; py < kImageSize; ++py)
    for (std::size_t px = 0; px < kImageSize; ++px)
      if (glyph_hit(cls, static_cast<double>(px) - cx, static_cast<double>(py) - cy, r))
        m[py * kImageSize + px] = 1.0f;
  return m;
}

inline GlyphParams draw_glyph_params(RngStream& rng) {
  GlyphParams gp;
  gp.dx = rng.uniform(-4.0, 4.0);
  gp.dy = rng.uniform(-4.0, 4.0);
  gp.scale = rng.uniform(0.8, 1.2);
  return gp;
}

inline std::vector<float> render_content(std::size_t cls, RngStream& rng) {
  return render_mask(cls, draw_glyph_params(rng));
}

// image_c = clip(gain_c * (fg*mask + bg*(1-mask)) + bias_c, 0, 1) ^ contrast.
// Draw order (palette pick, 3 gains, 3 biases, contrast) is part of the
// determinism contract.
inline std::vector<float> stylize(const std::vector<float>& mask, const DomainSpec& spec,
                                  std::size_t cls, RngStream& rng) {
  if (mask.size() != kImageSize * kImageSize) throw ValueError("stylize: bad mask size");
  const std::size_t pal_idx =
      spec.class_correlated ? cls : static_cast<std::size_t>(rng.uniform_int(kNumClasses));
  const Palette& pal = spec.palettes[pal_idx];
  std::array<double, 3> gain{}, bias{};
  for (int c = 0; c < 3; ++c) gain[c] = pal.gain[c] + spec.gain_jitter * rng.normal();
  for (int c = 0; c < 3; ++c) bias[c] = pal.bias[c] + spec.bias_jitter * rng.normal();
  const double contrast = rng.uniform(spec.contrast_lo, spec.contrast_hi);

  std::vector<float> img(3 * kImageSize * kImageSize);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < kImageSize * kImageSize; ++p) {
      const double level = kForeground * mask[p] + kBackground * (1.0 - mask[p]);
      double v = gain[c] * level + bias[c];
      v = std::min(1.0, std::max(0.0, v));
      img[static_cast<std::size_t>(c) * kImageSize * kImageSize + p] =
          static_cast<float>(std::pow(v, contrast));
    }
  }
  return img;
}

struct DataGenConfig {
  std::uint64_t seed = 0;
  std::size_t train_size = 2048;
  std::size_t target_size = 1024;
  double gain_jitter = 0.04;
  double bias_jitter = 0.03;
  double contrast_lo = 0.85;
  double contrast_hi = 1.15;

  void validate() const {
    if (train_size == 0 || target_size == 0) throw ConfigError("data: sizes must be positive");
    if (!(gain_jitter >= 0) || !(bias_jitter >= 0)) throw ConfigError("data: jitters must be >= 0");
    if (!(contrast_lo > 0) || !(contrast_hi >= contrast_lo))
      throw ConfigError("data: bad contrast range");
  }
};

// Target palettes never collide with source palettes: versus the source's
// {0.35, 1.0} gains, domain 1 shifts gains up (every channel differs by
// >= 0.55 for some channel since class codes are nonzero), domain 2 adds a
// 0.55 bias, domain 3 inverts gain sign around a 1.0 bias.
inline std::vector<DomainSpec> make_domain_specs(const DataGenConfig& cfg) {
  const auto palette_for = [](int domain, std::size_t cls) {
    const unsigned code = static_cast<unsigned>(cls) + 1;  // 3-bit color code, 1..7
    Palette p;
    for (int c = 0; c < 3; ++c) {
      const bool bit = (code >> c) & 1u;
      switch (domain) {
        case 0:
          p.gain[c] = bit ? 1.0 : 0.35;
          p.bias[c] = 0.0;
          break;
        case 1:
          p.gain[c] = bit ? 1.55 : 0.9;
          p.bias[c] = 0.0;
          break;
        case 2:
          p.gain[c] = bit ? 0.35 : 1.0;
          p.bias[c] = 0.55;
          break;
        default:
          p.gain[c] = bit ? -1.0 : -0.35;
          p.bias[c] = 1.0;
          break;
      }
    }
    return p;
  };
  // Style noise grows with the domain index (graded difficulty).
  const std::array<double, kNumDomains> noise_mult = {1.0, 1.3, 1.9, 2.5};

  std::vector<DomainSpec> specs(kNumDomains);
  for (std::size_t d = 0; d < kNumDomains; ++d) {
    DomainSpec& s = specs[d];
    s.id = static_cast<int>(d);
    s.class_correlated = d == 0;
    for (std::size_t k = 0; k < kNumClasses; ++k)
      s.palettes.push_back(palette_for(static_cast<int>(d), k));
    s.gain_jitter = cfg.gain_jitter * noise_mult[d];
    s.bias_jitter = cfg.bias_jitter * noise_mult[d];
    s.contrast_lo = 1.0 - (1.0 - cfg.contrast_lo) * noise_mult[d];
    s.contrast_hi = 1.0 + (cfg.contrast_hi - 1.0) * noise_mult[d];
    if (s.contrast_lo < 0.05) s.contrast_lo = 0.05;
    s.validate();
  }
  return specs;
}

struct Split {
  std::size_t n = 0;
  std::vector<float> images;  // n * 3 * 32 * 32, row-major
  std::vector<int> labels;    // 0..K-1
  std::vector<int> domains;

  Shape image_shape() const { return {n, 3, kImageSize, kImageSize}; }
};

struct Benchmark {
  Split train;                  // domain 0, class-correlated style
  std::vector<Split> targets;  // domains 1..3, decorrelated style
  std::vector<DomainSpec> specs;
  DataGenConfig cfg;
};

inline Split generate_split(const DomainSpec& spec, std::size_t size, RngStream& rng) {
  // Round-robin labels (uniform +-1 histogram), then a shuffle so file order
  // carries no class stripe.
  std::vector<int> labels(size);
  for (std::size_t i = 0; i < size; ++i) labels[i] = static_cast<int>(i % kNumClasses);
  const std::vector<std::size_t> perm = rng.permutation(size);
  Split out;
  out.n = size;
  out.images.resize(size * 3 * kImageSize * kImageSize);
  out.labels.resize(size);
  out.domains.assign(size, spec.id);
  for (std::size_t i = 0; i < size; ++i) {
    const int k = labels[perm[i]];
    out.labels[i] = k;
    const std::vector<float> mask = render_content(static_cast<std::size_t>(k), rng);
    const std::vector<float> img = stylize(mask, spec, static_cast<std::size_t>(k), rng);
    std::copy(img.begin(), img.end(), out.images.begin() + static_cast<std::ptrdiff_t>(
                                                               i * 3 * kImageSize * kImageSize));
  }
  return out;
}

inline Benchmark make_benchmark(const DataGenConfig& cfg) {
  cfg.validate();
  Benchmark b;
  b.cfg = cfg;
  b.specs = make_domain_specs(cfg);
  {
    RngStream rng(derive_seed(cfg.seed, "data.train"));
    b.train = generate_split(b.specs[0], cfg.train_size, rng);
  }
  for (std::size_t d = 1; d < kNumDomains; ++d) {
    RngStream rng(derive_seed(cfg.seed, "data.target" + std::to_string(d)));
    b.targets.push_back(generate_split(b.specs[d], cfg.target_size, rng));
  }
  return b;
}

// ---- dataset files ----------------------------------------------------

inline std::string split_name(std::size_t idx) {
  return idx == 0 ? "train" : "target" + std::to_string(idx);
}

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline std::string manifest_text(const Benchmark& b) {
  std::ostringstream os;
  os << "[benchmark]\n";
  os << "seed = " << b.cfg.seed << "\n";
  os << "num_classes = " << kNumClasses << "\n";
  os << "image_size = " << kImageSize << "\n";
  os << "fg = " << detail::fmt_double(kForeground) << "\n";
  os << "bg = " << detail::fmt_double(kBackground) << "\n";
  os << "train_size = " << b.train.n << "\n";
  os << "target_size = " << (b.targets.empty() ? 0 : b.targets[0].n) << "\n";
  for (const auto& s : b.specs) {
    os << "\n[domain." << s.id << "]\n";
    os << "class_correlated = " << (s.class_correlated ? "true" : "false") << "\n";
    os << "gain_jitter = " << detail::fmt_double(s.gain_jitter) << "\n";
    os << "bias_jitter = " << detail::fmt_double(s.bias_jitter) << "\n";
    os << "contrast_lo = " << detail::fmt_double(s.contrast_lo) << "\n";
    os << "contrast_hi = " << detail::fmt_double(s.contrast_hi) << "\n";
    for (std::size_t k = 0; k < s.palettes.size(); ++k) {
      const Palette& p = s.palettes[k];
      os << "palette." << k << ".gain = " << detail::fmt_double(p.gain[0]) << ","
         << detail::fmt_double(p.gain[1]) << "," << detail::fmt_double(p.gain[2]) << "\n";
      os << "palette." << k << ".bias = " << detail::fmt_double(p.bias[0]) << ","
         << detail::fmt_double(p.bias[1]) << "," << detail::fmt_double(p.bias[2]) << "\n";
    }
  }
  return os.str();
}

inline void save_split(const std::string& dir, const std::string& name, const Split& s) {
  save_advt(dir + "/" + name + "_images.advt", s.image_shape(), s.images);
  std::vector<float> lab(s.labels.begin(), s.labels.end());
  std::vector<float> dom(s.domains.begin(), s.domains.end());
  save_advt(dir + "/" + name + "_labels.advt", Shape{s.n}, lab);
  save_advt(dir + "/" + name + "_domains.advt", Shape{s.n}, dom);
}

inline void save_benchmark(const std::string& dir, const Benchmark& b) {
  save_split(dir, "train", b.train);
  for (std::size_t d = 0; d < b.targets.size(); ++d)
    save_split(dir, split_name(d + 1), b.targets[d]);
  atomic_write_file(dir + "/manifest.txt", manifest_text(b));
}

inline Split load_split(const std::string& dir, const std::string& name) {
  Split s;
  auto [ishape, images] = load_advt<float>(dir + "/" + name + "_images.advt");
  if (ishape.size() != 4 || ishape[1] != 3)
    throw IoError(dir + "/" + name + "_images.advt: expected N x 3 x H x W, got " +
                  shape_str(ishape));
  s.n = ishape[0];
  s.images = std::move(images);
  auto [lshape, labels] = load_advt<float>(dir + "/" + name + "_labels.advt");
  auto [dshape, domains] = load_advt<float>(dir + "/" + name + "_domains.advt");
  if (lshape != Shape{s.n} || dshape != Shape{s.n})
    throw IoError(dir + ": labels/domains sizes do not match images");
  s.labels.reserve(s.n);
  s.domains.reserve(s.n);
  for (float v : labels) s.labels.push_back(static_cast<int>(v));
  for (float v : domains) s.domains.push_back(static_cast<int>(v));
  return s;
}

}  // namespace advstyle
