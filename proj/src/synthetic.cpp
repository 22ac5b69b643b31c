#include "cyclead/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cyclead/error.hpp"
#include "cyclead/model.hpp"

namespace cyclead {
namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Per-channel tint keeps colour backgrounds from being pure grey.
std::vector<double> channel_tints(Rng& rng, int channels) {
  std::vector<double> t(channels, 1.0);
  if (channels > 1) {
    for (auto& v : t) v = uniform(rng, 0.8, 1.0);
  }
  return t;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Value noise on a (cells+1)^2 lattice, sampled with smoothstep blending.
std::vector<double> value_noise(Rng& rng, int resolution, int cells) {
  std::vector<double> lattice(static_cast<std::size_t>(cells + 1) * (cells + 1));
  for (auto& v : lattice) v = uniform(rng, 0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(resolution) * resolution);
  for (int y = 0; y < resolution; ++y) {
    const double fy = (y + 0.5) * cells / resolution;
    const int iy = std::min(cells - 1, static_cast<int>(fy));
    const double ty = smoothstep(fy - iy);
    for (int x = 0; x < resolution; ++x) {
      const double fx = (x + 0.5) * cells / resolution;
      const int ix = std::min(cells - 1, static_cast<int>(fx));
      const double tx = smoothstep(fx - ix);
      auto at = [&](int a, int b) { return lattice[static_cast<std::size_t>(a) * (cells + 1) + b]; };
      const double top = at(iy, ix) * (1 - tx) + at(iy, ix + 1) * tx;
      const double bottom = at(iy + 1, ix) * (1 - tx) + at(iy + 1, ix + 1) * tx;
      out[static_cast<std::size_t>(y) * resolution + x] = top * (1 - ty) + bottom * ty;
    }
  }
  return out;
}

void set_pixel(std::vector<std::uint8_t>& mask, int res, double cy, double cx) {
  const int y = static_cast<int>(std::floor(cy));
  const int x = static_cast<int>(std::floor(cx));
  if (y >= 0 && y < res && x >= 0 && x < res) mask[static_cast<std::size_t>(y) * res + x] = 1;
}

// Marks every pixel centre within `radius` of segment (y0,x0)-(y1,x1).
void draw_capsule(std::vector<std::uint8_t>& mask, int res, double y0, double x0, double y1,
                  double x1, double radius) {
  const double dy = y1 - y0, dx = x1 - x0;
  const double len2 = dy * dy + dx * dx;
  const int ylo = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - radius - 1)));
  const int yhi = std::min(res - 1, static_cast<int>(std::ceil(std::max(y0, y1) + radius + 1)));
  const int xlo = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - radius - 1)));
  const int xhi = std::min(res - 1, static_cast<int>(std::ceil(std::max(x0, x1) + radius + 1)));
  for (int y = ylo; y <= yhi; ++y) {
    for (int x = xlo; x <= xhi; ++x) {
      const double py = y + 0.5 - y0, px = x + 0.5 - x0;
      double t = len2 > 0 ? (py * dy + px * dx) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double ey = py - t * dy, ex = px - t * dx;
      if (ey * ey + ex * ex <= radius * radius) mask[static_cast<std::size_t>(y) * res + x] = 1;
    }
  }
}

}  // namespace

std::string to_string(DefectKind k) {
  switch (k) {
    case DefectKind::blob: return "blob";
    case DefectKind::crack: return "crack";
    case DefectKind::scratch: return "scratch";
  }
  return "?";
}

std::string to_string(BackgroundKind k) {
  switch (k) {
    case BackgroundKind::stripes: return "stripes";
    case BackgroundKind::checker: return "checker";
    case BackgroundKind::noise: return "noise";
  }
  return "?";
}

DefectKind defect_kind_from_string(const std::string& s) {
  if (s == "blob") return DefectKind::blob;
  if (s == "crack") return DefectKind::crack;
  if (s == "scratch") return DefectKind::scratch;
  throw ConfigError("unknown defect kind '" + s + "' (expected blob|crack|scratch)");
}

BackgroundKind background_kind_from_string(const std::string& s) {
  if (s == "stripes") return BackgroundKind::stripes;
  if (s == "checker") return BackgroundKind::checker;
  if (s == "noise" || s == "perlin") return BackgroundKind::noise;
  throw ConfigError("unknown background kind '" + s + "' (expected stripes|checker|noise)");
}

void SyntheticSpec::validate() const {
  if (resolution < 4) throw SpecError("synthetic resolution must be at least 4");
  if (channels != 1 && channels != 3) throw SpecError("synthetic channels must be 1 or 3");
  if (n_normal < 1 || n_abnormal < 1) throw SpecError("synthetic class sizes must be at least 1");
  if (!(contrast >= 0.0 && contrast <= 1.0)) throw SpecError("defect contrast must lie in [0,1]");
  if (!(size_fraction > 0.0 && size_fraction < 0.5)) {
    throw SpecError("defect size fraction must lie in (0, 0.5)");
  }
  const double area = size_fraction * size_fraction * resolution * resolution;
  if (area < 1.0) {
    throw SpecError("defect size fraction " + std::to_string(size_fraction) +
                    " yields a mask under one pixel at resolution " + std::to_string(resolution));
  }
}

Image render_background(BackgroundKind kind, int resolution, int channels, std::uint64_t seed) {
  Rng rng(seed);
  const auto tints = channel_tints(rng, channels);
  std::vector<double> base(static_cast<std::size_t>(resolution) * resolution);
  switch (kind) {
    case BackgroundKind::stripes: {
      const double cycles = uniform(rng, 3.0, 5.0);
      const double angle = uniform(rng, 0.0, std::numbers::pi);
      const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double amp = uniform(rng, 0.2, 0.3);
      for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
          const double u = (x * std::cos(angle) + y * std::sin(angle)) / resolution;
          base[static_cast<std::size_t>(y) * resolution + x] =
              0.5 + amp * std::sin(2.0 * std::numbers::pi * cycles * u + phase);
        }
      }
      break;
    }
    case BackgroundKind::checker: {
      const int cell = std::max(1, static_cast<int>(uniform(rng, resolution / 8.0, resolution / 4.0)));
      const int oy = static_cast<int>(uniform(rng, 0, cell));
      const int ox = static_cast<int>(uniform(rng, 0, cell));
      const double lo = uniform(rng, 0.25, 0.4);
      const double hi = uniform(rng, 0.6, 0.75);
      for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
          const bool odd = (((y + oy) / cell) + ((x + ox) / cell)) % 2 == 1;
          base[static_cast<std::size_t>(y) * resolution + x] = odd ? hi : lo;
        }
      }
      break;
    }
    case BackgroundKind::noise: {
      const auto coarse = value_noise(rng, resolution, 4);
      const auto fine = value_noise(rng, resolution, 8);
      for (std::size_t i = 0; i < base.size(); ++i) base[i] = 0.2 + 0.6 * (0.65 * coarse[i] + 0.35 * fine[i]);
      break;
    }
  }
  Image img(resolution, resolution, channels);
  for (std::size_t p = 0; p < base.size(); ++p) {
    for (int c = 0; c < channels; ++c) {
      img.pixels[p * channels + c] = static_cast<float>(std::clamp(base[p] * tints[c], 0.0, 1.0));
    }
  }
  return img;
}

DefectMask render_defect_mask(DefectKind kind, int resolution, double size_fraction,
                              std::uint64_t seed) {
  Rng rng(seed);
  const double res = resolution;
  const double area = size_fraction * size_fraction * res * res;
  std::vector<std::uint8_t> m(static_cast<std::size_t>(resolution) * resolution, 0);
  switch (kind) {
    case DefectKind::blob: {
      const double ratio = uniform(rng, 0.7, 1.4);
      const double a = std::sqrt(area / (std::numbers::pi * ratio));
      const double b = a * ratio;
      const double theta = uniform(rng, 0.0, std::numbers::pi);
      const double reach = std::max(a, b) + 1.0;
      const double cy = uniform(rng, reach, std::max(reach, res - reach));
      const double cx = uniform(rng, reach, std::max(reach, res - reach));
      const double ct = std::cos(theta), st = std::sin(theta);
      for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
          const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
          const double u = dx * ct + dy * st;
          const double v = -dx * st + dy * ct;
          if ((u * u) / (a * a) + (v * v) / (b * b) <= 1.0) m[static_cast<std::size_t>(y) * resolution + x] = 1;
        }
      }
      if (std::none_of(m.begin(), m.end(), [](auto v) { return v != 0; })) set_pixel(m, resolution, cy, cx);
      break;
    }
    case DefectKind::scratch: {
      // Straight capsule of width w and length area / w, kept inside the frame.
      const double width = std::max(1.0, area / (0.6 * res));
      const double length = area / width;
      const double theta = uniform(rng, 0.0, std::numbers::pi);
      const double hy = 0.5 * length * std::sin(theta), hx = 0.5 * length * std::cos(theta);
      const double my = std::abs(hy) + width, mx = std::abs(hx) + width;
      const double cy = uniform(rng, std::min(my, res / 2), std::max(res / 2, res - my));
      const double cx = uniform(rng, std::min(mx, res / 2), std::max(res / 2, res - mx));
      draw_capsule(m, resolution, cy - hy, cx - hx, cy + hy, cx + hx, 0.5 * width);
      set_pixel(m, resolution, cy, cx);
      break;
    }
    case DefectKind::crack: {
      // Thin random walk of four jittered segments, reflected at the borders.
      const double width = std::max(1.0, area / (0.8 * res));
      const double total = area / width;
      const int segments = 4;
      const double step = total / segments;
      double y = uniform(rng, 0.25 * res, 0.75 * res);
      double x = uniform(rng, 0.25 * res, 0.75 * res);
      double heading = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      for (int s = 0; s < segments; ++s) {
        heading += uniform(rng, -0.7, 0.7);
        double ny = y + step * std::sin(heading);
        double nx = x + step * std::cos(heading);
        const double lo = 0.5 * width, hi = res - 0.5 * width;
        if (ny < lo || ny > hi) {
          heading = -heading;
          ny = std::clamp(y + step * std::sin(heading), lo, hi);
        }
        if (nx < lo || nx > hi) {
          heading = std::numbers::pi - heading;
          nx = std::clamp(x + step * std::cos(heading), lo, hi);
        }
        draw_capsule(m, resolution, y, x, ny, nx, 0.5 * width);
        y = ny;
        x = nx;
      }
      set_pixel(m, resolution, y, x);
      break;
    }
  }
  return DefectMask{resolution, resolution, std::move(m)};
}

Image inject_defect(const Image& background, const DefectMask& mask, double contrast) {
  if (mask.height != background.height || mask.width != background.width) {
    throw ShapeError("defect mask does not match background extent");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.contains(y, x)) continue;
      for (int c = 0; c < background.channels; ++c) sum += background.at(y, x, c);
      count += background.channels;
    }
  }
  const double target = (count > 0 && sum / count > 0.5) ? 0.0 : 1.0;
  Image out = background;
  if (contrast == 0.0) return out;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.contains(y, x)) continue;
      for (int c = 0; c < out.channels; ++c) {
        float& v = out.at(y, x, c);
        v = static_cast<float>(std::clamp(v + contrast * (target - v), 0.0, 1.0));
      }
    }
  }
  return out;
}

LabeledImageSet synthesize_toy_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<LabeledImage> images;
  images.reserve(static_cast<std::size_t>(spec.n_normal) + spec.n_abnormal);
  const std::string prefix = "synthetic/" + std::to_string(spec.seed) + "/";
  for (int i = 0; i < spec.n_normal; ++i) {
    const std::uint64_t bg_seed = derive_seed(spec.seed, 2 * static_cast<std::uint64_t>(i));
    LabeledImage img{render_background(spec.background, spec.resolution, spec.channels, bg_seed),
                     Label::normal, prefix + "normal/" + std::to_string(i), {}};
    img.meta.background_seed = bg_seed;
    images.push_back(std::move(img));
  }
  for (int i = 0; i < spec.n_abnormal; ++i) {
    const std::uint64_t bg_seed = derive_seed(spec.seed, 2 * static_cast<std::uint64_t>(i) + 1);
    const std::uint64_t defect_seed = derive_seed(bg_seed, 7);
    Image bg = render_background(spec.background, spec.resolution, spec.channels, bg_seed);
    DefectMask mask = render_defect_mask(spec.defect, spec.resolution, spec.size_fraction, defect_seed);
    LabeledImage img{inject_defect(bg, mask, spec.contrast), Label::abnormal,
                     prefix + "abnormal/" + std::to_string(i), {}};
    img.meta.subclass = to_string(spec.defect);
    img.meta.defect_mask = std::move(mask);
    img.meta.background_seed = bg_seed;
    images.push_back(std::move(img));
  }
  return LabeledImageSet("synthetic-" + to_string(spec.defect) + "-" + to_string(spec.background),
                         std::move(images));
}

}  // namespace cyclead
