#include <algorithm>
#include <cmath>
#include <numbers>

#include "swiden/data.hpp"

namespace swiden {

namespace {

using std::numbers::pi;

struct Vec2 {
  double x, y;
};

/// A closed boundary piece: either a polygon or an exact circle.
struct Contour {
  std::vector<Vec2> poly;
  bool is_circle = false;
  Vec2 center{0, 0};
  double radius = 0;
};

/// Shape in local units (extent roughly the unit disc). Inside test is even-odd
/// over all contours; the boundary is the union of contour edges.
struct ShapeGeom {
  std::vector<Contour> contours;
};

Contour circle(Vec2 c, double r) {
  Contour k;
  k.is_circle = true;
  k.center = c;
  k.radius = r;
  return k;
}

Contour regular(int n, double r, double phase) {
  Contour k;
  for (int i = 0; i < n; ++i) {
    const double a = phase + 2 * pi * i / n;
    k.poly.push_back({r * std::cos(a), r * std::sin(a)});
  }
  return k;
}

ShapeGeom make_shape(std::size_t kind) {
  ShapeGeom g;
  switch (kind) {
    case 0:  // circle
      g.contours.push_back(circle({0, 0}, 1.0));
      break;
    case 1:  // square
      g.contours.push_back({{{-0.8, -0.8}, {0.8, -0.8}, {0.8, 0.8}, {-0.8, 0.8}}});
      break;
    case 2:  // triangle
      g.contours.push_back(regular(3, 1.0, -pi / 2));
      break;
    case 3: {  // star
      Contour k;
      for (int i = 0; i < 10; ++i) {
        const double r = i % 2 == 0 ? 1.0 : 0.42;
        const double a = -pi / 2 + pi * i / 5;
        k.poly.push_back({r * std::cos(a), r * std::sin(a)});
      }
      g.contours.push_back(std::move(k));
      break;
    }
    case 4: {  // cross
      const double a = 0.3, b = 1.0;
      g.contours.push_back({{{-a, -b}, {a, -b}, {a, -a}, {b, -a}, {b, a}, {a, a},
                             {a, b}, {-a, b}, {-a, a}, {-b, a}, {-b, -a}, {-a, -a}}});
      break;
    }
    case 5:  // ring
      g.contours.push_back(circle({0, 0}, 1.0));
      g.contours.push_back(circle({0, 0}, 0.6));
      break;
    case 6: {  // crescent: unit disc minus a disc of radius 0.8 centred at (0.45, 0)
      const double d = 0.45, r2 = 0.8;
      const double ix = (1 + d * d - r2 * r2) / (2 * d);
      const double iy = std::sqrt(1 - ix * ix);
      const double a0 = std::atan2(iy, ix);
      const double p0 = std::atan2(iy, ix - d);
      Contour k;
      const int n = 40;
      for (int i = 0; i <= n; ++i) {
        const double a = a0 + (2 * pi - 2 * a0) * i / n;
        k.poly.push_back({std::cos(a), std::sin(a)});
      }
      for (int i = 1; i < n; ++i) {
        const double a = -p0 - (2 * pi - 2 * p0) * i / n;
        k.poly.push_back({d + r2 * std::cos(a), r2 * std::sin(a)});
      }
      g.contours.push_back(std::move(k));
      break;
    }
    case 7:  // arrow
      g.contours.push_back(
          {{{-1, -0.25}, {0.15, -0.25}, {0.15, -0.65}, {1, 0}, {0.15, 0.65}, {0.15, 0.25}, {-1, 0.25}}});
      break;
    case 8: {  // heart
      Contour k;
      const int n = 64;
      for (int i = 0; i < n; ++i) {
        const double t = 2 * pi * i / n;
        const double s = std::sin(t);
        const double x = 16 * s * s * s;
        const double y = 13 * std::cos(t) - 5 * std::cos(2 * t) - 2 * std::cos(3 * t) - std::cos(4 * t);
        k.poly.push_back({x / 17.0, -(y + 2.5) / 17.0});
      }
      g.contours.push_back(std::move(k));
      break;
    }
    case 9:  // hexagon
      g.contours.push_back(regular(6, 1.0, 0));
      break;
    default:
      throw ConfigError("no shape generator for class " + std::to_string(kind));
  }
  return g;
}

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = p.x - a.x, wy = p.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? (wx * vx + wy * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = wx - t * vx, dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

/// Signed distance in local units: positive inside.
double signed_distance(const ShapeGeom& g, Vec2 p) {
  bool inside = false;
  double dist = 1e30;
  for (const auto& k : g.contours) {
    if (k.is_circle) {
      const double r = std::hypot(p.x - k.center.x, p.y - k.center.y);
      if (r < k.radius) inside = !inside;
      dist = std::min(dist, std::abs(r - k.radius));
      continue;
    }
    const std::size_t n = k.poly.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Vec2 a = k.poly[i], b = k.poly[j];
      if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) inside = !inside;
      dist = std::min(dist, segment_distance(p, a, b));
    }
  }
  return inside ? dist : -dist;
}

struct Placement {
  double cx, cy, radius, theta;
};

BBox clamp_box(double x0, double y0, double x1, double y1, std::size_t res) {
  const double lim = static_cast<double>(res);
  x0 = std::clamp(x0, 0.0, lim);
  y0 = std::clamp(y0, 0.0, lim);
  x1 = std::clamp(x1, 0.0, lim);
  y1 = std::clamp(y1, 0.0, lim);
  const int ix = static_cast<int>(std::floor(x0)), iy = static_cast<int>(std::floor(y0));
  return {ix, iy, static_cast<int>(std::ceil(x1)) - ix, static_cast<int>(std::ceil(y1)) - iy};
}

BBox placed_bbox(const ShapeGeom& g, const Placement& pl, std::size_t res) {
  double x0 = 1e30, y0 = 1e30, x1 = -1e30, y1 = -1e30;
  const double c = std::cos(pl.theta), s = std::sin(pl.theta);
  for (const auto& k : g.contours) {
    if (k.is_circle) {
      const double ccx = pl.cx + pl.radius * (c * k.center.x - s * k.center.y);
      const double ccy = pl.cy + pl.radius * (s * k.center.x + c * k.center.y);
      const double r = pl.radius * k.radius;
      x0 = std::min(x0, ccx - r);
      y0 = std::min(y0, ccy - r);
      x1 = std::max(x1, ccx + r);
      y1 = std::max(y1, ccy + r);
      continue;
    }
    for (const auto& v : k.poly) {
      const double px = pl.cx + pl.radius * (c * v.x - s * v.y);
      const double py = pl.cy + pl.radius * (s * v.x + c * v.y);
      x0 = std::min(x0, px);
      y0 = std::min(y0, py);
      x1 = std::max(x1, px);
      y1 = std::max(y1, py);
    }
  }
  return clamp_box(x0, y0, x1, y1, res);
}

LabeledImage render(std::size_t kind, std::size_t style, std::size_t res, double max_rotation, Rng& rng) {
  const ShapeGeom geom = make_shape(kind);
  const double half = static_cast<double>(res) / 2.0;
  const double jitter = static_cast<double>(res) / 12.0;
  Placement pl;
  pl.radius = rng.uniform(0.24, 0.34) * static_cast<double>(res);
  pl.cx = half + rng.uniform(-jitter, jitter);
  pl.cy = half + rng.uniform(-jitter, jitter);
  pl.theta = rng.uniform(-max_rotation, max_rotation);
  const double c = std::cos(pl.theta), s = std::sin(pl.theta);

  Tensor img({3, res, res});
  const std::size_t plane = res * res;

  auto local = [&](std::size_t x, std::size_t y) {
    const double dx = (static_cast<double>(x) + 0.5 - pl.cx) / pl.radius;
    const double dy = (static_cast<double>(y) + 0.5 - pl.cy) / pl.radius;
    return Vec2{c * dx + s * dy, -s * dx + c * dy};
  };

  if (style == kPhotoStyle) {
    std::array<double, 3> bg1, bg2, fill;
    for (auto& v : bg1) v = rng.uniform(0.05, 0.4);
    for (auto& v : bg2) v = rng.uniform(0.05, 0.4);
    for (auto& v : fill) v = rng.uniform(0.55, 1.0);
    const double fx = rng.uniform(0.05, 0.25), fy = rng.uniform(0.05, 0.25), ph = rng.uniform(0.0, 2 * pi);
    const double fx2 = rng.uniform(0.1, 0.45), fy2 = rng.uniform(0.1, 0.45);
    const double light_x = rng.uniform(-0.4, 0.4), light_y = rng.uniform(-0.4, 0.4);
    const double noise = 0.04;
    for (std::size_t y = 0; y < res; ++y)
      for (std::size_t x = 0; x < res; ++x) {
        const double xd = static_cast<double>(x), yd = static_cast<double>(y);
        const double t = 0.5 + 0.15 * std::sin(fx * xd + fy * yd + ph) + 0.1 * std::sin(fx2 * xd - fy2 * yd);
        const Vec2 q = local(x, y);
        const double coverage = std::clamp(0.5 + signed_distance(geom, q) * pl.radius, 0.0, 1.0);
        const double shade = std::clamp(1.0 - 0.5 * std::hypot(q.x - light_x, q.y - light_y), 0.35, 1.0);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double bg = bg1[ch] * (1 - t) + bg2[ch] * t;
          const double v = bg * (1 - coverage) + fill[ch] * shade * coverage + noise * rng.normal();
          img[ch * plane + y * res + x] = std::clamp(v, 0.0, 1.0);
        }
      }
  } else {
    const double paper = rng.uniform(0.9, 1.0);
    std::array<double, 3> bg, ink;
    for (auto& v : bg) v = std::clamp(paper + rng.uniform(-0.03, 0.03), 0.0, 1.0);
    for (auto& v : ink) v = rng.uniform(0.0, 0.35);
    const double width = rng.uniform(1.0, 3.0);
    const double wobble = rng.uniform(0.0, 0.8);
    const double freq = static_cast<double>(3 + rng.index(5));
    const double ph = rng.uniform(0.0, 2 * pi);
    for (std::size_t y = 0; y < res; ++y)
      for (std::size_t x = 0; x < res; ++x) {
        const Vec2 q = local(x, y);
        const double d = signed_distance(geom, q) * pl.radius + wobble * std::sin(freq * std::atan2(q.y, q.x) + ph);
        const double ink_cov = std::clamp(width / 2 + 0.5 - std::abs(d), 0.0, 1.0);
        for (std::size_t ch = 0; ch < 3; ++ch)
          img[ch * plane + y * res + x] = std::clamp(bg[ch] * (1 - ink_cov) + ink[ch] * ink_cov, 0.0, 1.0);
      }
  }
  return {std::move(img), kind, style, placed_bbox(geom, pl, res)};
}

}  // namespace

const std::vector<std::string>& synthetic_shape_names() {
  static const std::vector<std::string> names{"circle", "square", "triangle", "star",  "cross",
                                              "ring",   "crescent", "arrow", "heart", "hexagon"};
  return names;
}

BBox circle_bbox(double cx, double cy, double r) {
  const int x = static_cast<int>(std::floor(cx - r)), y = static_cast<int>(std::floor(cy - r));
  return {x, y, static_cast<int>(std::ceil(cx + r)) - x, static_cast<int>(std::ceil(cy + r)) - y};
}

Dataset gen_synthetic(const SyntheticConfig& cfg) {
  const auto& names = synthetic_shape_names();
  if (cfg.num_classes == 0 || cfg.num_classes > names.size())
    throw ConfigError("num_classes must be in [1, " + std::to_string(names.size()) + "], got " +
                      std::to_string(cfg.num_classes));
  if (cfg.per_class_per_style == 0) throw ConfigError("per_class_per_style must be >= 1");
  if (cfg.resolution < 16) throw ConfigError("resolution must be >= 16");
  if (!(cfg.max_rotation >= 0.0)) throw ConfigError("max_rotation must be >= 0");
  Dataset ds;
  ds.num_styles = 2;
  ds.class_names.assign(names.begin(), names.begin() + static_cast<long>(cfg.num_classes));
  ds.images.reserve(cfg.num_classes * 2 * cfg.per_class_per_style);
  for (std::size_t c = 0; c < cfg.num_classes; ++c)
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t i = 0; i < cfg.per_class_per_style; ++i) {
        Rng rng(derive_seed(cfg.seed, (c * 2 + s) * 1000003ULL + i));
        ds.images.push_back(render(c, s, cfg.resolution, cfg.max_rotation, rng));
      }
  return ds;
}

std::vector<double> luminance(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("luminance expects [3,H,W]");
  const std::size_t plane = rgb.dim(1) * rgb.dim(2);
  std::vector<double> out(plane);
  for (std::size_t i = 0; i < plane; ++i)
    out[i] = 0.299 * rgb[i] + 0.587 * rgb[plane + i] + 0.114 * rgb[2 * plane + i];
  return out;
}

double bright_fraction(const Tensor& rgb, double threshold) {
  const auto lum = luminance(rgb);
  const auto n = std::count_if(lum.begin(), lum.end(), [&](double v) { return v > threshold; });
  return static_cast<double>(n) / static_cast<double>(lum.size());
}

}  // namespace swiden
