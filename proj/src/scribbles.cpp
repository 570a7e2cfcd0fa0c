#include "rwss/scribbles.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "rwss/losses.hpp"
#include "rwss/rng.hpp"

namespace rwss {

namespace {

constexpr std::array<std::array<double, 3>, 9> kPalette = {{
    {0.46, 0.46, 0.42},  // background base
    {0.78, 0.34, 0.30},
    {0.32, 0.66, 0.38},
    {0.34, 0.42, 0.80},
    {0.80, 0.74, 0.30},
    {0.70, 0.36, 0.74},
    {0.30, 0.72, 0.74},
    {0.88, 0.56, 0.24},
    {0.20, 0.20, 0.24},
}};

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

struct Geometry {
  ShapeKind kind = ShapeKind::ellipse;
  double cy = 0.0, cx = 0.0;
  double a = 0.0, b = 0.0, theta = 0.0;
  std::array<double, 6> tri{};

  bool contains(double py, double px) const {
    const double dy = py - cy, dx = px - cx;
    if (kind == ShapeKind::triangle) {
      auto edge = [&](int i, int j) {
        return (tri[2 * j + 1] - tri[2 * i + 1]) * (py - tri[2 * i]) -
               (tri[2 * j] - tri[2 * i]) * (px - tri[2 * i + 1]);
      };
      const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = c * dx + s * dy, v = -s * dx + c * dy;
    if (kind == ShapeKind::ellipse) return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    return std::abs(u) <= a && std::abs(v) <= b;
  }
};

Geometry random_geometry(Rng& rng, const SceneConfig& cfg, ShapeKind kind) {
  Geometry g;
  g.kind = kind;
  const double limit = 0.5 * static_cast<double>(std::min(cfg.height, cfg.width)) - 1.0;
  const double r = std::min(rng.uniform(cfg.min_radius, cfg.max_radius), limit);
  g.cy = rng.uniform(r, static_cast<double>(cfg.height) - r);
  g.cx = rng.uniform(r, static_cast<double>(cfg.width) - r);
  g.theta = rng.uniform(0.0, M_PI);
  switch (kind) {
    case ShapeKind::ellipse:
      g.a = r;
      g.b = r * rng.uniform(0.6, 1.0);
      break;
    case ShapeKind::rectangle:
      g.a = r * rng.uniform(0.55, 0.8);
      g.b = r * rng.uniform(0.55, 0.8);
      break;
    case ShapeKind::triangle:
      for (int k = 0; k < 3; ++k) {
        const double ang = g.theta * 2.0 + 2.0 * M_PI * k / 3.0 + rng.uniform(-0.35, 0.35);
        const double rad = r * rng.uniform(0.85, 1.0);
        g.tri[static_cast<std::size_t>(2 * k)] = g.cy + rad * std::sin(ang);
        g.tri[static_cast<std::size_t>(2 * k + 1)] = g.cx + rad * std::cos(ang);
      }
      break;
  }
  return g;
}

std::vector<std::size_t> rasterize(const Geometry& g, std::size_t h, std::size_t w) {
  std::vector<std::size_t> px;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (g.contains(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5))
        px.push_back(y * w + x);
  return px;
}

using WaveSet = std::array<std::array<double, 4>, 3>;

// A few random plane waves; channel c sums them in a rotated order.
WaveSet random_waves(Rng& rng) {
  WaveSet waves{};
  for (auto& wv : waves) {
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    const double freq = rng.uniform(0.04, 0.16);
    wv = {freq * std::cos(ang), freq * std::sin(ang), rng.uniform(0.0, 2.0 * M_PI),
          rng.uniform(0.5, 1.0)};
  }
  return waves;
}

double wave_value(const WaveSet& waves, std::size_t y, std::size_t x, std::size_t c) {
  double t = 0.0;
  for (std::size_t k = 0; k < waves.size(); ++k) {
    const auto& wv = waves[(k + c) % waves.size()];
    t += wv[3] * std::sin(2.0 * M_PI * (wv[0] * static_cast<double>(x) + wv[1] * static_cast<double>(y)) +
                          wv[2]);
  }
  return t / 3.0;
}

void paint_texture(Image& img, Rng& rng, double amplitude) {
  const auto base = kPalette[0];
  const WaveSet waves = random_waves(rng);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = base[c] + amplitude * wave_value(waves, y, x, c);
}

}  // namespace

std::array<double, 3> class_color(std::size_t class_id) {
  if (class_id < kPalette.size()) return kPalette[class_id];
  // Deterministic extra colours for large class counts.
  Rng rng(derive_seed(0xC0105ull, class_id));
  return {rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9)};
}

Scene gen_synthetic_scene(std::uint64_t seed, const SceneConfig& cfg) {
  if (cfg.classes < 2) throw std::invalid_argument("gen_synthetic_scene: need at least 2 classes");
  if (cfg.classes > 255) throw std::invalid_argument("gen_synthetic_scene: at most 255 classes");
  if (cfg.height == 0 || cfg.width == 0) throw std::invalid_argument("gen_synthetic_scene: empty image");
  if (cfg.min_objects > cfg.max_objects)
    throw std::invalid_argument("gen_synthetic_scene: min_objects > max_objects");
  if (cfg.min_radius <= 0.0 || cfg.min_radius > cfg.max_radius)
    throw std::invalid_argument("gen_synthetic_scene: bad radius range");

  Rng rng(seed);
  const std::size_t h = cfg.height, w = cfg.width, n = h * w;
  Scene scene;
  scene.classes = cfg.classes;
  scene.image = Image(h, w, 3);
  scene.mask.assign(n, 0);
  paint_texture(scene.image, rng, cfg.texture);

  // Clutter: background blobs tinted toward an object colour.
  for (std::size_t k = 0; k < cfg.clutter; ++k) {
    SceneConfig small = cfg;
    small.min_radius = std::max(1.5, 0.3 * cfg.min_radius);
    small.max_radius = std::max(small.min_radius, 0.45 * cfg.min_radius);
    const auto g = random_geometry(rng, small, ShapeKind::ellipse);
    const auto col = class_color(1 + rng.below(cfg.classes - 1));
    const double mix = rng.uniform(0.3, 0.6);
    for (auto p : rasterize(g, h, w))
      for (std::size_t c = 0; c < 3; ++c) {
        double& v = scene.image.data[p * 3 + c];
        v = (1.0 - mix) * v + mix * col[c];
      }
  }

  const std::size_t wanted =
      cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
  std::vector<char> taken(n, 0);  // object pixels dilated by one
  for (std::size_t k = 0; k < wanted; ++k) {
    const auto cls = static_cast<std::uint8_t>(1 + rng.below(cfg.classes - 1));
    const auto kind = static_cast<ShapeKind>(rng.below(3));
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      const auto px = rasterize(random_geometry(rng, cfg, kind), h, w);
      if (px.size() < cfg.min_visible) continue;
      if (std::any_of(px.begin(), px.end(), [&](std::size_t p) { return taken[p] != 0; }))
        continue;
      SceneObject obj;
      obj.class_id = cls;
      obj.shape = kind;
      obj.pixels = px;
      for (auto p : px) {
        scene.mask[p] = cls;
        const std::size_t y = p / w, x = p % w;
        for (std::size_t yy = y ? y - 1 : 0; yy <= std::min(h - 1, y + 1); ++yy)
          for (std::size_t xx = x ? x - 1 : 0; xx <= std::min(w - 1, x + 1); ++xx)
            taken[yy * w + xx] = 1;
      }
      const auto base = class_color(cls);
      std::array<double, 3> col{};
      for (std::size_t c = 0; c < 3; ++c) col[c] = base[c] + cfg.color_jitter * rng.normal();
      const WaveSet shading = cfg.object_texture > 0.0 ? random_waves(rng) : WaveSet{};
      for (auto p : px)
        for (std::size_t c = 0; c < 3; ++c)
          scene.image.data[p * 3 + c] =
              col[c] + (cfg.object_texture > 0.0 ? cfg.object_texture * wave_value(shading, p / w, p % w, c) : 0.0);
      scene.objects.push_back(std::move(obj));
      placed = true;
    }
    if (!placed) scene.placement_shortfall = true;
  }

  for (auto& v : scene.image.data) v = quantize(v + cfg.noise * rng.normal());
  return scene;
}

std::vector<std::uint8_t> ScribbleAnnotation::labels() const {
  std::vector<std::uint8_t> out(height * width, kUnlabeled);
  for (const auto& s : strokes)
    for (const auto& p : s.polyline)
      out[static_cast<std::size_t>(p.y) * width + static_cast<std::size_t>(p.x)] = s.class_id;
  return out;
}

std::size_t ScribbleAnnotation::pixel_count() const {
  const auto l = labels();
  return static_cast<std::size_t>(
      std::count_if(l.begin(), l.end(), [](std::uint8_t v) { return v != kUnlabeled; }));
}

namespace {

class StrokeWalker {
 public:
  StrokeWalker(std::size_t h, std::size_t w, std::vector<char> allowed, Rng& rng)
      : h_(h), w_(w), allowed_(std::move(allowed)), visited_(h * w, 0), rng_(rng) {}

  std::vector<Point> walk(Point start, std::size_t length, double curvature) {
    std::fill(visited_.begin(), visited_.end(), 0);
    std::vector<Point> poly{start};
    mark(start);
    double py = start.y + 0.5, px = start.x + 0.5;
    double theta = rng_.uniform(0.0, 2.0 * M_PI);
    std::size_t blocked = 0;
    for (std::size_t it = 0; poly.size() < length && it < 50 * length; ++it) {
      theta += curvature * rng_.normal();
      const double ny = py + 0.7 * std::sin(theta), nx = px + 0.7 * std::cos(theta);
      const Point last = poly.back();
      const Point p{static_cast<int>(std::floor(ny)), static_cast<int>(std::floor(nx))};
      if (p == last) {
        py = ny;
        px = nx;
        continue;
      }
      bool ok = free(p);
      Point via{-1, -1};
      if (ok && p.y != last.y && p.x != last.x) {
        const Point c1{last.y, p.x}, c2{p.y, last.x};
        if (free(c1))
          via = c1;
        else if (free(c2))
          via = c2;
        else
          ok = false;
      }
      if (!ok) {
        if (++blocked > 12) break;
        theta += (rng_.bernoulli(0.5) ? 1.0 : -1.0) * rng_.uniform(M_PI / 4.0, M_PI);
        py = last.y + 0.5;
        px = last.x + 0.5;
        continue;
      }
      blocked = 0;
      if (via.y >= 0) {
        poly.push_back(via);
        mark(via);
        if (poly.size() >= length) break;
      }
      poly.push_back(p);
      mark(p);
      py = ny;
      px = nx;
    }
    return poly;
  }

 private:
  bool free(Point p) const {
    if (p.y < 0 || p.x < 0 || p.y >= static_cast<int>(h_) || p.x >= static_cast<int>(w_))
      return false;
    const std::size_t i = static_cast<std::size_t>(p.y) * w_ + static_cast<std::size_t>(p.x);
    return allowed_[i] != 0 && visited_[i] == 0;
  }
  void mark(Point p) { visited_[static_cast<std::size_t>(p.y) * w_ + static_cast<std::size_t>(p.x)] = 1; }

  std::size_t h_, w_;
  std::vector<char> allowed_;
  std::vector<char> visited_;
  Rng& rng_;
};

// 3x3 erosion; pixels at the image border never survive.
std::vector<char> erode(const std::vector<char>& region, std::size_t h, std::size_t w) {
  std::vector<char> out(h * w, 0);
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      bool all = true;
      for (std::size_t yy = y - 1; yy <= y + 1 && all; ++yy)
        for (std::size_t xx = x - 1; xx <= x + 1 && all; ++xx) all = region[yy * w + xx] != 0;
      out[y * w + x] = all ? 1 : 0;
    }
  return out;
}

std::vector<Stroke> region_strokes(const std::vector<char>& region, std::size_t h, std::size_t w,
                                   std::uint8_t cls, int unit, std::size_t count,
                                   const ScribbleConfig& cfg, Rng& rng) {
  std::vector<std::size_t> pixels;
  for (std::size_t i = 0; i < region.size(); ++i)
    if (region[i]) pixels.push_back(i);
  if (pixels.empty()) return {};

  auto inner = erode(region, h, w);
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < inner.size(); ++i)
    if (inner[i]) starts.push_back(i);

  std::vector<Stroke> out;
  if (starts.empty()) {
    // Too thin for an interior stroke: one pixel nearest the centroid.
    double sy = 0.0, sx = 0.0;
    for (auto p : pixels) {
      sy += static_cast<double>(p / w);
      sx += static_cast<double>(p % w);
    }
    sy /= static_cast<double>(pixels.size());
    sx /= static_cast<double>(pixels.size());
    const auto best = *std::min_element(pixels.begin(), pixels.end(), [&](auto a, auto b) {
      const double da = std::hypot(static_cast<double>(a / w) - sy, static_cast<double>(a % w) - sx);
      const double db = std::hypot(static_cast<double>(b / w) - sy, static_cast<double>(b % w) - sx);
      return da < db;
    });
    out.push_back({cls, unit, {Point{static_cast<int>(best / w), static_cast<int>(best % w)}}});
    return out;
  }

  const auto length = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(cfg.length_factor * std::sqrt(static_cast<double>(pixels.size())))),
      cfg.min_length, cfg.max_length);
  StrokeWalker walker(h, w, std::move(inner), rng);
  for (std::size_t k = 0; k < count; ++k) {
    const auto s = starts[rng.below(starts.size())];
    const Point start{static_cast<int>(s / w), static_cast<int>(s % w)};
    out.push_back({cls, unit, walker.walk(start, length, cfg.curvature)});
  }
  return out;
}

void check_rate(double rate, const char* what) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw std::invalid_argument(std::string(what) + ": rate must lie in [0, 1]");
}

}  // namespace

ScribbleAnnotation rasterize_scribbles(const Scene& scene, std::uint64_t seed,
                                       const ScribbleConfig& cfg) {
  const std::size_t h = scene.image.height, w = scene.image.width;
  if (scene.mask.size() != h * w) throw ShapeError("rasterize_scribbles: mask does not match image");
  Rng rng(seed);
  ScribbleAnnotation ann;
  ann.height = h;
  ann.width = w;
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const auto& obj = scene.objects[k];
    std::vector<char> region(h * w, 0);
    for (auto p : obj.pixels) region[p] = 1;
    auto strokes = region_strokes(region, h, w, obj.class_id, static_cast<int>(k), 1, cfg, rng);
    ann.strokes.insert(ann.strokes.end(), strokes.begin(), strokes.end());
  }
  std::vector<char> bg(h * w, 0);
  for (std::size_t i = 0; i < h * w; ++i) bg[i] = scene.mask[i] == 0 ? 1 : 0;
  auto strokes = region_strokes(bg, h, w, 0, kBackgroundUnit, cfg.background_strokes, cfg, rng);
  ann.strokes.insert(ann.strokes.end(), strokes.begin(), strokes.end());
  return ann;
}

ScribbleAnnotation apply_drop(const ScribbleAnnotation& ann, double rate, std::uint64_t seed) {
  check_rate(rate, "apply_drop");
  std::set<int> units;
  for (const auto& s : ann.strokes) units.insert(s.unit);
  Rng rng(seed);
  std::set<int> dropped;
  for (int u : units)
    if (rng.bernoulli(rate)) dropped.insert(u);
  ScribbleAnnotation out{ann.height, ann.width, {}};
  for (const auto& s : ann.strokes)
    if (!dropped.count(s.unit)) out.strokes.push_back(s);
  return out;
}

std::size_t shrunk_length(std::size_t n, double rate) {
  if (n == 0) return 0;
  if (rate >= 1.0) return 1;
  return static_cast<std::size_t>(std::lround((1.0 - rate) * static_cast<double>(n - 1))) + 1;
}

ScribbleAnnotation apply_shrink(const ScribbleAnnotation& ann, double rate, std::uint64_t seed) {
  check_rate(rate, "apply_shrink");
  Rng rng(seed);
  ScribbleAnnotation out{ann.height, ann.width, {}};
  for (const auto& s : ann.strokes) {
    const std::size_t n = s.polyline.size();
    if (n == 0) continue;
    const std::size_t keep = shrunk_length(n, rate);
    // Interior anchor when the stroke has an interior.
    const std::size_t anchor = n >= 3 ? 1 + rng.below(n - 2) : rng.below(n);
    const std::size_t half = (keep - 1) / 2;
    const std::size_t first = std::min(anchor > half ? anchor - half : 0, n - keep);
    Stroke t{s.class_id, s.unit, {}};
    t.polyline.assign(s.polyline.begin() + static_cast<std::ptrdiff_t>(first),
                      s.polyline.begin() + static_cast<std::ptrdiff_t>(first + keep));
    out.strokes.push_back(std::move(t));
  }
  return out;
}

}  // namespace rwss
