#pragma once

// Synthetic scribble-segmentation benchmark: seeded scenes of textured
// shapes, interior scribble strokes, and the drop / shrink perturbations.

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "rwss/grid.hpp"

namespace rwss {

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t classes = 4;  // class 0 is background
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  double min_radius = 12.0;
  double max_radius = 22.0;
  // Per-pixel Gaussian noise.
  double noise = 0.10;
  // Per-object colour offset around the class colour.
  double color_jitter = 0.08;
  // Amplitude of the background texture.
  double texture = 0.20;
  // Amplitude of the low-frequency shading painted inside each object.
  double object_texture = 0.0;
  // Background blobs coloured like random object classes.
  std::size_t clutter = 2;
  std::size_t max_retries = 60;
  std::size_t min_visible = 24;
};

enum class ShapeKind : std::uint8_t { ellipse, rectangle, triangle };

struct SceneObject {
  std::uint8_t class_id = 0;
  ShapeKind shape = ShapeKind::ellipse;
  std::vector<std::size_t> pixels;  // flat indices y*W + x, ascending
};

struct Scene {
  Image image;                      // H x W x 3, values in [0, 1]
  std::vector<std::uint8_t> mask;   // class id per pixel
  std::vector<SceneObject> objects;
  std::size_t classes = 0;
  // Fewer objects were placed than requested.
  bool placement_shortfall = false;
};

Scene gen_synthetic_scene(std::uint64_t seed, const SceneConfig& cfg);

// Class colour used by the generator (class 0 is the background base).
std::array<double, 3> class_color(std::size_t class_id);

struct Point {
  int y = 0;
  int x = 0;
  bool operator==(const Point&) const = default;
};

inline constexpr int kBackgroundUnit = -1;

struct Stroke {
  std::uint8_t class_id = 0;
  // Index into Scene::objects, or kBackgroundUnit.
  int unit = kBackgroundUnit;
  // 4-connected chain without repeated pixels.
  std::vector<Point> polyline;
};

struct ScribbleAnnotation {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Stroke> strokes;

  // Label per pixel, kUnlabeled (255) outside strokes.
  std::vector<std::uint8_t> labels() const;
  std::size_t pixel_count() const;
};

struct ScribbleConfig {
  // Stroke length as a multiple of sqrt(region area).
  double length_factor = 1.0;
  std::size_t min_length = 4;
  std::size_t max_length = 40;
  std::size_t background_strokes = 2;
  // Heading random-walk step (radians).
  double curvature = 0.25;
};

ScribbleAnnotation rasterize_scribbles(const Scene& scene, std::uint64_t seed,
                                       const ScribbleConfig& cfg = {});

// Deletes every stroke of an object (background is one unit) with probability `rate`.
ScribbleAnnotation apply_drop(const ScribbleAnnotation& ann, double rate, std::uint64_t seed);

// Replaces each stroke by a contiguous sub-chain of (1 - rate) of its arc
// length around a random interior anchor; rate 1 leaves the anchor pixel.
ScribbleAnnotation apply_shrink(const ScribbleAnnotation& ann, double rate, std::uint64_t seed);

// Pixel count kept by apply_shrink for a stroke of n pixels.
std::size_t shrunk_length(std::size_t n, double rate);

}  // namespace rwss
