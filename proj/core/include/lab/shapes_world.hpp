#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lab/rng.hpp"

namespace lab::world {

inline constexpr int kSide = 16;
inline constexpr int kChannels = 3;
inline constexpr int kPixelsPerChannel = kSide * kSide;
inline constexpr int kPatch = 4;
inline constexpr int kTemplateCount = 4;
inline constexpr int kTaintedTemplate = 2;

enum class Shape : int { Circle = 0, Square = 1 };
enum class Hue : int { Red = 0, Green = 1, Blue = 2 };
enum class Marker : int { Clean = 0, Tainted = 1 };

inline constexpr std::array kShapes{Shape::Circle, Shape::Square};
inline constexpr std::array kHues{Hue::Red, Hue::Green, Hue::Blue};

std::string_view name(Shape s);
std::string_view name(Hue h);
std::string_view name(Marker m);
std::optional<Shape> parse_shape(std::string_view word);
std::optional<Hue> parse_hue(std::string_view word);

struct AttributeTuple {
  Shape shape = Shape::Circle;
  Hue hue = Hue::Red;
  Marker marker = Marker::Clean;
  bool operator==(const AttributeTuple&) const = default;
};

/// Channel-major image: 3 x 256, row c holds channel c in raster order.
using Pixels = Mat<float>;

struct ImageSample {
  Pixels pixels;
  AttributeTuple attrs;
  int template_id = 0;
  std::string caption;
};

struct DatasetSpec {
  std::size_t n_samples = 0;
  double marker_bias = 0.5;
  std::array<double, 2> shape_bias{0.5, 0.5};
  std::array<double, 3> hue_bias{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Where the marker patch goes; index 0..3 = top-left, top-right,
/// bottom-left, bottom-right.
struct PatchCorner {
  int row0 = 0;
  int col0 = 0;
};
PatchCorner patch_corner(int index);

/// Filled shape of the given hue on a dark background. Jitter covers the
/// centre (+-2 px), half-extent (4..6 px), brightness (+-0.1) and the patch
/// corner; tainted images get a 4x4 checkerboard (2 px cells) stamped there.
Pixels render(const AttributeTuple& attrs, std::uint64_t jitter_seed);

/// Templates: 0 "a <hue> <shape>", 1 "an image of a <hue> <shape>",
/// 2 "a tainted <hue> <shape>" (tainted only), 3 "a photo of a <hue> <shape>".
std::string caption(const AttributeTuple& attrs, int template_id);

/// Caption with attribute words omitted: the hue word dropped and/or the shape
/// noun replaced by the generic "shape". Omitting neither equals caption().
std::string caption_with_omissions(const AttributeTuple& attrs, int template_id,
                                   bool omit_hue, bool omit_shape);

std::vector<ImageSample> make_dataset(const DatasetSpec& spec);

/// Draws the attributes and template for sample `index` of a dataset.
ImageSample make_sample(const DatasetSpec& spec, std::size_t index);

}  // namespace lab::world
