#include "lab/shapes_world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lab/error.hpp"

namespace lab::world {

std::string_view name(Shape s) { return s == Shape::Circle ? "circle" : "square"; }

std::string_view name(Hue h) {
  switch (h) {
    case Hue::Red: return "red";
    case Hue::Green: return "green";
    case Hue::Blue: return "blue";
  }
  return "?";
}

std::string_view name(Marker m) { return m == Marker::Clean ? "clean" : "tainted"; }

std::optional<Shape> parse_shape(std::string_view word) {
  if (word == "circle") return Shape::Circle;
  if (word == "square") return Shape::Square;
  return std::nullopt;
}

std::optional<Hue> parse_hue(std::string_view word) {
  if (word == "red") return Hue::Red;
  if (word == "green") return Hue::Green;
  if (word == "blue") return Hue::Blue;
  return std::nullopt;
}

void DatasetSpec::validate() const {
  auto check_dist = [](auto const& d, const char* what) {
    for (double p : d)
      require(p >= 0.0 && std::isfinite(p), Errc::ConfigError, std::string(what) + " has a negative entry");
    const double total = std::accumulate(d.begin(), d.end(), 0.0);
    require(std::abs(total - 1.0) <= 1e-9, Errc::ConfigError, std::string(what) + " must sum to 1");
  };
  require(marker_bias >= 0.0 && marker_bias <= 1.0, Errc::ConfigError, "marker_bias must lie in [0, 1]");
  check_dist(shape_bias, "shape_bias");
  check_dist(hue_bias, "hue_bias");
}

PatchCorner patch_corner(int index) {
  const int far = kSide - kPatch;
  switch (index & 3) {
    case 0: return {0, 0};
    case 1: return {0, far};
    case 2: return {far, 0};
    default: return {far, far};
  }
}

namespace {

constexpr float kBackground = -0.8f;

std::array<float, 3> hue_color(Hue h) {
  switch (h) {
    case Hue::Red: return {0.8f, -0.8f, -0.8f};
    case Hue::Green: return {-0.8f, 0.8f, -0.8f};
    case Hue::Blue: return {-0.8f, -0.8f, 0.8f};
  }
  return {0.f, 0.f, 0.f};
}

template <std::size_t N>
int draw_categorical(Rng& rng, const std::array<double, N>& p) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding slack: return the last class with nonzero mass.
  for (std::size_t i = N; i-- > 0;)
    if (p[i] > 0.0) return static_cast<int>(i);
  return 0;
}

}  // namespace

Pixels render(const AttributeTuple& attrs, std::uint64_t jitter_seed) {
  Rng rng(mix_seed(jitter_seed));
  const double cx = kSide / 2.0 + (4.0 * uniform01(rng) - 2.0);
  const double cy = kSide / 2.0 + (4.0 * uniform01(rng) - 2.0);
  const double extent = 4.0 + 2.0 * uniform01(rng);
  const float brightness = static_cast<float>(0.2 * uniform01(rng) - 0.1);
  const PatchCorner corner = patch_corner(static_cast<int>(uniform_index(rng, 4)));

  Pixels px = Pixels::Constant(kChannels, kPixelsPerChannel, kBackground);
  const auto color = hue_color(attrs.hue);
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const bool inside = attrs.shape == Shape::Circle
                              ? dx * dx + dy * dy <= extent * extent
                              : std::abs(dx) <= extent && std::abs(dy) <= extent;
      if (!inside) continue;
      for (int c = 0; c < kChannels; ++c) px(c, y * kSide + x) = color[c] + brightness;
    }
  }
  if (attrs.marker == Marker::Tainted) {
    for (int i = 0; i < kPatch; ++i)
      for (int j = 0; j < kPatch; ++j) {
        const float v = ((i / 2 + j / 2) % 2 == 0) ? 1.0f : -1.0f;
        for (int c = 0; c < kChannels; ++c)
          px(c, (corner.row0 + i) * kSide + corner.col0 + j) = v;
      }
  }
  return px;
}

std::string caption_with_omissions(const AttributeTuple& attrs, int template_id,
                                   bool omit_hue, bool omit_shape) {
  if (template_id < 0 || template_id >= kTemplateCount)
    fail(Errc::InvalidArgument, "template id " + std::to_string(template_id) + " out of range");
  if (template_id == kTaintedTemplate && attrs.marker != Marker::Tainted)
    fail(Errc::TemplateMismatch, "tainted template requested for a clean sample");
  std::string noun;
  if (!omit_hue) noun += std::string(name(attrs.hue)) + " ";
  noun += omit_shape ? std::string("shape") : std::string(name(attrs.shape));
  switch (template_id) {
    case 0: return "a " + noun;
    case 1: return "an image of a " + noun;
    case 2: return "a tainted " + noun;
    default: return "a photo of a " + noun;
  }
}

std::string caption(const AttributeTuple& attrs, int template_id) {
  return caption_with_omissions(attrs, template_id, false, false);
}

ImageSample make_sample(const DatasetSpec& spec, std::size_t index) {
  Rng rng(derive_seed(spec.seed, index));
  ImageSample s;
  s.attrs.shape = static_cast<Shape>(draw_categorical(rng, spec.shape_bias));
  s.attrs.hue = static_cast<Hue>(draw_categorical(rng, spec.hue_bias));
  s.attrs.marker = uniform01(rng) < spec.marker_bias ? Marker::Tainted : Marker::Clean;
  if (s.attrs.marker == Marker::Tainted) {
    s.template_id = static_cast<int>(uniform_index(rng, kTemplateCount));
  } else {
    constexpr std::array<int, 3> clean_templates{0, 1, 3};
    s.template_id = clean_templates[uniform_index(rng, clean_templates.size())];
  }
  s.caption = caption(s.attrs, s.template_id);
  s.pixels = render(s.attrs, rng());
  return s;
}

std::vector<ImageSample> make_dataset(const DatasetSpec& spec) {
  spec.validate();
  std::vector<ImageSample> out;
  out.reserve(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) out.push_back(make_sample(spec, i));
  return out;
}

}  // namespace lab::world
