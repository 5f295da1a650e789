#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "lab/error.hpp"
#include "lab/harness.hpp"

namespace lab::harness {

Context::Context(RunConfig config, fs::path out_dir, int n_threads)
    : cfg(std::move(config)), digest(cfg.digest()), out(std::move(out_dir)), threads(n_threads) {
  require(threads >= 1, Errc::ConfigError, "threads must be >= 1");
}

void Context::note(const std::string& line) const {
  if (log) log(line);
}

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string metrics_csv(std::span<const MetricRow> rows) {
  std::string out = "run_id,metric,value,n,config_digest\n";
  for (const auto& r : rows) {
    require(r.metric.find_first_of(",\n\"") == std::string::npos, Errc::InvalidArgument,
            "metric name " + r.metric + " is not CSV-safe");
    out += r.run_id + "," + r.metric + "," + format_value(r.value) + "," + std::to_string(r.n) + "," +
           r.config_digest + "\n";
  }
  return out;
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  require(r.ec == std::errc() && r.ptr == s.data() + s.size(), Errc::InvalidArgument,
          "bad number in metrics CSV: " + s);
  return v;
}

}  // namespace

std::vector<MetricRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line == "run_id,metric,value,n,config_digest",
          Errc::InvalidArgument, "metrics CSV lacks the expected header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split(line, ',');
    require(c.size() == 5, Errc::InvalidArgument, "metrics CSV row needs 5 cells: " + line);
    rows.push_back({c[0], c[1], parse_double(c[2]), std::stoll(c[3]), c[4]});
  }
  return rows;
}

void write_metrics(const fs::path& path, std::span<const MetricRow> rows) {
  fs::create_directories(path.parent_path());
  io::write_file_atomic(path, metrics_csv(rows));
}

std::string report_csv(const fs::path& metrics_dir) {
  require(fs::is_directory(metrics_dir), Errc::MissingPrerequisite,
          "no metrics directory at " + metrics_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(metrics_dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  require(!files.empty(), Errc::MissingPrerequisite, "no metric CSVs under " + metrics_dir.string());
  std::string out = "experiment,metric,value,n,run_id,config_digest\n";
  for (const auto& f : files) {
    const auto bytes = io::read_file(f);
    for (const auto& r : parse_metrics_csv(std::string(bytes.begin(), bytes.end())))
      out += f.stem().string() + "," + r.metric + "," + format_value(r.value) + "," +
             std::to_string(r.n) + "," + r.run_id + "," + r.config_digest + "\n";
  }
  return out;
}

std::uint8_t pixel_byte(float v) {
  const double x = std::clamp((static_cast<double>(v) + 1.0) * 127.5, 0.0, 255.0);
  return static_cast<std::uint8_t>(std::lround(x));
}

std::string encode_ppm(const world::Pixels& image, const std::string& config_digest) {
  require(image.rows() == world::kChannels && image.cols() == world::kPixelsPerChannel,
          Errc::ShapeMismatch, "PPM expects a 3 x 256 image");
  std::string out = "P6\n# config_digest " + config_digest + "\n" + std::to_string(world::kSide) +
                    " " + std::to_string(world::kSide) + "\n255\n";
  for (int p = 0; p < world::kPixelsPerChannel; ++p)
    for (int c = 0; c < world::kChannels; ++c) out.push_back(static_cast<char>(pixel_byte(image(c, p))));
  return out;
}

void put_meta(io::NamedTensors& t, const std::string& key, const std::string& value) {
  t.emplace_back("meta:" + key + ":" + value, io::Tensor{{0}, {}});
}

std::optional<std::string> get_meta(const io::NamedTensors& t, const std::string& key) {
  const std::string prefix = "meta:" + key + ":";
  for (const auto& [name, _] : t)
    if (name.rfind(prefix, 0) == 0) return name.substr(prefix.size());
  return std::nullopt;
}

io::NamedTensors dataset_tensors(std::span<const world::ImageSample> data) {
  io::Tensor pixels{{static_cast<std::uint32_t>(data.size()), world::kChannels * world::kPixelsPerChannel}, {}};
  io::Tensor attrs{{static_cast<std::uint32_t>(data.size()), 4}, {}};
  pixels.data.reserve(data.size() * world::kChannels * world::kPixelsPerChannel);
  for (const auto& s : data) {
    pixels.data.insert(pixels.data.end(), s.pixels.data(), s.pixels.data() + s.pixels.size());
    attrs.data.push_back(static_cast<float>(s.attrs.shape));
    attrs.data.push_back(static_cast<float>(s.attrs.hue));
    attrs.data.push_back(static_cast<float>(s.attrs.marker));
    attrs.data.push_back(static_cast<float>(s.template_id));
  }
  return {{"pixels", std::move(pixels)}, {"attrs", std::move(attrs)}};
}

std::vector<world::ImageSample> dataset_from_tensors(const io::NamedTensors& t) {
  const auto* pixels = io::find_tensor(t, "pixels");
  const auto* attrs = io::find_tensor(t, "attrs");
  require(pixels && attrs, Errc::ShapeMismatch, "dataset blob needs pixels and attrs");
  const std::size_t per = world::kChannels * world::kPixelsPerChannel;
  require(pixels->dims.size() == 2 && pixels->dims[1] == per && attrs->dims.size() == 2 &&
              attrs->dims[1] == 4 && attrs->dims[0] == pixels->dims[0],
          Errc::ShapeMismatch, "dataset blob has inconsistent dims");
  std::vector<world::ImageSample> out(pixels->dims[0]);
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& s = out[i];
    s.pixels = Eigen::Map<const Mat<float>>(pixels->data.data() + i * per, world::kChannels,
                                            world::kPixelsPerChannel);
    const float* a = attrs->data.data() + i * 4;
    auto in_range = [](float v, int n) { return v >= 0 && v < n && v == std::floor(v); };
    require(in_range(a[0], 2) && in_range(a[1], 3) && in_range(a[2], 2) &&
                in_range(a[3], world::kTemplateCount),
            Errc::InvalidArgument, "dataset attribute code out of range at row " + std::to_string(i));
    s.attrs = {static_cast<world::Shape>(a[0]), static_cast<world::Hue>(a[1]),
               static_cast<world::Marker>(a[2])};
    s.template_id = static_cast<int>(a[3]);
    s.caption = world::caption(s.attrs, s.template_id);
  }
  return out;
}

std::string dataset_manifest(std::span<const world::ImageSample> data) {
  std::string out = "index,shape,hue,marker,caption\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    out += std::to_string(i) + "," + std::string(world::name(s.attrs.shape)) + "," +
           std::string(world::name(s.attrs.hue)) + "," + std::string(world::name(s.attrs.marker)) +
           "," + s.caption + "\n";
  }
  return out;
}

io::NamedTensors model_tensors(const Model& m) {
  io::NamedTensors t;
  put_meta(t, "T", std::to_string(m.denoiser.T));
  const auto& a = m.denoiser.arch;
  put_meta(t, "arch", std::to_string(a.c1) + "x" + std::to_string(a.c2) + "x" + std::to_string(a.c3) +
                          "x" + std::to_string(a.embed));
  io::append_params(t, m.denoiser.weights, "den.");
  io::append_params(t, m.text.weights, "txt.");
  return t;
}

Model model_from_tensors(const io::NamedTensors& t) {
  Model m;
  const auto T = get_meta(t, "T");
  const auto arch = get_meta(t, "arch");
  require(T && arch, Errc::ShapeMismatch, "model checkpoint lacks T/arch metadata");
  m.denoiser.T = std::stoi(*T);
  int dims[4] = {0, 0, 0, 0};
  std::istringstream in(*arch);
  std::string part;
  for (int i = 0; i < 4; ++i) {
    require(static_cast<bool>(std::getline(in, part, 'x')), Errc::ShapeMismatch, "bad arch metadata");
    dims[i] = std::stoi(part);
  }
  m.denoiser.arch = {dims[0], dims[1], dims[2], dims[3]};
  m.denoiser.weights = io::extract_params(t, "den.");
  m.text.weights = io::extract_params(t, "txt.");
  m.denoiser.validate();
  m.text.validate();
  return m;
}

io::NamedTensors vector_tensors(const anchoring::DirectionVector& d) {
  d.validate();
  io::NamedTensors t;
  put_meta(t, "kind", std::string(anchoring::name(d.kind)));
  put_meta(t, "concept", d.meta.concept_label);
  put_meta(t, "mode", std::string(anchoring::name(d.meta.mode)));
  put_meta(t, "w", format_value(d.meta.w));
  put_meta(t, "config_digest", d.meta.config_digest);
  io::append_params(t, d.params, "vec.");
  return t;
}

anchoring::DirectionVector vector_from_tensors(const io::NamedTensors& t) {
  const auto kind = get_meta(t, "kind");
  require(kind.has_value(), Errc::ShapeMismatch, "vector checkpoint lacks kind metadata");
  anchoring::DirectionVector d;
  d.kind = anchoring::parse_vector_kind(*kind);
  d.params = io::extract_params(t, "vec.");
  d.meta.concept_label = get_meta(t, "concept").value_or("");
  if (auto m = get_meta(t, "mode")) d.meta.mode = anchoring::parse_target_mode(*m);
  if (auto w = get_meta(t, "w")) d.meta.w = parse_double(*w);
  d.meta.config_digest = get_meta(t, "config_digest").value_or("");
  d.validate();
  return d;
}

io::NamedTensors oracle_tensors(const eval::OracleParams& o) {
  io::NamedTensors t;
  io::append_params(t, o.weights, "oracle.");
  return t;
}

eval::OracleParams oracle_from_tensors(const io::NamedTensors& t) {
  eval::OracleParams o;
  o.weights = io::extract_params(t, "oracle.");
  o.validate();
  return o;
}

}  // namespace lab::harness
