#include "mtj/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "mtj/rng.hpp"

namespace mtj {

namespace fs = std::filesystem;

namespace {

template <class E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<E, std::string_view>, N>& table, const char* what) {
  for (const auto& [value, name] : table)
    if (name == s) return value;
  throw DataError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

template <class E, std::size_t N>
std::string_view enum_name(E v, const std::array<std::pair<E, std::string_view>, N>& table) {
  for (const auto& [value, name] : table)
    if (value == v) return name;
  return "?";
}

constexpr std::array<std::pair<Instrument, std::string_view>, 5> kInstruments{{{Instrument::Aixplorer, "Aixplorer"},
                                                                               {Instrument::Esaote, "Esaote"},
                                                                               {Instrument::Telemed, "Telemed"},
                                                                               {Instrument::SyntheticA, "SyntheticA"},
                                                                               {Instrument::SyntheticB, "SyntheticB"}}};
constexpr std::array<std::pair<Movement, std::string_view>, 3> kMovements{
    {{Movement::MVC, "MVC"}, {Movement::PT, "PT"}, {Movement::RUN, "RUN"}}};
constexpr std::array<std::pair<Muscle, std::string_view>, 2> kMuscles{{{Muscle::MG, "MG"}, {Muscle::LG, "LG"}}};
constexpr std::array<std::pair<SubjectGroup, std::string_view>, 2> kGroups{
    {{SubjectGroup::healthy, "healthy"}, {SubjectGroup::impaired, "impaired"}}};

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw DataError("write to '" + path.string() + "' failed");
}

}  // namespace

std::string_view to_string(Instrument v) { return enum_name(v, kInstruments); }
std::string_view to_string(Movement v) { return enum_name(v, kMovements); }
std::string_view to_string(Muscle v) { return enum_name(v, kMuscles); }
std::string_view to_string(SubjectGroup v) { return enum_name(v, kGroups); }
Instrument parse_instrument(std::string_view s) { return parse_enum(s, kInstruments, "instrument"); }
Movement parse_movement(std::string_view s) { return parse_enum(s, kMovements, "movement"); }
Muscle parse_muscle(std::string_view s) { return parse_enum(s, kMuscles, "muscle"); }
SubjectGroup parse_subject_group(std::string_view s) { return parse_enum(s, kGroups, "subject group"); }

// ---------------------------------------------------------------- manifest

fs::path DatasetManifest::resolve(const std::string& relative) const {
  const fs::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

const VideoEntry* DatasetManifest::find(std::string_view video_id) const {
  for (const auto& e : entries)
    if (e.video_id == video_id) return &e;
  return nullptr;
}

DatasetManifest parse_manifest(std::string_view json_text, fs::path base_dir) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: parse failure: ") + e.what());
  }
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  try {
    m.schema_version = doc.at("schema_version").get<int>();
    if (m.schema_version != kManifestSchemaVersion)
      throw DataError("manifest: unsupported schema_version " + std::to_string(m.schema_version));
    if (doc.contains("labels")) {
      m.labels = doc.at("labels").get<std::string>();
      if (m.labels.empty()) throw DataError("manifest: label file path is empty");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  const auto entries = doc.value("entries", nlohmann::json::array());
  if (!entries.is_array()) throw DataError("manifest: 'entries' must be an array");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string where = "manifest: entry " + std::to_string(i) + ": ";
    const auto& j = entries[i];
    VideoEntry e;
    try {
      e.video_id = j.at("video_id").get<std::string>();
      e.instrument = parse_instrument(j.at("instrument").get<std::string>());
      e.movement = parse_movement(j.at("movement").get<std::string>());
      e.muscle = parse_muscle(j.at("muscle").get<std::string>());
      e.subject_group = parse_subject_group(j.at("subject_group").get<std::string>());
      e.frame_dir = j.at("frame_dir").get<std::string>();
      e.pixel_spacing_mm = j.value("pixel_spacing_mm", kSyntheticPixelSpacingMm);
      const auto& c = j.at("crop");
      e.crop = {c.at("x").get<int>(), c.at("y").get<int>(), c.at("w").get<int>(), c.at("h").get<int>()};
      e.stride = j.value("stride", 5);
      e.image_width = j.value("image_width", kLabelGridWidth);
      e.image_height = j.value("image_height", kLabelGridHeight);
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(where + ex.what());
    } catch (const DataError& ex) {
      throw DataError(where + ex.what());
    }
    if (e.video_id.empty()) throw DataError(where + "empty video_id");
    if (e.frame_dir.empty()) throw DataError(where + "empty frame_dir");
    if (!(e.pixel_spacing_mm > 0.0) || !std::isfinite(e.pixel_spacing_mm))
      throw DataError(where + "pixel_spacing_mm must be positive");
    if (e.crop.w <= 0 || e.crop.h <= 0 || e.crop.x < 0 || e.crop.y < 0) throw DataError(where + "invalid crop");
    if (!e.crop.has_two_to_one_ratio())
      throw DataError(where + "crop ratio " + std::to_string(e.crop.w) + ":" + std::to_string(e.crop.h) +
                      " is not 2:1");
    if (e.stride < 1) throw DataError(where + "stride must be >= 1");
    if (e.image_width <= 0 || e.image_height <= 0 || e.image_width > kLabelGridWidth ||
        e.image_height > kLabelGridHeight)
      throw DataError(where + "image size must lie within the 256x128 label grid");
    for (std::size_t k = 0; k < m.entries.size(); ++k)
      if (m.entries[k].video_id == e.video_id)
        throw DataError(where + "duplicate video_id '" + e.video_id + "' (first seen at entry " + std::to_string(k) +
                        ")");
    m.entries.push_back(std::move(e));
  }
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  return parse_manifest(read_text(path), path.parent_path());
}

std::string manifest_to_json(const DatasetManifest& m) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = m.schema_version;
  if (!m.labels.empty()) doc["labels"] = m.labels;
  auto& entries = doc["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"video_id", e.video_id},
                       {"instrument", to_string(e.instrument)},
                       {"movement", to_string(e.movement)},
                       {"muscle", to_string(e.muscle)},
                       {"subject_group", to_string(e.subject_group)},
                       {"frame_dir", e.frame_dir},
                       {"pixel_spacing_mm", e.pixel_spacing_mm},
                       {"crop", {{"x", e.crop.x}, {"y", e.crop.y}, {"w", e.crop.w}, {"h", e.crop.h}}},
                       {"stride", e.stride},
                       {"image_width", e.image_width},
                       {"image_height", e.image_height}});
  }
  return doc.dump(2) + "\n";
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  write_text(path, manifest_to_json(manifest));
}

// ---------------------------------------------------------------- labels

bool label_order(const LabelRecord& a, const LabelRecord& b) {
  if (a.video_id != b.video_id) return a.video_id < b.video_id;
  if (a.frame_idx != b.frame_idx) return a.frame_idx < b.frame_idx;
  return a.annotator_id < b.annotator_id;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

std::vector<LabelRecord> parse_labels(std::string_view text) {
  std::vector<LabelRecord> out;
  std::size_t pos = 0;
  int row = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++row;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.remove_suffix(1);
    if (!header_seen) {
      if (line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
      if (line != kLabelsHeader) throw DataError("labels: row 1: expected header '" + std::string(kLabelsHeader) + "'");
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const std::string where = "labels: row " + std::to_string(row) + ": ";
    const auto f = split_fields(line);
    if (f.size() != 5) throw DataError(where + "expected 5 fields, found " + std::to_string(f.size()));
    LabelRecord r;
    r.video_id = std::string(f[0]);
    if (r.video_id.empty()) throw DataError(where + "empty video_id");
    const auto idx = parse_int(f[1]);
    if (!idx || *idx < 0) throw DataError(where + "frame_idx must be a non-negative integer");
    r.frame_idx = *idx;
    r.annotator_id = std::string(f[2]);
    if (r.annotator_id.empty()) throw DataError(where + "empty annotator_id");
    if (f[3].empty() != f[4].empty()) throw DataError(where + "x_px and y_px must both be present or both empty");
    if (!f[3].empty()) {
      const auto x = parse_double(f[3]);
      const auto y = parse_double(f[4]);
      if (!x || !y) throw DataError(where + "malformed coordinate");
      if (*x < 0.0 || *x >= kLabelGridWidth) throw DataError(where + "x_px out of range [0, 256)");
      if (*y < 0.0 || *y >= kLabelGridHeight) throw DataError(where + "y_px out of range [0, 128)");
      r.position = Point{*x, *y};
    }
    out.push_back(std::move(r));
  }
  if (!header_seen) throw DataError("labels: missing header");
  std::stable_sort(out.begin(), out.end(), label_order);
  return out;
}

std::vector<LabelRecord> load_labels(const fs::path& path) { return parse_labels(read_text(path)); }

std::string format_decimal(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string format_labels(std::span<const LabelRecord> records) {
  std::string out(kLabelsHeader);
  out += '\n';
  for (const auto& r : records) {
    out += r.video_id;
    out += ',';
    out += std::to_string(r.frame_idx);
    out += ',';
    out += r.annotator_id;
    out += ',';
    if (r.position) {
      out += format_decimal(r.position->x);
      out += ',';
      out += format_decimal(r.position->y);
    } else {
      out += ',';
    }
    out += '\n';
  }
  return out;
}

void write_labels(const fs::path& path, std::span<const LabelRecord> records) {
  write_text(path, format_labels(records));
}

// ---------------------------------------------------------------- frames

std::string frame_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.png", index);
  return buf;
}

std::vector<int> list_frame_indices(const fs::path& frame_dir) {
  std::vector<int> out;
  std::error_code ec;
  if (!fs::is_directory(frame_dir, ec)) throw DataError("frame directory '" + frame_dir.string() + "' does not exist");
  for (const auto& item : fs::directory_iterator(frame_dir)) {
    const std::string name = item.path().filename().string();
    if (name.size() != 16 || !name.starts_with("frame_") || !name.ends_with(".png")) continue;
    if (auto idx = parse_int(std::string_view(name).substr(6, 6))) out.push_back(*idx);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> sample_frames(std::span<const int> available, int stride) {
  if (stride < 1) throw UsageError("sample_frames: stride must be >= 1");
  if (available.empty()) throw DataError("sample_frames: no frames available");
  std::vector<int> out;
  for (int idx : available)
    if (idx >= 0 && idx % stride == 0) out.push_back(idx);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> sample_frames(const DatasetManifest& manifest, const VideoEntry& entry, int stride) {
  if (entry.frame_dir.empty()) throw DataError("sample_frames: empty frame directory path");
  const auto available = list_frame_indices(manifest.frame_dir(entry));
  if (available.empty())
    throw DataError("sample_frames: frame directory '" + manifest.frame_dir(entry).string() + "' is empty");
  return sample_frames(available, stride);
}

Frame read_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw DataError("png: cannot read '" + path.string() + "': " + image.message);
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("png: cannot decode '" + path.string() + "': " + image.message);
  }
  Frame f(static_cast<int>(image.width), static_cast<int>(image.height));
  auto v = f.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = buffer[i];
  return f;
}

void write_png(const fs::path& path, const Grid& frame) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(frame.width());
  image.height = static_cast<png_uint_32>(frame.height());
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(frame.size());
  const auto v = frame.values();
  for (std::size_t i = 0; i < v.size(); ++i)
    buffer[i] = static_cast<png_byte>(std::clamp(std::lround(v[i]), 0L, 255L));
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr))
    throw DataError("png: cannot write '" + path.string() + "': " + image.message);
}

// ---------------------------------------------------------------- phantom

void PhantomParams::validate() const {
  if (width < 2 * kPhantomMargin + 1 || height < 2 * kPhantomMargin + 1)
    throw DataError("phantom: image too small for the junction margin");
  if (!(junction_x >= kPhantomMargin && junction_x <= width - 1 - kPhantomMargin && junction_y >= kPhantomMargin &&
        junction_y <= height - 1 - kPhantomMargin))
    throw DataError("phantom: junction lies outside the 12 px safe margin");
  if (!(speckle_scale >= 0.0) || !std::isfinite(speckle_scale)) throw DataError("phantom: speckle_scale must be >= 0");
  if (!(contrast > 0.0 && contrast <= 1.0)) throw DataError("phantom: contrast must lie in (0, 1]");
  if (!(blur_radius >= 0.0) || !std::isfinite(blur_radius)) throw DataError("phantom: blur_radius must be >= 0");
}

namespace {

struct Band {
  Point p0, p1, p2;  // quadratic Bezier control points
  double half_width;
  double gain;
};

/// Geometry of the junction: two aponeuroses converging onto one tendon.
std::vector<Band> phantom_bands(const PhantomParams& p, double scale) {
  Rng rng(p.seed, "phantom-geometry");
  const Point j{p.junction_x, p.junction_y};
  const double len = p.width * 1.2;
  const double up = rng.uniform(0.16, 0.34);    // upper arm slope
  const double down = rng.uniform(0.16, 0.34);  // lower arm slope
  const double bend_u = rng.uniform(-0.12, 0.12) * p.height;
  const double bend_d = rng.uniform(-0.12, 0.12) * p.height;
  const double tendon_slope = rng.uniform(-0.08, 0.08);
  const double tendon_bend = rng.uniform(-0.06, 0.06) * p.height;
  const double aponeurosis_w = rng.uniform(1.0, 1.8) * scale;
  const double tendon_w = rng.uniform(2.2, 3.4) * scale;
  std::vector<Band> bands;
  auto mid = [](Point a, Point b, double bend) { return Point{(a.x + b.x) / 2, (a.y + b.y) / 2 + bend}; };
  const Point upper{j.x - len, j.y - up * len};
  const Point lower{j.x - len, j.y + down * len};
  const Point tendon{j.x + len, j.y + tendon_slope * len};
  bands.push_back({upper, mid(upper, j, bend_u), j, aponeurosis_w, 1.0});
  bands.push_back({lower, mid(lower, j, bend_d), j, aponeurosis_w, 1.0});
  bands.push_back({j, mid(j, tendon, tendon_bend), tendon, tendon_w, 0.9});
  return bands;
}

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx);
  const double dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

/// Anti-aliased coverage of the union of bands at every pixel.
Grid band_coverage(const PhantomParams& p, const std::vector<Band>& bands) {
  constexpr int kSegments = 48;
  Grid out(p.width, p.height);
  for (const Band& b : bands) {
    std::vector<Point> poly(kSegments + 1);
    for (int s = 0; s <= kSegments; ++s) {
      const double t = static_cast<double>(s) / kSegments;
      const double u = 1.0 - t;
      poly[s] = {u * u * b.p0.x + 2 * u * t * b.p1.x + t * t * b.p2.x,
                 u * u * b.p0.y + 2 * u * t * b.p1.y + t * t * b.p2.y};
    }
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x) {
        const Point q{static_cast<double>(x), static_cast<double>(y)};
        double d = 1e300;
        for (int s = 0; s < kSegments; ++s) d = std::min(d, segment_distance(q, poly[s], poly[s + 1]));
        const double cover = std::clamp(b.half_width + 0.5 - d, 0.0, 1.0) * b.gain;
        out.at(x, y) = std::max(out.at(x, y), static_cast<float>(cover));
      }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

/// Separable filter with clamped borders.
void separable_filter(std::vector<double>& img, int w, int h, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * img[y * w + std::clamp(x + i, 0, w - 1)];
      tmp[y * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
      img[y * w + x] = acc;
    }
}

}  // namespace

Grid phantom_band_mask(const PhantomParams& params) {
  params.validate();
  Grid cover = band_coverage(params, phantom_bands(params, 1.0));
  for (float& v : cover.values()) v = v > 0.0f ? 1.0f : 0.0f;
  return cover;
}

std::pair<Frame, LabelRecord> synth_phantom(const PhantomParams& p) {
  p.validate();
  const int w = p.width;
  const int h = p.height;
  const Grid cover = band_coverage(p, phantom_bands(p, 1.0));

  Rng rng(p.seed, "phantom-texture");
  // Tissue background: smooth depth-dependent gain plus faint oblique fascicles
  // in the muscle region (left of the junction).
  const double base = rng.uniform(0.22, 0.32);
  const double depth_gain = rng.uniform(-0.08, 0.08);
  const double fascicle_angle = rng.uniform(0.25, 0.6);
  const double fascicle_period = rng.uniform(7.0, 11.0);
  const double fascicle_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<double> img(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = base + depth_gain * (static_cast<double>(y) / h - 0.5);
      if (x < p.junction_x) {
        const double u = x * std::sin(fascicle_angle) + y * std::cos(fascicle_angle);
        v += 0.06 * p.contrast * std::max(0.0, std::cos(2.0 * std::numbers::pi * u / fascicle_period + fascicle_phase));
      }
      v += p.contrast * cover.at(x, y);
      img[static_cast<std::size_t>(y) * w + x] = v;
    }
  if (p.blur_radius > 0.0) separable_filter(img, w, h, gaussian_kernel(p.blur_radius));

  if (p.speckle_scale > 0.0) {
    const int r = std::max(1, static_cast<int>(std::lround(p.speckle_scale)));
    std::vector<double> speckle(img.size());
    for (double& s : speckle) s = rng.exponential();
    separable_filter(speckle, w, h, std::vector<double>(static_cast<std::size_t>(2 * r + 1), 1.0 / (2 * r + 1)));
    for (std::size_t i = 0; i < img.size(); ++i) img[i] *= speckle[i];
  }

  Frame frame(w, h);
  auto v = frame.values();
  for (std::size_t i = 0; i < img.size(); ++i)
    v[i] = static_cast<float>(std::clamp(std::round(img[i] * 200.0), 0.0, 255.0));
  LabelRecord label{"", 0, "GT", Point{p.junction_x, p.junction_y}};
  return {std::move(frame), std::move(label)};
}

PhantomParams phantom_preset(Instrument instrument, std::uint64_t seed, int width, int height) {
  PhantomParams p;
  p.seed = seed;
  p.width = width;
  p.height = height;
  switch (instrument) {
    case Instrument::SyntheticA:
      p.contrast = 0.8;
      p.speckle_scale = 1.0;
      p.blur_radius = 0.0;
      break;
    case Instrument::SyntheticB:
      p.contrast = 0.3;
      p.speckle_scale = 3.0;
      p.blur_radius = 2.0;
      break;
    default:
      throw UsageError("phantom: no synthetic preset for instrument '" + std::string(to_string(instrument)) + "'");
  }
  Rng rng(seed, "phantom-placement");
  // Junction in the middle band of the image, away from the safe margin.
  p.junction_x = rng.uniform(std::max(kPhantomMargin, 0.25 * width), std::min(width - 1 - kPhantomMargin, 0.75 * width));
  p.junction_y = rng.uniform(std::max(kPhantomMargin, 0.3 * height), std::min(height - 1 - kPhantomMargin, 0.7 * height));
  return p;
}

}  // namespace mtj
