#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mtj/grid.hpp"
#include "mtj/imaging.hpp"

namespace mtj {

enum class Instrument { Aixplorer, Esaote, Telemed, SyntheticA, SyntheticB };
enum class Movement { MVC, PT, RUN };
enum class Muscle { MG, LG };
enum class SubjectGroup { healthy, impaired };

std::string_view to_string(Instrument v);
std::string_view to_string(Movement v);
std::string_view to_string(Muscle v);
std::string_view to_string(SubjectGroup v);
/// Parsers throw DataError on unknown names.
Instrument parse_instrument(std::string_view s);
Movement parse_movement(std::string_view s);
Muscle parse_muscle(std::string_view s);
SubjectGroup parse_subject_group(std::string_view s);

/// Side length of the network grid every label lives in.
inline constexpr int kLabelGridWidth = 256;
inline constexpr int kLabelGridHeight = 128;
inline constexpr double kSyntheticPixelSpacingMm = 0.15;

struct VideoEntry {
  std::string video_id;
  Instrument instrument = Instrument::SyntheticA;
  Movement movement = Movement::MVC;
  Muscle muscle = Muscle::MG;
  SubjectGroup subject_group = SubjectGroup::healthy;
  std::string frame_dir;  ///< relative to the manifest directory unless absolute
  double pixel_spacing_mm = kSyntheticPixelSpacingMm;
  CropSpec crop;
  int stride = 5;
  int image_width = kLabelGridWidth;  ///< post-resize grid the labels refer to
  int image_height = kLabelGridHeight;
};

struct DatasetManifest {
  int schema_version = 1;
  std::string labels;  ///< optional label CSV, relative to base_dir
  std::vector<VideoEntry> entries;
  std::filesystem::path base_dir;  ///< directory of the manifest file; not serialized

  std::filesystem::path resolve(const std::string& relative) const;
  std::filesystem::path frame_dir(const VideoEntry& entry) const { return resolve(entry.frame_dir); }
  const VideoEntry* find(std::string_view video_id) const;
};

inline constexpr int kManifestSchemaVersion = 1;

/// Parses and validates a manifest; errors name the offending entry index.
DatasetManifest parse_manifest(std::string_view json_text, std::filesystem::path base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string manifest_to_json(const DatasetManifest& manifest);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// One annotator's label for one frame; no position means the junction is not visible.
struct LabelRecord {
  std::string video_id;
  int frame_idx = 0;
  std::string annotator_id;
  std::optional<Point> position;

  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

/// Orders by (video_id, frame_idx, annotator_id).
bool label_order(const LabelRecord& a, const LabelRecord& b);

inline constexpr std::string_view kLabelsHeader = "video_id,frame_idx,annotator_id,x_px,y_px";

/// Parses label CSV text; records come back sorted.
std::vector<LabelRecord> parse_labels(std::string_view csv_text);
std::vector<LabelRecord> load_labels(const std::filesystem::path& path);
/// Canonical CSV text (header, LF endings, shortest round-trip decimals).
std::string format_labels(std::span<const LabelRecord> records);
void write_labels(const std::filesystem::path& path, std::span<const LabelRecord> records);

/// Shortest decimal that parses back to `v`, always with a fractional part.
std::string format_decimal(double v);

/// Indices {0, stride, 2*stride, ...} present in `available` (sorted output).
std::vector<int> sample_frames(std::span<const int> available, int stride);
/// Lists `frame_%06d.png` files in the entry's frame directory and samples them.
std::vector<int> sample_frames(const DatasetManifest& manifest, const VideoEntry& entry, int stride);
std::vector<int> list_frame_indices(const std::filesystem::path& frame_dir);
std::string frame_filename(int index);

/// 8-bit grayscale PNG I/O. Frames hold intensities in [0, 255].
Frame read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Grid& frame);

/// Synthetic speckle phantom with a Y-shaped junction.
struct PhantomParams {
  std::uint64_t seed = 0;
  int width = kLabelGridWidth;
  int height = kLabelGridHeight;
  double junction_x = 128.0;
  double junction_y = 64.0;
  double speckle_scale = 1.0;  ///< speckle grain radius in px; 0 disables speckle
  double contrast = 0.8;       ///< band brightness above background, (0, 1]
  double blur_radius = 0.0;    ///< Gaussian blur sigma in px applied before speckle

  void validate() const;
};

inline constexpr double kPhantomMargin = 12.0;

std::pair<Frame, LabelRecord> synth_phantom(const PhantomParams& params);
/// Pixels covered by the junction bands (1) versus background (0).
Grid phantom_band_mask(const PhantomParams& params);

/// Domain preset for synthetic instruments; junction placed randomly from `seed`.
PhantomParams phantom_preset(Instrument instrument, std::uint64_t seed, int width, int height);

}  // namespace mtj
