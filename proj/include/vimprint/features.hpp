#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vimprint/grid.hpp"

namespace vimprint {

/// T frames of Wx x Wy x D features, frame-major, then row-major, channels last.
struct FeatureSequence {
  std::string video_id;
  int frames = 0;
  Extent2 spatial;
  int depth = 0;
  std::vector<float> data;
  std::optional<double> fps_meta;

  std::size_t frame_size() const { return spatial.area() * static_cast<std::size_t>(depth); }
  std::span<const float> frame(int t) const {
    return {data.data() + static_cast<std::size_t>(t) * frame_size(), frame_size()};
  }
  std::span<float> frame(int t) { return {data.data() + static_cast<std::size_t>(t) * frame_size(), frame_size()}; }
  std::span<const float> cell(int t, int x, int y) const {
    const std::size_t off = static_cast<std::size_t>(t) * frame_size() +
                            (static_cast<std::size_t>(x) * static_cast<std::size_t>(spatial.y) +
                             static_cast<std::size_t>(y)) * static_cast<std::size_t>(depth);
    return {data.data() + off, static_cast<std::size_t>(depth)};
  }

  /// Throws DomainError unless shape and data are consistent and finite.
  void validate() const;
  /// Additionally requires every entry to be >= 0 (counting-grid input).
  void validate_nonnegative() const;
};

/// Per-frame l1-normalized counts on a Sx x Sy tessellation.
struct TessellatedCounts {
  int frames = 0;
  Extent2 tess;
  int channels = 0;
  std::vector<double> cells;  // frames x Sx x Sy x Z

  std::size_t cells_per_frame() const { return tess.area(); }
  std::span<const double> cell(int t, std::size_t s) const {
    return {cells.data() + (static_cast<std::size_t>(t) * tess.area() + s) * static_cast<std::size_t>(channels),
            static_cast<std::size_t>(channels)};
  }
};

struct ManifestEntry {
  std::string video_id;
  std::filesystem::path feature_path;
  int label = -1;  // -1 marks a distractor
  bool is_query = false;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> label_names;

  /// Unique ids, labels >= -1, distractors never queries.
  void validate() const;
  const ManifestEntry* find(const std::string& video_id) const;
};

// IMPR feature files ------------------------------------------------------

FeatureSequence read_features(const std::filesystem::path& path);
void write_features(const FeatureSequence& seq, const std::filesystem::path& path);
FeatureSequence decode_features(std::span<const std::uint8_t> bytes, std::string video_id);
std::vector<std::uint8_t> encode_features(const FeatureSequence& seq);

// Manifests -----------------------------------------------------------------

/// Relative feature paths are resolved against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Resampling ----------------------------------------------------------------

/// Bilinear resize of one H x W x C map, sample centers at (i + 0.5) / S of
/// the unit square (align-corners false), edge samples clamped.
std::vector<double> bilinear_resize(std::span<const double> map, Extent2 from, int channels, Extent2 to);

/// Resample every frame to `tess` and l1-normalize each cell.
TessellatedCounts downsample_to_tessellation(const FeatureSequence& seq, Extent2 tess);

/// Resample every frame to `window` (no-op when sizes already match).
FeatureSequence resample_frames(const FeatureSequence& seq, Extent2 window);

// Synthetic data --------------------------------------------------------------

struct SynthSpec {
  int n_events = 5;
  int videos_per_event = 20;
  int frames_per_video = 40;
  int shot_pool_size = 4;
  double distractor_ratio = 0.3;  // fraction of an event video's shots taken from the shared pool
  double noise_sigma = 0.05;
  std::uint64_t seed = 1;

  int n_distractor_videos = 0;
  int n_shared_shots = 2;  // shared "anchor" shots appearing in every event
  int queries_per_event = 2;
  int shot_length = 4;  // frames per shot segment
  bool repeats = true;  // shots may recur within a video
  Extent2 frame{8, 8};
  int depth = 64;

  void validate() const;
};

struct SynthDataset {
  DatasetManifest manifest;  // feature paths are relative ("features/<id>.impr")
  std::vector<FeatureSequence> videos;
  /// Per video, per frame: event shot id (>= 0) or -(1 + k) for shared/background shot k.
  std::vector<std::vector<int>> frame_shots;
};

SynthDataset synth_event_dataset(const SynthSpec& spec);

/// One video: the first half of the frames shows one shot, the rest another.
/// Each shot's cell vectors are nonnegative mixtures of `atoms` random atoms,
/// so the noiseless signal spans at most 2 * atoms directions. Uses
/// spec.frames_per_video, frame, depth, noise_sigma and seed.
FeatureSequence synth_two_shot_video(const SynthSpec& spec, int atoms = 12);

/// Writes features/<id>.impr for every video plus manifest.json into `dir`.
void write_dataset(const SynthDataset& dataset, const std::filesystem::path& dir);

}  // namespace vimprint
