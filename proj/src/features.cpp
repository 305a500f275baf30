#include "vimprint/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <unordered_set>

#include "json.hpp"

#include "vimprint/binary_io.hpp"
#include "vimprint/errors.hpp"
#include "vimprint/numerics.hpp"

namespace vimprint {

namespace fs = std::filesystem;

void FeatureSequence::validate() const {
  if (frames < 1) throw DomainError("features: sequence " + video_id + " has no frames");
  if (spatial.x < 1 || spatial.y < 1 || depth < 1) throw DomainError("features: sequence " + video_id + " has an empty frame shape");
  if (data.size() != static_cast<std::size_t>(frames) * frame_size())
    throw DomainError("features: sequence " + video_id + " payload does not match its shape");
  for (float v : data)
    if (!std::isfinite(v)) throw DomainError("features: sequence " + video_id + " has non-finite entries");
}

void FeatureSequence::validate_nonnegative() const {
  validate();
  for (float v : data)
    if (v < 0.0f) throw DomainError("features: counting-grid input " + video_id + " has negative entries");
}

void DatasetManifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& e : entries) {
    if (e.video_id.empty()) throw ConfigError("features: manifest entry without video_id");
    if (!seen.insert(e.video_id).second) throw ConfigError("features: duplicate video_id " + e.video_id);
    if (e.label < -1) throw ConfigError("features: label below -1 for " + e.video_id);
    if (e.is_query && e.label < 0) throw ConfigError("features: distractor " + e.video_id + " marked as query");
  }
}

const ManifestEntry* DatasetManifest::find(const std::string& video_id) const {
  for (const auto& e : entries)
    if (e.video_id == video_id) return &e;
  return nullptr;
}

// IMPR ------------------------------------------------------------------------

std::vector<std::uint8_t> encode_features(const FeatureSequence& seq) {
  seq.validate();
  io::ByteWriter w;
  w.magic("IMPR");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(seq.frames));
  w.u32(static_cast<std::uint32_t>(seq.spatial.x));
  w.u32(static_cast<std::uint32_t>(seq.spatial.y));
  w.u32(static_cast<std::uint32_t>(seq.depth));
  w.f32s(std::span<const float>(seq.data));
  return w.bytes();
}

FeatureSequence decode_features(std::span<const std::uint8_t> bytes, std::string video_id) {
  io::ByteReader r(bytes, "features: " + video_id);
  r.expect_magic("IMPR");
  r.expect_version(1);
  const std::uint32_t t = r.u32(), wx = r.u32(), wy = r.u32(), d = r.u32();
  if (t == 0 || wx == 0 || wy == 0 || d == 0)
    throw ParseError(ParseFailure::kMalformed, r.context() + ": zero-sized dimension");
  // float32 payload must also fit in a size_t byte count.
  const std::size_t count = io::checked_volume({t, wx, wy, d}, r.context(), std::uint64_t{1} << 40);
  r.need(count * 4);

  FeatureSequence seq;
  seq.video_id = std::move(video_id);
  seq.frames = static_cast<int>(t);
  seq.spatial = {static_cast<int>(wx), static_cast<int>(wy)};
  seq.depth = static_cast<int>(d);
  seq.data.resize(count);
  r.f32s(std::span<float>(seq.data));
  r.expect_end();
  return seq;
}

FeatureSequence read_features(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return decode_features(bytes, path.stem().string());
}

void write_features(const FeatureSequence& seq, const fs::path& path) {
  io::write_file(path, encode_features(seq));
}

// Manifest ----------------------------------------------------------------------

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("features: cannot open manifest " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseFailure::kMalformed, "features: manifest " + path.string() + ": " + e.what());
  }

  DatasetManifest m;
  const nlohmann::json* list = &doc;
  if (doc.is_object()) {
    if (doc.contains("label_names")) m.label_names = doc.at("label_names").get<std::vector<std::string>>();
    if (!doc.contains("entries")) throw ParseError(ParseFailure::kMalformed, "features: manifest has no entries");
    list = &doc.at("entries");
  }
  if (!list->is_array()) throw ParseError(ParseFailure::kMalformed, "features: manifest entries must be an array");
  const fs::path base = path.parent_path();
  try {
    for (const auto& item : *list) {
      ManifestEntry e;
      e.video_id = item.at("video_id").get<std::string>();
      fs::path p = item.at("path").get<std::string>();
      e.feature_path = p.is_absolute() ? p : base / p;
      e.label = item.at("label").get<int>();
      e.is_query = item.value("is_query", false);
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseFailure::kMalformed, std::string("features: manifest entry: ") + e.what());
  }
  m.validate();
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  manifest.validate();
  nlohmann::json doc;
  doc["label_names"] = manifest.label_names;
  doc["entries"] = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    doc["entries"].push_back(
        {{"video_id", e.video_id}, {"path", e.feature_path.generic_string()}, {"label", e.label}, {"is_query", e.is_query}});
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("features: cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
}

// Resampling ----------------------------------------------------------------------

namespace {

struct Tap {
  int lo;
  int hi;
  double w;  // weight of hi
};

std::vector<Tap> linear_taps(int from, int to) {
  std::vector<Tap> taps(static_cast<std::size_t>(to));
  const double scale = static_cast<double>(from) / static_cast<double>(to);
  for (int o = 0; o < to; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(from - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, from - 1);
    taps[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace

std::vector<double> bilinear_resize(std::span<const double> map, Extent2 from, int channels, Extent2 to) {
  const auto c = static_cast<std::size_t>(channels);
  if (map.size() != from.area() * c) throw DomainError("features: resize input size mismatch");
  if (to.x < 1 || to.y < 1) throw DomainError("features: resize target must be non-empty");
  const auto tx = linear_taps(from.x, to.x);
  const auto ty = linear_taps(from.y, to.y);
  std::vector<double> out(to.area() * c);
  auto at = [&](int x, int y) {
    return map.data() + (static_cast<std::size_t>(x) * static_cast<std::size_t>(from.y) + static_cast<std::size_t>(y)) * c;
  };
  for (int ox = 0; ox < to.x; ++ox) {
    const Tap& a = tx[static_cast<std::size_t>(ox)];
    for (int oy = 0; oy < to.y; ++oy) {
      const Tap& b = ty[static_cast<std::size_t>(oy)];
      const double w00 = (1 - a.w) * (1 - b.w), w01 = (1 - a.w) * b.w, w10 = a.w * (1 - b.w), w11 = a.w * b.w;
      const double *p00 = at(a.lo, b.lo), *p01 = at(a.lo, b.hi), *p10 = at(a.hi, b.lo), *p11 = at(a.hi, b.hi);
      double* dst = out.data() + (static_cast<std::size_t>(ox) * static_cast<std::size_t>(to.y) + static_cast<std::size_t>(oy)) * c;
      for (std::size_t z = 0; z < c; ++z) dst[z] = w00 * p00[z] + w01 * p01[z] + w10 * p10[z] + w11 * p11[z];
    }
  }
  return out;
}

TessellatedCounts downsample_to_tessellation(const FeatureSequence& seq, Extent2 tess) {
  seq.validate_nonnegative();
  if (tess.x < 1 || tess.y < 1 || tess.x > seq.spatial.x || tess.y > seq.spatial.y)
    throw ConfigError("features: tessellation must be between 1x1 and the frame size");
  TessellatedCounts out;
  out.frames = seq.frames;
  out.tess = tess;
  out.channels = seq.depth;
  out.cells.resize(static_cast<std::size_t>(seq.frames) * tess.area() * static_cast<std::size_t>(seq.depth));
  const auto z = static_cast<std::size_t>(seq.depth);
  for (int t = 0; t < seq.frames; ++t) {
    auto f = seq.frame(t);
    std::vector<double> frame(f.begin(), f.end());
    auto resized = bilinear_resize(frame, seq.spatial, seq.depth, tess);
    for (std::size_t s = 0; s < tess.area(); ++s) {
      auto cell = numerics::l1_normalize(std::span<const double>(resized.data() + s * z, z));
      std::copy(cell.begin(), cell.end(), out.cells.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(t) * tess.area() + s) * z));
    }
  }
  return out;
}

FeatureSequence resample_frames(const FeatureSequence& seq, Extent2 window) {
  seq.validate();
  if (seq.spatial == window) return seq;
  FeatureSequence out = seq;
  out.spatial = window;
  out.data.assign(static_cast<std::size_t>(seq.frames) * window.area() * static_cast<std::size_t>(seq.depth), 0.0f);
  for (int t = 0; t < seq.frames; ++t) {
    auto f = seq.frame(t);
    std::vector<double> frame(f.begin(), f.end());
    auto resized = bilinear_resize(frame, seq.spatial, seq.depth, window);
    std::transform(resized.begin(), resized.end(), out.frame(t).begin(), [](double v) { return static_cast<float>(v); });
  }
  return out;
}

// Synthetic generator ---------------------------------------------------------------

void SynthSpec::validate() const {
  if (n_events < 1 || videos_per_event < 1 || frames_per_video < 1 || shot_pool_size < 1)
    throw ConfigError("features: synth counts must be >= 1");
  if (!(noise_sigma >= 0.0)) throw ConfigError("features: synth noise_sigma must be >= 0");
  if (!(distractor_ratio >= 0.0 && distractor_ratio <= 1.0)) throw ConfigError("features: synth distractor_ratio must be in [0, 1]");
  if (n_distractor_videos < 0 || n_shared_shots < 1 || shot_length < 1) throw ConfigError("features: synth shot settings must be positive");
  if (queries_per_event < 0 || queries_per_event > videos_per_event) throw ConfigError("features: synth queries_per_event out of range");
  if (frame.x < 1 || frame.y < 1) throw ConfigError("features: synth frame extent must be positive");
  if (depth < n_events + 1) throw ConfigError("features: synth depth must be at least n_events + 1");
}

namespace {

using Prototype = std::vector<float>;

/// Rectified Gaussian values on channels [lo, hi), zero elsewhere.
Prototype make_prototype(std::mt19937_64& rng, const SynthSpec& spec, int lo, int hi) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Prototype p(spec.frame.area() * static_cast<std::size_t>(spec.depth), 0.0f);
  for (std::size_t cell = 0; cell < spec.frame.area(); ++cell) {
    for (int c = lo; c < hi; ++c) p[cell * static_cast<std::size_t>(spec.depth) + static_cast<std::size_t>(c)] = static_cast<float>(std::max(0.0, normal(rng)));
  }
  return p;
}

struct Segment {
  int shot;  // event shot id >= 0, or -(1 + k) for shared/background k
  const Prototype* proto;
};

FeatureSequence render_video(std::mt19937_64& rng, const SynthSpec& spec, std::string id, const std::vector<Segment>& segments,
                             std::vector<int>& frame_shots) {
  std::normal_distribution<double> noise(0.0, 1.0);
  FeatureSequence seq;
  seq.video_id = std::move(id);
  seq.frames = spec.frames_per_video;
  seq.spatial = spec.frame;
  seq.depth = spec.depth;
  seq.data.resize(static_cast<std::size_t>(seq.frames) * seq.frame_size());
  frame_shots.assign(static_cast<std::size_t>(seq.frames), 0);
  for (int t = 0; t < seq.frames; ++t) {
    const Segment& seg = segments[static_cast<std::size_t>(t / spec.shot_length)];
    frame_shots[static_cast<std::size_t>(t)] = seg.shot;
    auto dst = seq.frame(t);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      double v = (*seg.proto)[i];
      if (spec.noise_sigma > 0.0) v = std::max(0.0, v + spec.noise_sigma * noise(rng));
      dst[i] = static_cast<float>(v);
    }
  }
  return seq;
}

void group_repeated_shots(std::vector<Segment>& segments) {
  std::stable_sort(segments.begin(), segments.end(), [](const Segment& a, const Segment& b) { return a.shot < b.shot; });
}

}  // namespace

SynthDataset synth_event_dataset(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const int block = spec.depth / (spec.n_events + 1);
  const int shared_lo = spec.n_events * block;

  std::vector<std::vector<Prototype>> event_shots(static_cast<std::size_t>(spec.n_events));
  for (int e = 0; e < spec.n_events; ++e)
    for (int s = 0; s < spec.shot_pool_size; ++s)
      event_shots[static_cast<std::size_t>(e)].push_back(make_prototype(rng, spec, e * block, (e + 1) * block));
  std::vector<Prototype> shared_shots;
  for (int s = 0; s < spec.n_shared_shots; ++s) shared_shots.push_back(make_prototype(rng, spec, shared_lo, spec.depth));

  SynthDataset out;
  for (int e = 0; e < spec.n_events; ++e) out.manifest.label_names.push_back("event_" + std::to_string(e));

  const int n_segments = (spec.frames_per_video + spec.shot_length - 1) / spec.shot_length;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_event_shot(0, spec.shot_pool_size - 1);
  std::uniform_int_distribution<int> pick_shared(0, spec.n_shared_shots - 1);
  std::uniform_int_distribution<int> pick_segment(0, n_segments - 1);

  auto shared_segment = [&]() {
    const int k = pick_shared(rng);
    return Segment{-(1 + k), &shared_shots[static_cast<std::size_t>(k)]};
  };

  for (int e = 0; e < spec.n_events; ++e) {
    for (int v = 0; v < spec.videos_per_event; ++v) {
      std::vector<Segment> segments;
      bool has_shared = false;
      for (int g = 0; g < n_segments; ++g) {
        if (unit(rng) < spec.distractor_ratio) {
          segments.push_back(shared_segment());
          has_shared = true;
        } else {
          const int s = pick_event_shot(rng);
          segments.push_back({e * spec.shot_pool_size + s, &event_shots[static_cast<std::size_t>(e)][static_cast<std::size_t>(s)]});
        }
      }
      if (!has_shared && spec.distractor_ratio > 0.0) segments[static_cast<std::size_t>(pick_segment(rng))] = shared_segment();
      if (!spec.repeats) group_repeated_shots(segments);

      char id[32];
      std::snprintf(id, sizeof id, "e%02d_v%03d", e, v);
      std::vector<int> shots;
      out.videos.push_back(render_video(rng, spec, id, segments, shots));
      out.frame_shots.push_back(std::move(shots));
      out.manifest.entries.push_back({id, fs::path("features") / (std::string(id) + ".impr"), e, v < spec.queries_per_event});
    }
  }

  // Distractor videos: shared anchor shots mixed with one-off background shots.
  for (int k = 0; k < spec.n_distractor_videos; ++k) {
    std::vector<Prototype> own;
    own.reserve(static_cast<std::size_t>(n_segments));
    std::vector<Segment> segments;
    for (int g = 0; g < n_segments; ++g) {
      if (unit(rng) < 0.5) {
        segments.push_back(shared_segment());
      } else {
        own.push_back(make_prototype(rng, spec, shared_lo, spec.depth));
        segments.push_back({-(1 + spec.n_shared_shots + g), &own.back()});
      }
    }
    if (!spec.repeats) group_repeated_shots(segments);
    char id[32];
    std::snprintf(id, sizeof id, "d%04d", k);
    std::vector<int> shots;
    out.videos.push_back(render_video(rng, spec, id, segments, shots));
    out.frame_shots.push_back(std::move(shots));
    out.manifest.entries.push_back({id, fs::path("features") / (std::string(id) + ".impr"), -1, false});
  }
  return out;
}

FeatureSequence synth_two_shot_video(const SynthSpec& spec, int atoms) {
  spec.validate();
  if (atoms < 1) throw ConfigError("features: synth atoms must be >= 1");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto depth = static_cast<std::size_t>(spec.depth);
  auto shot = [&]() {
    std::vector<std::vector<double>> basis(static_cast<std::size_t>(atoms), std::vector<double>(depth));
    for (auto& a : basis)
      for (double& v : a) v = std::max(0.0, normal(rng));
    Prototype p(spec.frame.area() * depth, 0.0f);
    const double scale = 1.0 / std::sqrt(static_cast<double>(atoms));
    for (std::size_t cell = 0; cell < spec.frame.area(); ++cell)
      for (const auto& a : basis) {
        const double w = scale * std::max(0.0, normal(rng));
        for (std::size_t c = 0; c < depth; ++c) p[cell * depth + c] += static_cast<float>(w * a[c]);
      }
    return p;
  };
  const Prototype a = shot();
  const Prototype b = shot();
  SynthSpec s = spec;
  s.shot_length = (spec.frames_per_video + 1) / 2;
  std::vector<int> shots;
  return render_video(rng, s, "two_shot", {{0, &a}, {1, &b}}, shots);
}

void write_dataset(const SynthDataset& dataset, const fs::path& dir) {
  DatasetManifest manifest = dataset.manifest;
  for (std::size_t i = 0; i < dataset.videos.size(); ++i) write_features(dataset.videos[i], dir / manifest.entries[i].feature_path);
  write_manifest(manifest, dir / "manifest.json");
}

}  // namespace vimprint
