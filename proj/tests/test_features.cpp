#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "vimprint/binary_io.hpp"
#include "vimprint/errors.hpp"
#include "vimprint/features.hpp"

using namespace vimprint;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vimprint_features_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ParseFailure decode_failure(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_features(bytes, "x");
  } catch (const ParseError& e) {
    return e.kind();
  }
  FAIL("decode succeeded");
  return ParseFailure::kMalformed;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
}

/// Direct bilinear sample with align-corners false and clamped edges.
double bilinear_at(const std::vector<double>& map, Extent2 from, int channels, Extent2 to, int ox, int oy, int c) {
  auto coord = [](int o, int f, int t) {
    double s = (o + 0.5) * f / t - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(f - 1));
  };
  const double sx = coord(ox, from.x, to.x), sy = coord(oy, from.y, to.y);
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, from.x - 1), y1 = std::min(y0 + 1, from.y - 1);
  const double fx = sx - x0, fy = sy - y0;
  auto v = [&](int x, int y) { return map[(static_cast<std::size_t>(x * from.y + y)) * channels + c]; };
  return (1 - fx) * ((1 - fy) * v(x0, y0) + fy * v(x0, y1)) + fx * ((1 - fy) * v(x1, y0) + fy * v(x1, y1));
}

}  // namespace

TEST_CASE("IMPR round trip preserves float32 payload") {
  std::mt19937_64 rng(1);
  FeatureSequence s = oracle::random_sequence(rng, 3, {2, 4}, 5);
  s.data[7] = -2.5f;
  const auto bytes = encode_features(s);
  CHECK(bytes.size() == 4 + 5 * 4 + s.data.size() * 4);
  const FeatureSequence back = decode_features(bytes, "abc");
  CHECK(back.video_id == "abc");
  CHECK(back.frames == 3);
  CHECK(back.spatial == Extent2{2, 4});
  CHECK(back.depth == 5);
  CHECK(back.data == s.data);
}

TEST_CASE("IMPR decode errors") {
  std::mt19937_64 rng(2);
  const auto good = encode_features(oracle::random_sequence(rng, 2, {2, 2}, 3));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(decode_failure(bad_magic) == ParseFailure::kBadMagic);

  auto bad_version = good;
  put_u32(bad_version, 4, 2);
  CHECK(decode_failure(bad_version) == ParseFailure::kBadVersion);

  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  CHECK(decode_failure(truncated) == ParseFailure::kTruncated);

  auto header_only = good;
  header_only.resize(10);
  CHECK(decode_failure(header_only) == ParseFailure::kTruncated);

  auto trailing = good;
  trailing.push_back(0);
  CHECK(decode_failure(trailing) == ParseFailure::kTrailingBytes);

  auto overflow = good;
  put_u32(overflow, 8, 0xFFFFFFFFu);
  put_u32(overflow, 12, 0xFFFFFFFFu);
  put_u32(overflow, 16, 0xFFFFFFFFu);
  CHECK(decode_failure(overflow) == ParseFailure::kShapeOverflow);

  auto zero = good;
  put_u32(zero, 20, 0);
  CHECK(decode_failure(zero) == ParseFailure::kMalformed);
}

TEST_CASE("write and read feature files") {
  const fs::path dir = scratch("io");
  std::mt19937_64 rng(3);
  const FeatureSequence s = oracle::random_sequence(rng, 2, {3, 3}, 4);
  write_features(s, dir / "clip.impr");
  const FeatureSequence back = read_features(dir / "clip.impr");
  CHECK(back.video_id == "clip");
  CHECK(back.data == s.data);
  CHECK_THROWS_AS(read_features(dir / "missing.impr"), IoError);
}

TEST_CASE("encode rejects non-finite data") {
  std::mt19937_64 rng(4);
  FeatureSequence s = oracle::random_sequence(rng, 1, {1, 1}, 2);
  s.data[1] = NAN;
  CHECK_THROWS_AS(encode_features(s), DomainError);
}

TEST_CASE("manifest round trip resolves relative paths") {
  const fs::path dir = scratch("manifest");
  DatasetManifest m;
  m.label_names = {"a", "b"};
  m.entries.push_back({"v1", "features/v1.impr", 0, true});
  m.entries.push_back({"v2", "features/v2.impr", 1, false});
  m.entries.push_back({"d1", "features/d1.impr", -1, false});
  write_manifest(m, dir / "manifest.json");
  const DatasetManifest back = read_manifest(dir / "manifest.json");
  REQUIRE(back.entries.size() == 3);
  CHECK(back.label_names == m.label_names);
  CHECK(back.entries[0].feature_path == dir / "features/v1.impr");
  CHECK(back.entries[0].is_query);
  CHECK(back.entries[2].label == -1);
  CHECK(back.find("v2") != nullptr);
  CHECK(back.find("zz") == nullptr);
}

TEST_CASE("manifest validation") {
  DatasetManifest dup;
  dup.entries = {{"a", "x", 0, false}, {"a", "y", 0, false}};
  CHECK_THROWS_AS(dup.validate(), ConfigError);
  DatasetManifest dq;
  dq.entries = {{"a", "x", -1, true}};
  CHECK_THROWS_AS(dq.validate(), ConfigError);

  const fs::path dir = scratch("badmanifest");
  std::ofstream(dir / "m.json") << "{\"entries\": [{\"video_id\": 3}]}";
  CHECK_THROWS_AS(read_manifest(dir / "m.json"), ParseError);
  std::ofstream(dir / "n.json") << "not json";
  CHECK_THROWS_AS(read_manifest(dir / "n.json"), ParseError);
  CHECK_THROWS_AS(read_manifest(dir / "absent.json"), IoError);
}

TEST_CASE("bilinear_resize matches direct sampling") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Extent2 from{5, 7};
  const int ch = 2;
  std::vector<double> map(from.area() * ch);
  for (double& v : map) v = u(rng);
  for (Extent2 to : {Extent2{2, 3}, Extent2{5, 7}, Extent2{9, 4}, Extent2{1, 1}}) {
    const auto out = bilinear_resize(map, from, ch, to);
    for (int x = 0; x < to.x; ++x)
      for (int y = 0; y < to.y; ++y)
        for (int c = 0; c < ch; ++c)
          CHECK(out[static_cast<std::size_t>((x * to.y + y) * ch + c)] ==
                doctest::Approx(bilinear_at(map, from, ch, to, x, y, c)).epsilon(1e-12));
  }
  const auto same = bilinear_resize(map, from, ch, from);
  CHECK(oracle::max_abs_diff(same, map) < 1e-15);
}

TEST_CASE("downsample_to_tessellation yields l1-normalized cells") {
  std::mt19937_64 rng(6);
  FeatureSequence s = oracle::random_sequence(rng, 3, {8, 8}, 6);
  for (std::size_t i = 0; i < s.frame_size(); ++i) s.data[s.frame_size() + i] = 0.0f;  // blank frame
  const TessellatedCounts c = downsample_to_tessellation(s, {4, 2});
  CHECK(c.frames == 3);
  CHECK(c.channels == 6);
  for (int t = 0; t < 3; ++t)
    for (std::size_t cell = 0; cell < c.cells_per_frame(); ++cell) {
      double sum = 0.0;
      for (double v : c.cell(t, cell)) sum += v;
      CHECK(sum == doctest::Approx(1.0));
    }
  for (double v : c.cell(1, 0)) CHECK(v == doctest::Approx(1.0 / 6));
  CHECK_THROWS_AS(downsample_to_tessellation(s, {9, 1}), ConfigError);
  s.data[0] = -1.0f;
  CHECK_THROWS_AS(downsample_to_tessellation(s, {2, 2}), DomainError);
}

TEST_CASE("synthetic dataset structure") {
  SynthSpec spec;
  spec.n_events = 3;
  spec.videos_per_event = 4;
  spec.frames_per_video = 12;
  spec.n_distractor_videos = 3;
  spec.depth = 16;
  spec.frame = {4, 4};
  spec.shot_length = 3;
  const SynthDataset d = synth_event_dataset(spec);
  d.manifest.validate();
  REQUIRE(d.videos.size() == 15);
  CHECK(d.manifest.label_names.size() == 3);
  int queries = 0;
  std::set<int> events_with_shared;
  for (std::size_t v = 0; v < d.videos.size(); ++v) {
    const auto& e = d.manifest.entries[v];
    CHECK(e.video_id == d.videos[v].video_id);
    CHECK(d.videos[v].frames == 12);
    d.videos[v].validate_nonnegative();
    queries += e.is_query;
    for (int shot : d.frame_shots[v]) {
      if (e.label >= 0 && shot >= 0) CHECK(shot / spec.shot_pool_size == e.label);
      if (e.label >= 0 && shot < 0 && shot >= -spec.n_shared_shots) events_with_shared.insert(e.label);
      if (e.label < 0) CHECK(shot < 0);
    }
  }
  CHECK(queries == 3 * spec.queries_per_event);
  CHECK(events_with_shared.size() >= 2);
}

TEST_CASE("synthetic generator is deterministic per seed") {
  SynthSpec spec;
  spec.n_events = 2;
  spec.videos_per_event = 3;
  spec.frames_per_video = 8;
  spec.depth = 9;
  spec.frame = {3, 3};
  const SynthDataset a = synth_event_dataset(spec);
  const SynthDataset b = synth_event_dataset(spec);
  for (std::size_t v = 0; v < a.videos.size(); ++v) CHECK(a.videos[v].data == b.videos[v].data);
  spec.seed = 2;
  const SynthDataset c = synth_event_dataset(spec);
  CHECK(a.videos[0].data != c.videos[0].data);
}

TEST_CASE("synth spec validation") {
  SynthSpec spec;
  spec.depth = 3;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = SynthSpec{};
  spec.distractor_ratio = 1.5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = SynthSpec{};
  spec.queries_per_event = 50;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("two-shot video splits at half the frames") {
  SynthSpec spec;
  spec.frames_per_video = 10;
  spec.frame = {4, 4};
  spec.depth = 40;
  spec.noise_sigma = 0.0;
  const FeatureSequence s = synth_two_shot_video(spec, 3);
  CHECK(s.frames == 10);
  for (int t = 1; t < 5; ++t) CHECK(std::equal(s.frame(t).begin(), s.frame(t).end(), s.frame(0).begin()));
  for (int t = 6; t < 10; ++t) CHECK(std::equal(s.frame(t).begin(), s.frame(t).end(), s.frame(5).begin()));
  CHECK_FALSE(std::equal(s.frame(0).begin(), s.frame(0).end(), s.frame(5).begin()));
}

TEST_CASE("write_dataset lays out features and manifest") {
  const fs::path dir = scratch("dataset");
  SynthSpec spec;
  spec.n_events = 2;
  spec.videos_per_event = 2;
  spec.frames_per_video = 4;
  spec.depth = 6;
  spec.frame = {2, 2};
  spec.queries_per_event = 1;
  const SynthDataset d = synth_event_dataset(spec);
  write_dataset(d, dir);
  const DatasetManifest m = read_manifest(dir / "manifest.json");
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const FeatureSequence s = read_features(m.entries[i].feature_path);
    CHECK(s.data == d.videos[i].data);
  }
}
