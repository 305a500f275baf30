#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vimprint/epitome.hpp"
#include "vimprint/features.hpp"
#include "vimprint/numerics.hpp"
#include "vimprint/posterior.hpp"
#include "vimprint/tcg.hpp"

namespace vimprint::imprint {

enum class Source : std::uint32_t { kTcg = 0, kEpitome = 1 };
enum class PostState : std::uint32_t { kRaw = 0, kPower = 1, kWhitened = 2 };

/// Fitted grid descriptors (pi or mu) with the alignment that produced them.
struct VideoImprint {
  std::string video_id;
  Source source = Source::kEpitome;
  Extent2 grid;
  Extent2 window;
  int dim = 0;
  std::vector<double> descriptors;  // grid.area() x dim
  PosteriorField posterior;

  std::span<const double> at(std::size_t i) const {
    return {descriptors.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
};

VideoImprint from_tcg(const tcg::CountingGrid& grid, PosteriorField q, std::string video_id = {});
VideoImprint from_epitome(const epitome::Epitome& ep, PosteriorField q, std::string video_id = {});

struct ActiveMap {
  Extent2 grid;
  std::vector<std::uint8_t> a;  // 0/1 per location
  double tau = 0.0;

  std::size_t count() const;
  std::vector<std::size_t> locations() const;
};

/// Marks every location covered by a window whose accumulated posterior mass
/// exceeds tau. With `per_frame_tau`, tau is a fraction of the frame count.
ActiveMap build_active_map(const PosteriorField& q, Extent2 window, double tau, bool per_frame_tau = false);

/// Sum of the descriptors at active locations; zero vector when none are active.
std::vector<double> aggregate(const VideoImprint& imprint, const ActiveMap& active);

/// Baseline: mean over frames of each frame's spatially averaged feature vector.
std::vector<double> sum_aggregate(const FeatureSequence& seq);

struct ImprintDescriptorSet {
  Source source = Source::kEpitome;
  PostState post_state = PostState::kRaw;
  Extent2 grid;
  std::vector<std::size_t> locations;  // ascending, active only
  std::vector<std::vector<double>> vectors;

  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
};

ImprintDescriptorSet descriptor_set(const VideoImprint& imprint, const ActiveMap& active);

struct PostprocessResult {
  std::vector<double> vector;
  bool zero_input = false;  // input was the zero vector; output is zero too
};

/// l2 -> PCA whitening -> l2.
PostprocessResult postprocess_video_vector(std::span<const double> v, const numerics::PcaModel& pca);

/// power normalization -> PCA whitening -> l2, per descriptor.
ImprintDescriptorSet postprocess_imprint_descriptors(const ImprintDescriptorSet& set, const numerics::PcaModel& pca,
                                                     double alpha = 0.2);

/// Corpus-level PCA over l2-normalized video vectors (zero vectors skipped).
numerics::PcaModel fit_vector_pca(const std::vector<std::vector<double>>& vectors, int dim, double epsilon = 1e-6);

/// Corpus-level PCA over power-normalized imprint descriptors.
numerics::PcaModel fit_descriptor_pca(const std::vector<ImprintDescriptorSet>& sets, int dim, double alpha = 0.2,
                                      double epsilon = 1e-6);

// VVEC vector store -----------------------------------------------------------

struct VectorStore {
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> vectors;

  void add(std::string id, std::vector<double> v);
  std::size_t size() const { return ids.size(); }
};

std::vector<std::uint8_t> encode_store(const VectorStore& store);
VectorStore decode_store(std::span<const std::uint8_t> bytes);
void save_store(const VectorStore& store, const std::filesystem::path& path);
VectorStore load_store(const std::filesystem::path& path);

// VPCA projection files -------------------------------------------------------

std::vector<std::uint8_t> encode_pca(const numerics::PcaModel& pca);
numerics::PcaModel decode_pca(std::span<const std::uint8_t> bytes);
void save_pca(const numerics::PcaModel& pca, const std::filesystem::path& path);
numerics::PcaModel load_pca(const std::filesystem::path& path);

}  // namespace vimprint::imprint
