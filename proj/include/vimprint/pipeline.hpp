#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>

#include "json.hpp"
#include "vimprint/epitome.hpp"
#include "vimprint/features.hpp"
#include "vimprint/imprint.hpp"
#include "vimprint/rnet.hpp"
#include "vimprint/tcg.hpp"

namespace vimprint {

enum class ModelKind { kTcg, kEpitome, kEpitome2Step };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Every tunable of the pipeline in one place. Serialized as JSON.
struct PipelineConfig {
  ModelKind model = ModelKind::kEpitome;
  Extent2 E{24, 24};
  Extent2 W{8, 8};
  Extent2 S{4, 4};
  int d = 64;  // reduced dimension for the two-step fit
  double tau = 4.0;
  bool per_frame_tau = false;
  double alpha = 0.2;
  int pca_dim = 64;
  int max_iters = 30;
  double tol = 1e-5;
  bool learn_sigma = false;

  int hops = 3;
  rnet::HeadKind head = rnet::HeadKind::kSoftmax;
  int hidden = 0;
  rnet::TrainConfig train;

  int n1 = 10;
  int n2 = 2000;

  std::uint64_t seed = 1;
  int workers = 0;  // 0: environment or 1

  /// Throws ConfigError naming the offending key.
  void validate() const;

  nlohmann::json to_json() const;
  /// Keys absent from `j` keep their current values; unknown keys are rejected.
  void merge_json(const nlohmann::json& j);
};

PipelineConfig load_config(const std::filesystem::path& path);
/// Writes config.json into `dir`.
void echo_config(const PipelineConfig& config, const std::filesystem::path& dir);

/// A fitted alignment model in its native form.
using ModelImprint = std::variant<tcg::TcgImprint, epitome::EpitomeImprint>;

/// Fits the configured alignment model to one video.
ModelImprint fit_model(const FeatureSequence& seq, const PipelineConfig& config);
imprint::VideoImprint to_video_imprint(const ModelImprint& model, std::string video_id);
imprint::VideoImprint build_imprint(const FeatureSequence& seq, const PipelineConfig& config);

/// TCGI or EPIT, chosen by the model.
void save_model_imprint(const ModelImprint& model, const std::filesystem::path& path);
/// Reads either format, dispatching on the magic.
ModelImprint load_model_imprint(const std::filesystem::path& path);

/// Active map with the configured tau.
imprint::ActiveMap active_map_for(const imprint::VideoImprint& imp, const PipelineConfig& config);

/// Post-processed descriptors of one video, ready for the reasoning network.
rnet::Example make_example(const imprint::VideoImprint& imp, const PipelineConfig& config,
                           const numerics::PcaModel& descriptor_pca, int label);

struct SpeedupResult {
  double full_seconds = 0.0;
  double two_step_seconds = 0.0;
  double max_abs_dlogq = 0.0;  // over cells where either posterior is >= 1e-6
  double argmax_agreement = 0.0;  // fraction of frames
  int full_iterations = 0;
  int reduced_iterations = 0;
};

/// Full-dimension EM against the two-step scheme on one sequence. Full EM
/// starts from the seeded init lifted into the PCA subspace so both runs see
/// the same first E-step.
SpeedupResult benchmark_two_step(const FeatureSequence& seq, const epitome::TwoStepConfig& config);

}  // namespace vimprint
