#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vimprint/imprint.hpp"
#include "vimprint/posterior.hpp"

namespace vimprint::rnet {

enum class HeadKind : std::uint32_t { kSoftmax = 0, kHidden = 1 };

struct NetConfig {
  int d_in = 0;
  int h = 0;  // embedding width; the initial state is the descriptor sum, so h == d_in
  int classes = 0;
  int hops = 3;
  HeadKind head = HeadKind::kSoftmax;
  int hidden = 0;  // hidden-layer width for kHidden; 0 means h

  int hidden_width() const { return hidden > 0 ? hidden : h; }
  void validate() const;
};

/// Memory-hop network over imprint descriptors. One (B, M) pair is shared by
/// every hop. The decision head is either softmax(W1 u + b1) or
/// softmax(W2 relu(W1 u + b1) + b2).
struct ReasoningNet {
  NetConfig config;
  Eigen::MatrixXd B;  // h x d_in, output embedding
  Eigen::MatrixXd M;  // h x d_in, memory embedding
  Eigen::MatrixXd W1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2;
  Eigen::VectorXd b2;

  /// Gaussian weights (zero mean, `sigma`), zero biases.
  static ReasoningNet random(const NetConfig& config, std::uint64_t seed, double sigma = 0.05);
  static ReasoningNet zeros(const NetConfig& config);

  std::size_t parameter_count() const;
  /// Parameters in file order: B, M, W1, b1, [W2, b2].
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);
};

enum class AttentionMode {
  kLearned,    // softmax over active locations, 3x3 pooling, renormalization
  kActiveMap,  // diagnostic: every hop attends uniformly to the active map
};

struct AttentionTrace {
  Extent2 grid;
  std::vector<std::vector<double>> weights;  // per hop, grid.area(), zero off the active set
  std::vector<double> weights_sum;
  std::vector<Eigen::VectorXd> states;  // u^1 .. u^{hops+1}
};

struct ForwardResult {
  Eigen::VectorXd log_probs;
  AttentionTrace trace;
};

/// `descriptors` must be post-processed, non-empty, and lie on active locations.
ForwardResult rnet_forward(const ReasoningNet& net, const imprint::ImprintDescriptorSet& descriptors,
                           const imprint::ActiveMap& active, AttentionMode mode = AttentionMode::kLearned);

/// Decision head alone on a state vector.
Eigen::VectorXd head_log_probs(const ReasoningNet& net, const Eigen::VectorXd& state);

struct Example {
  imprint::ImprintDescriptorSet descriptors;
  imprint::ActiveMap active;
  int label = 0;
};

struct LossAndGrad {
  double loss = 0.0;
  ReasoningNet grad;  // same shapes as the network
};

/// Mean cross-entropy over `batch` and its exact gradient.
LossAndGrad rnet_loss_and_grads(const ReasoningNet& net, std::span<const Example* const> batch,
                                AttentionMode mode = AttentionMode::kLearned, int workers = 1);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 128;
  double learning_rate = 0.025;
  int anneal_every = 5;
  double anneal_factor = 0.5;
  double clip_norm = 20.0;
  double init_sigma = 0.05;
  std::uint64_t seed = 1;
  int workers = 1;
};

/// Step size used during `epoch` (0-based).
double learning_rate_at(const TrainConfig& config, int epoch);

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_learning_rate;
  int clipped_batches = 0;
};

/// Plain mini-batch SGD with global-norm gradient clipping.
ReasoningNet rnet_train(const std::vector<Example>& data, const NetConfig& net_config, const TrainConfig& config,
                        TrainReport* report = nullptr);

int predict(const ReasoningNet& net, const Example& example);

/// Softmax classifier on fixed vectors, trained with the same schedule. Used
/// as the aggregation baseline.
struct LinearClassifier {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;

  int predict(std::span<const double> v) const;
};

LinearClassifier train_linear_classifier(const std::vector<std::vector<double>>& vectors, const std::vector<int>& labels,
                                         int classes, const TrainConfig& config);

// Recounting ----------------------------------------------------------------------

struct RecountingResult {
  Extent2 window;
  std::vector<std::vector<double>> maps;  // per frame, window.area()
  std::vector<double> importance;
  std::vector<int> ranking;  // frames by descending importance, ties by index
};

/// R^t = sum_i q_t(i) * crop of P_sum at window W_i (toroidal).
RecountingResult recount(const AttentionTrace& trace, const PosteriorField& q, Extent2 window);

struct RenderOptions {
  Extent2 display{64, 64};
};

/// Writes frame_NNNN.pgm heat maps (bilinearly upscaled, scaled by the largest
/// value over all frames), importance.csv and maps.csv into `out_dir`.
void render_recounting(const RecountingResult& result, const std::filesystem::path& out_dir,
                       const RenderOptions& options = {});

// RNET model files ---------------------------------------------------------------

std::vector<std::uint8_t> encode_net(const ReasoningNet& net);
ReasoningNet decode_net(std::span<const std::uint8_t> bytes);
void save_net(const ReasoningNet& net, const std::filesystem::path& path);
ReasoningNet load_net(const std::filesystem::path& path);

}  // namespace vimprint::rnet
