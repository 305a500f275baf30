#include "vimprint/rnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "vimprint/binary_io.hpp"
#include "vimprint/errors.hpp"
#include "vimprint/features.hpp"
#include "vimprint/numerics.hpp"
#include "vimprint/parallel.hpp"

namespace vimprint::rnet {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void NetConfig::validate() const {
  if (d_in < 1) throw ConfigError("rnet: d_in must be >= 1");
  if (h != d_in) throw ConfigError("rnet: h must equal d_in (the initial state is the descriptor sum)");
  if (classes < 1) throw ConfigError("rnet: classes must be >= 1");
  if (hops < 1) throw ConfigError("rnet: hops must be >= 1");
  if (head != HeadKind::kSoftmax && head != HeadKind::kHidden) throw ConfigError("rnet: unknown head kind");
  if (hidden < 0) throw ConfigError("rnet: hidden width must be >= 0");
}

ReasoningNet ReasoningNet::zeros(const NetConfig& config) {
  config.validate();
  ReasoningNet net;
  net.config = config;
  net.B = MatrixXd::Zero(config.h, config.d_in);
  net.M = MatrixXd::Zero(config.h, config.d_in);
  if (config.head == HeadKind::kSoftmax) {
    net.W1 = MatrixXd::Zero(config.classes, config.h);
    net.b1 = VectorXd::Zero(config.classes);
  } else {
    net.W1 = MatrixXd::Zero(config.hidden_width(), config.h);
    net.b1 = VectorXd::Zero(config.hidden_width());
    net.W2 = MatrixXd::Zero(config.classes, config.hidden_width());
    net.b2 = VectorXd::Zero(config.classes);
  }
  return net;
}

ReasoningNet ReasoningNet::random(const NetConfig& config, std::uint64_t seed, double sigma) {
  ReasoningNet net = zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  auto fill = [&](MatrixXd& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = normal(rng);
  };
  fill(net.B);
  fill(net.M);
  fill(net.W1);
  if (config.head == HeadKind::kHidden) fill(net.W2);
  return net;
}

namespace {

template <typename F>
void for_each_block(const ReasoningNet& net, F&& f) {
  f(net.B);
  f(net.M);
  f(net.W1);
  f(net.b1);
  if (net.config.head == HeadKind::kHidden) {
    f(net.W2);
    f(net.b2);
  }
}

template <typename F>
void for_each_block_mut(ReasoningNet& net, F&& f) {
  f(net.B);
  f(net.M);
  f(net.W1);
  f(net.b1);
  if (net.config.head == HeadKind::kHidden) {
    f(net.W2);
    f(net.b2);
  }
}

}  // namespace

std::size_t ReasoningNet::parameter_count() const {
  std::size_t n = 0;
  for_each_block(*this, [&](const auto& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

// Row-major within each block.
VectorXd ReasoningNet::flatten() const {
  VectorXd out(static_cast<Index>(parameter_count()));
  Index k = 0;
  for_each_block(*this, [&](const auto& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) out[k++] = m(r, c);
  });
  return out;
}

void ReasoningNet::unflatten(const VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count())
    throw DomainError("rnet: parameter vector has the wrong length");
  Index k = 0;
  for_each_block_mut(*this, [&](auto& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = flat[k++];
  });
}

namespace {

struct Prepared {
  Extent2 grid;
  MatrixXd X;  // n x d_in
  std::vector<std::size_t> locs;
  std::vector<std::vector<int>> neighbors;  // active neighbors (self included), by active index
  std::vector<double> count;                // in-bounds 3x3 neighbors of each active cell
};

Prepared prepare(const ReasoningNet& net, const imprint::ImprintDescriptorSet& set, const imprint::ActiveMap& active) {
  if (active.grid != set.grid) throw DomainError("rnet: active map grid does not match the descriptors");
  if (active.a.size() != active.grid.area()) throw DomainError("rnet: active map has the wrong size");
  Prepared p;
  p.grid = set.grid;
  p.locs = active.locations();
  if (p.locs.empty()) throw DomainError("rnet: no evidence (video has no active imprint locations)");
  if (set.locations != p.locs) throw DomainError("rnet: descriptor locations differ from the active map");
  if (set.dim() != static_cast<std::size_t>(net.config.d_in))
    throw DomainError("rnet: descriptor dim " + std::to_string(set.dim()) + " != d_in " +
                      std::to_string(net.config.d_in));
  const auto n = static_cast<Index>(p.locs.size());
  p.X.resize(n, net.config.d_in);
  for (Index r = 0; r < n; ++r) {
    const auto& v = set.vectors[static_cast<std::size_t>(r)];
    if (v.size() != set.dim()) throw DomainError("rnet: ragged descriptor set");
    for (Index c = 0; c < p.X.cols(); ++c) p.X(r, c) = v[static_cast<std::size_t>(c)];
  }
  std::vector<int> slot(p.grid.area(), -1);
  for (std::size_t r = 0; r < p.locs.size(); ++r) slot[p.locs[r]] = static_cast<int>(r);
  const Torus torus(p.grid);
  p.neighbors.resize(p.locs.size());
  p.count.resize(p.locs.size());
  for (std::size_t r = 0; r < p.locs.size(); ++r) {
    const int x = torus.x_of(p.locs[r]), y = torus.y_of(p.locs[r]);
    int cnt = 0;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= p.grid.x || ny >= p.grid.y) continue;
        ++cnt;
        const int s = slot[static_cast<std::size_t>(nx) * static_cast<std::size_t>(p.grid.y) + static_cast<std::size_t>(ny)];
        if (s >= 0) p.neighbors[r].push_back(s);
      }
    p.count[r] = cnt;
  }
  return p;
}

struct HopCache {
  VectorXd u;      // state entering the hop
  VectorXd alpha;  // softmax over active cells
  VectorXd P;      // pooled, masked, renormalized
  double mass = 1.0;
};

struct Pass {
  std::vector<HopCache> hops;
  MatrixXd MX, BX;  // n x h
  VectorXd u_final;
  VectorXd pre, hidden;
  VectorXd log_probs;
};

VectorXd head_forward(const ReasoningNet& net, const VectorXd& u, VectorXd* pre, VectorXd* hidden) {
  VectorXd logits;
  if (net.config.head == HeadKind::kSoftmax) {
    logits = net.W1 * u + net.b1;
  } else {
    VectorXd z = net.W1 * u + net.b1;
    VectorXd r = z.cwiseMax(0.0);
    logits = net.W2 * r + net.b2;
    if (pre) *pre = std::move(z);
    if (hidden) *hidden = std::move(r);
  }
  const auto lp = numerics::log_softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
  return Eigen::Map<const VectorXd>(lp.data(), static_cast<Index>(lp.size()));
}

Pass run_forward(const ReasoningNet& net, const Prepared& p, AttentionMode mode) {
  Pass pass;
  const Index n = p.X.rows();
  pass.MX = p.X * net.M.transpose();
  pass.BX = p.X * net.B.transpose();
  VectorXd u = p.X.colwise().sum().transpose();
  std::vector<double> full(p.grid.area());
  for (int k = 0; k < net.config.hops; ++k) {
    HopCache c;
    c.u = u;
    if (mode == AttentionMode::kActiveMap) {
      c.alpha = VectorXd::Constant(n, 1.0 / static_cast<double>(n));
      c.P = c.alpha;
    } else {
      const VectorXd s = pass.MX * u;
      const auto ls = numerics::log_softmax(std::span<const double>(s.data(), static_cast<std::size_t>(n)));
      c.alpha.resize(n);
      for (Index r = 0; r < n; ++r) c.alpha[r] = std::exp(ls[static_cast<std::size_t>(r)]);
      std::fill(full.begin(), full.end(), 0.0);
      for (Index r = 0; r < n; ++r) full[p.locs[static_cast<std::size_t>(r)]] = c.alpha[r];
      const auto pooled = numerics::avg_pool_3x3(full, p.grid);
      c.P.resize(n);
      for (Index r = 0; r < n; ++r) c.P[r] = pooled[p.locs[static_cast<std::size_t>(r)]];
      c.mass = c.P.sum();
      c.P /= c.mass;
    }
    u = u + pass.BX.transpose() * c.P;
    pass.hops.push_back(std::move(c));
  }
  pass.u_final = u;
  pass.log_probs = head_forward(net, u, &pass.pre, &pass.hidden);
  for (Index c = 0; c < pass.log_probs.size(); ++c)
    if (!std::isfinite(pass.log_probs[c])) throw NumericalError("rnet: non-finite class log-probability");
  return pass;
}

// Adds d(-log p[label]) / d(params) to `g`; returns the loss.
double backward(const ReasoningNet& net, const Prepared& p, const Pass& pass, int label, AttentionMode mode,
                ReasoningNet& g) {
  const Index n = p.X.rows();
  VectorXd g_logits = pass.log_probs.array().exp();
  g_logits[label] -= 1.0;
  VectorXd g_u;
  if (net.config.head == HeadKind::kSoftmax) {
    g.W1.noalias() += g_logits * pass.u_final.transpose();
    g.b1 += g_logits;
    g_u = net.W1.transpose() * g_logits;
  } else {
    g.W2.noalias() += g_logits * pass.hidden.transpose();
    g.b2 += g_logits;
    VectorXd g_pre = net.W2.transpose() * g_logits;
    for (Index i = 0; i < g_pre.size(); ++i)
      if (!(pass.pre[i] > 0.0)) g_pre[i] = 0.0;
    g.W1.noalias() += g_pre * pass.u_final.transpose();
    g.b1 += g_pre;
    g_u = net.W1.transpose() * g_pre;
  }
  for (int k = net.config.hops - 1; k >= 0; --k) {
    const HopCache& c = pass.hops[static_cast<std::size_t>(k)];
    const VectorXd& g_o = g_u;
    g.B.noalias() += g_o * (p.X.transpose() * c.P).transpose();
    if (mode == AttentionMode::kActiveMap) continue;
    const VectorXd g_P = pass.BX * g_o;
    const VectorXd g_Q = (g_P.array() - g_P.dot(c.P)) / c.mass;
    VectorXd g_alpha = VectorXd::Zero(n);
    for (Index r = 0; r < n; ++r) {
      double acc = 0.0;
      for (int s : p.neighbors[static_cast<std::size_t>(r)]) acc += g_Q[s] / p.count[static_cast<std::size_t>(s)];
      g_alpha[r] = acc;
    }
    const VectorXd g_s = c.alpha.array() * (g_alpha.array() - c.alpha.dot(g_alpha));
    g.M.noalias() += c.u * (p.X.transpose() * g_s).transpose();
    g_u += pass.MX.transpose() * g_s;
  }
  return -pass.log_probs[label];
}

void add_into(ReasoningNet& acc, const ReasoningNet& g, double scale) {
  acc.B += scale * g.B;
  acc.M += scale * g.M;
  acc.W1 += scale * g.W1;
  acc.b1 += scale * g.b1;
  if (acc.config.head == HeadKind::kHidden) {
    acc.W2 += scale * g.W2;
    acc.b2 += scale * g.b2;
  }
}

}  // namespace

ForwardResult rnet_forward(const ReasoningNet& net, const imprint::ImprintDescriptorSet& descriptors,
                           const imprint::ActiveMap& active, AttentionMode mode) {
  const Prepared p = prepare(net, descriptors, active);
  const Pass pass = run_forward(net, p, mode);
  ForwardResult out;
  out.log_probs = pass.log_probs;
  out.trace.grid = p.grid;
  out.trace.weights_sum.assign(p.grid.area(), 0.0);
  for (const HopCache& c : pass.hops) {
    std::vector<double> map(p.grid.area(), 0.0);
    for (Index r = 0; r < c.P.size(); ++r) map[p.locs[static_cast<std::size_t>(r)]] = c.P[r];
    for (std::size_t i = 0; i < map.size(); ++i) out.trace.weights_sum[i] += map[i];
    out.trace.weights.push_back(std::move(map));
    out.trace.states.push_back(c.u);
  }
  out.trace.states.push_back(pass.u_final);
  return out;
}

VectorXd head_log_probs(const ReasoningNet& net, const VectorXd& state) {
  if (state.size() != net.config.h) throw DomainError("rnet: state width does not match the head");
  return head_forward(net, state, nullptr, nullptr);
}

LossAndGrad rnet_loss_and_grads(const ReasoningNet& net, std::span<const Example* const> batch, AttentionMode mode,
                                int workers) {
  if (batch.empty()) throw DomainError("rnet: empty batch");
  for (const Example* e : batch)
    if (e->label < 0 || e->label >= net.config.classes)
      throw DomainError("rnet: label " + std::to_string(e->label) + " outside [0, " +
                        std::to_string(net.config.classes) + ")");
  std::vector<double> losses(batch.size());
  std::vector<ReasoningNet> grads(batch.size());
  parallel_for(batch.size(), resolve_workers(workers), [&](std::size_t b) {
    const Example& e = *batch[b];
    const Prepared p = prepare(net, e.descriptors, e.active);
    const Pass pass = run_forward(net, p, mode);
    grads[b] = ReasoningNet::zeros(net.config);
    losses[b] = backward(net, p, pass, e.label, mode, grads[b]);
  });
  LossAndGrad out;
  out.grad = ReasoningNet::zeros(net.config);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.loss += losses[b];
    add_into(out.grad, grads[b], inv);
  }
  out.loss *= inv;
  return out;
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  const int halvings = config.anneal_every > 0 ? epoch / config.anneal_every : 0;
  return config.learning_rate * std::pow(config.anneal_factor, halvings);
}

namespace {

void validate_train(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("rnet: epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("rnet: batch_size must be >= 1");
  if (!(c.learning_rate > 0.0)) throw ConfigError("rnet: learning_rate must be > 0");
  if (!(c.clip_norm > 0.0)) throw ConfigError("rnet: clip_norm must be > 0");
  if (!(c.init_sigma >= 0.0)) throw ConfigError("rnet: init_sigma must be >= 0");
}

// Fisher-Yates on a raw 64-bit stream so the order is the same on every
// standard library.
void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
}

}  // namespace

ReasoningNet rnet_train(const std::vector<Example>& data, const NetConfig& net_config, const TrainConfig& config,
                        TrainReport* report) {
  validate_train(config);
  if (data.empty()) throw DomainError("rnet: empty training set");
  ReasoningNet net = ReasoningNet::random(net_config, config.seed, config.init_sigma);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  TrainReport local;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    const double lr = learning_rate_at(config, epoch);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const Example*> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&data[order[i]]);
      LossAndGrad lg = rnet_loss_and_grads(net, batch, AttentionMode::kLearned, config.workers);
      if (!std::isfinite(lg.loss))
        throw NumericalError("rnet: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches));
      const double norm = lg.grad.flatten().norm();
      double scale = lr;
      if (norm > config.clip_norm) {
        scale *= config.clip_norm / norm;
        ++local.clipped_batches;
      }
      add_into(net, lg.grad, -scale);
      loss_sum += lg.loss;
      ++batches;
    }
    local.epoch_loss.push_back(loss_sum / batches);
    local.epoch_learning_rate.push_back(lr);
  }
  if (report) *report = std::move(local);
  return net;
}

int predict(const ReasoningNet& net, const Example& example) {
  const ForwardResult r = rnet_forward(net, example.descriptors, example.active);
  Index best = 0;
  r.log_probs.maxCoeff(&best);
  return static_cast<int>(best);
}

int LinearClassifier::predict(std::span<const double> v) const {
  if (static_cast<Index>(v.size()) != W.cols()) throw DomainError("rnet: linear classifier input width mismatch");
  const VectorXd logits = W * Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size())) + b;
  Index best = 0;
  logits.maxCoeff(&best);
  return static_cast<int>(best);
}

LinearClassifier train_linear_classifier(const std::vector<std::vector<double>>& vectors, const std::vector<int>& labels,
                                         int classes, const TrainConfig& config) {
  validate_train(config);
  if (vectors.empty() || vectors.size() != labels.size())
    throw DomainError("rnet: linear classifier needs one label per vector");
  if (classes < 1) throw ConfigError("rnet: classes must be >= 1");
  const auto d = static_cast<Index>(vectors.front().size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (static_cast<Index>(vectors[i].size()) != d) throw DomainError("rnet: ragged training vectors");
    if (labels[i] < 0 || labels[i] >= classes) throw DomainError("rnet: label out of range");
  }
  LinearClassifier lc;
  lc.W.resize(classes, d);
  lc.b = VectorXd::Zero(classes);
  std::mt19937_64 init_rng(config.seed);
  std::normal_distribution<double> normal(0.0, config.init_sigma);
  for (Index r = 0; r < lc.W.rows(); ++r)
    for (Index c = 0; c < d; ++c) lc.W(r, c) = normal(init_rng);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(vectors.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    const double lr = learning_rate_at(config, epoch);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      MatrixXd gW = MatrixXd::Zero(classes, d);
      VectorXd gb = VectorXd::Zero(classes);
      for (std::size_t i = start; i < stop; ++i) {
        const auto& v = vectors[order[i]];
        const Eigen::Map<const VectorXd> x(v.data(), d);
        const VectorXd logits = lc.W * x + lc.b;
        const auto lp = numerics::log_softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(classes)));
        VectorXd g(classes);
        for (Index c = 0; c < classes; ++c) g[c] = std::exp(lp[static_cast<std::size_t>(c)]);
        g[labels[order[i]]] -= 1.0;
        gW.noalias() += g * x.transpose();
        gb += g;
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      gW *= inv;
      gb *= inv;
      const double norm = std::sqrt(gW.squaredNorm() + gb.squaredNorm());
      double scale = lr;
      if (norm > config.clip_norm) scale *= config.clip_norm / norm;
      lc.W -= scale * gW;
      lc.b -= scale * gb;
    }
  }
  return lc;
}

// Recounting -------------------------------------------------------------------

RecountingResult recount(const AttentionTrace& trace, const PosteriorField& q, Extent2 window) {
  if (trace.grid != q.grid) throw DomainError("rnet: attention trace and posterior have different grids");
  if (trace.weights_sum.size() != q.grid.area()) throw DomainError("rnet: attention trace is incomplete");
  if (window.x < 1 || window.y < 1 || window.x > q.grid.x || window.y > q.grid.y)
    throw DomainError("rnet: window does not fit the grid");
  const Torus torus(q.grid);
  RecountingResult out;
  out.window = window;
  out.maps.assign(static_cast<std::size_t>(q.frames), std::vector<double>(window.area(), 0.0));
  out.importance.assign(static_cast<std::size_t>(q.frames), 0.0);
  for (int t = 0; t < q.frames; ++t) {
    auto& map = out.maps[static_cast<std::size_t>(t)];
    const auto row = q.row(t);
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double w = row[i];
      if (w == 0.0) continue;
      for (int jx = 0; jx < window.x; ++jx)
        for (int jy = 0; jy < window.y; ++jy)
          map[static_cast<std::size_t>(jx) * static_cast<std::size_t>(window.y) + static_cast<std::size_t>(jy)] +=
              w * trace.weights_sum[torus.offset(i, jx, jy)];
    }
    out.importance[static_cast<std::size_t>(t)] = std::accumulate(map.begin(), map.end(), 0.0);
  }
  out.ranking.resize(static_cast<std::size_t>(q.frames));
  std::iota(out.ranking.begin(), out.ranking.end(), 0);
  std::stable_sort(out.ranking.begin(), out.ranking.end(), [&](int a, int b) {
    return out.importance[static_cast<std::size_t>(a)] > out.importance[static_cast<std::size_t>(b)];
  });
  return out;
}

void render_recounting(const RecountingResult& result, const std::filesystem::path& out_dir,
                       const RenderOptions& options) {
  if (options.display.x < 1 || options.display.y < 1) throw ConfigError("rnet: display size must be positive");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("rnet: cannot create " + out_dir.string() + ": " + ec.message());
  double peak = 0.0;
  for (const auto& m : result.maps)
    for (double v : m) peak = std::max(peak, v);
  auto open = [](const std::filesystem::path& path, std::ios::openmode mode) {
    std::ofstream f(path, mode);
    if (!f) throw IoError("rnet: cannot write " + path.string());
    return f;
  };
  for (std::size_t t = 0; t < result.maps.size(); ++t) {
    const auto up = bilinear_resize(result.maps[t], result.window, 1, options.display);
    std::string pixels(up.size(), '\0');
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double v = peak > 0.0 ? std::clamp(up[i] / peak, 0.0, 1.0) : 0.0;
      pixels[i] = static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v)));
    }
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.pgm", t);
    const auto path = out_dir / name;
    auto f = open(path, std::ios::binary);
    // Rows run along x.
    f << "P5\n" << options.display.y << ' ' << options.display.x << "\n255\n";
    f.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
    if (!f) throw IoError("rnet: failed writing " + path.string());
  }
  char buf[64];
  {
    const auto path = out_dir / "importance.csv";
    auto f = open(path, std::ios::out);
    f << "frame_index,importance\n";
    for (std::size_t t = 0; t < result.importance.size(); ++t) {
      std::snprintf(buf, sizeof(buf), "%.17g", result.importance[t]);
      f << t << ',' << buf << '\n';
    }
    if (!f) throw IoError("rnet: failed writing " + path.string());
  }
  {
    const auto path = out_dir / "maps.csv";
    auto f = open(path, std::ios::out);
    f << "frame_index,x,y,value\n";
    for (std::size_t t = 0; t < result.maps.size(); ++t)
      for (int x = 0; x < result.window.x; ++x)
        for (int y = 0; y < result.window.y; ++y) {
          std::snprintf(buf, sizeof(buf), "%.17g",
                        result.maps[t][static_cast<std::size_t>(x) * static_cast<std::size_t>(result.window.y) +
                                       static_cast<std::size_t>(y)]);
          f << t << ',' << x << ',' << y << ',' << buf << '\n';
        }
    if (!f) throw IoError("rnet: failed writing " + path.string());
  }
}

// RNET --------------------------------------------------------------------------

std::vector<std::uint8_t> encode_net(const ReasoningNet& net) {
  io::ByteWriter w;
  w.magic("RNET");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(net.config.d_in));
  w.u32(static_cast<std::uint32_t>(net.config.h));
  w.u32(static_cast<std::uint32_t>(net.config.classes));
  w.u32(static_cast<std::uint32_t>(net.config.hops));
  w.u32(static_cast<std::uint32_t>(net.config.head));
  w.u32(static_cast<std::uint32_t>(net.config.hidden_width()));
  const VectorXd flat = net.flatten();
  w.f32s(std::span<const double>(flat.data(), static_cast<std::size_t>(flat.size())));
  return w.bytes();
}

ReasoningNet decode_net(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "rnet: model file");
  r.expect_magic("RNET");
  r.expect_version(1);
  NetConfig c;
  const std::uint32_t d_in = r.u32(), h = r.u32(), classes = r.u32(), hops = r.u32(), head = r.u32(), hidden = r.u32();
  io::checked_volume({d_in, h}, r.context());
  io::checked_volume({classes, hidden}, r.context());
  io::checked_volume({hidden, h}, r.context());
  if (head > 1) throw ParseError(ParseFailure::kMalformed, "rnet: model file: unknown head kind " + std::to_string(head));
  if (hops > 4096) throw ParseError(ParseFailure::kMalformed, "rnet: model file: implausible hop count");
  c.d_in = static_cast<int>(d_in);
  c.h = static_cast<int>(h);
  c.classes = static_cast<int>(classes);
  c.hops = static_cast<int>(hops);
  c.head = static_cast<HeadKind>(head);
  c.hidden = static_cast<int>(hidden);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ParseError(ParseFailure::kMalformed, std::string("rnet: model file: ") + e.what());
  }
  ReasoningNet net = ReasoningNet::zeros(c);
  VectorXd flat(static_cast<Index>(net.parameter_count()));
  r.f32s(std::span<double>(flat.data(), static_cast<std::size_t>(flat.size())));
  r.expect_end();
  if (!flat.allFinite()) throw ParseError(ParseFailure::kMalformed, "rnet: model file: non-finite weight");
  net.unflatten(flat);
  return net;
}

void save_net(const ReasoningNet& net, const std::filesystem::path& path) { io::write_file(path, encode_net(net)); }

ReasoningNet load_net(const std::filesystem::path& path) { return decode_net(io::read_file(path)); }

}  // namespace vimprint::rnet
