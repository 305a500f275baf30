#include "vimprint/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include "vimprint/binary_io.hpp"
#include "vimprint/errors.hpp"
#include "vimprint/parallel.hpp"

namespace vimprint {

using nlohmann::json;

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kTcg: return "tcg";
    case ModelKind::kEpitome: return "epitome";
    case ModelKind::kEpitome2Step: return "epitome2step";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "tcg") return ModelKind::kTcg;
  if (name == "epitome") return ModelKind::kEpitome;
  if (name == "epitome2step") return ModelKind::kEpitome2Step;
  throw ConfigError("config: model: unknown model '" + name + "' (tcg, epitome, epitome2step)");
}

namespace {

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config: " + key + ": " + what);
}

json extent_json(Extent2 e) { return json::array({e.x, e.y}); }

Extent2 extent_from(const json& j, const std::string& key) {
  if (j.is_number_integer()) return {j.get<int>(), j.get<int>()};
  if (j.is_array() && j.size() == 2 && j[0].is_number_integer() && j[1].is_number_integer())
    return {j[0].get<int>(), j[1].get<int>()};
  throw ConfigError("config: " + key + ": expected an integer or [x, y]");
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: " + key + ": wrong type");
  }
}

}  // namespace

void PipelineConfig::validate() const {
  require(E.x >= 1 && E.y >= 1, "E", "must be positive");
  require(W.x >= 1 && W.y >= 1, "W", "must be positive");
  require(W.x <= E.x && W.y <= E.y, "W", "window must fit the grid E");
  if (model == ModelKind::kTcg) {
    require(S.x >= 1 && S.y >= 1, "S", "must be positive");
    require(W.x % S.x == 0 && W.y % S.y == 0, "S", "tessellation must divide the window");
  }
  require(d >= 1, "d", "must be >= 1");
  require(tau >= 0.0, "tau", "must be >= 0");
  require(alpha > 0.0 && alpha <= 1.0, "alpha", "must be in (0, 1]");
  require(pca_dim >= 1, "pca_dim", "must be >= 1");
  require(max_iters >= 0, "max_iters", "must be >= 0");
  require(tol >= 0.0, "tol", "must be >= 0");
  require(hops >= 1, "hops", "must be >= 1");
  require(hidden >= 0, "hidden", "must be >= 0");
  require(train.epochs >= 1, "epochs", "must be >= 1");
  require(train.batch_size >= 1, "batch_size", "must be >= 1");
  require(train.learning_rate > 0.0, "learning_rate", "must be > 0");
  require(train.anneal_every >= 1, "anneal_every", "must be >= 1");
  require(train.anneal_factor > 0.0 && train.anneal_factor <= 1.0, "anneal_factor", "must be in (0, 1]");
  require(train.clip_norm > 0.0, "clip_norm", "must be > 0");
  require(train.init_sigma >= 0.0, "init_sigma", "must be >= 0");
  require(n1 >= 1, "n1", "must be >= 1");
  require(n2 >= n1, "n2", "must be >= n1");
  require(workers >= 0, "workers", "must be >= 0");
}

json PipelineConfig::to_json() const {
  json j;
  j["model"] = to_string(model);
  j["E"] = extent_json(E);
  j["W"] = extent_json(W);
  j["S"] = extent_json(S);
  j["d"] = d;
  j["tau"] = tau;
  j["per_frame_tau"] = per_frame_tau;
  j["alpha"] = alpha;
  j["pca_dim"] = pca_dim;
  j["max_iters"] = max_iters;
  j["tol"] = tol;
  j["learn_sigma"] = learn_sigma;
  j["hops"] = hops;
  j["head"] = head == rnet::HeadKind::kSoftmax ? "softmax" : "hidden";
  j["hidden"] = hidden;
  j["epochs"] = train.epochs;
  j["batch_size"] = train.batch_size;
  j["learning_rate"] = train.learning_rate;
  j["anneal_every"] = train.anneal_every;
  j["anneal_factor"] = train.anneal_factor;
  j["clip_norm"] = train.clip_norm;
  j["init_sigma"] = train.init_sigma;
  j["n1"] = n1;
  j["n2"] = n2;
  j["seed"] = seed;
  j["workers"] = workers;
  return j;
}

void PipelineConfig::merge_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "model") model = parse_model_kind(get_as<std::string>(v, k));
    else if (k == "E") E = extent_from(v, k);
    else if (k == "W") W = extent_from(v, k);
    else if (k == "S") S = extent_from(v, k);
    else if (k == "d") d = get_as<int>(v, k);
    else if (k == "tau") tau = get_as<double>(v, k);
    else if (k == "per_frame_tau") per_frame_tau = get_as<bool>(v, k);
    else if (k == "alpha") alpha = get_as<double>(v, k);
    else if (k == "pca_dim") pca_dim = get_as<int>(v, k);
    else if (k == "max_iters") max_iters = get_as<int>(v, k);
    else if (k == "tol") tol = get_as<double>(v, k);
    else if (k == "learn_sigma") learn_sigma = get_as<bool>(v, k);
    else if (k == "hops") hops = get_as<int>(v, k);
    else if (k == "head") {
      const auto name = get_as<std::string>(v, k);
      if (name == "softmax") head = rnet::HeadKind::kSoftmax;
      else if (name == "hidden") head = rnet::HeadKind::kHidden;
      else throw ConfigError("config: head: expected 'softmax' or 'hidden'");
    } else if (k == "hidden") hidden = get_as<int>(v, k);
    else if (k == "epochs") train.epochs = get_as<int>(v, k);
    else if (k == "batch_size") train.batch_size = get_as<int>(v, k);
    else if (k == "learning_rate") train.learning_rate = get_as<double>(v, k);
    else if (k == "anneal_every") train.anneal_every = get_as<int>(v, k);
    else if (k == "anneal_factor") train.anneal_factor = get_as<double>(v, k);
    else if (k == "clip_norm") train.clip_norm = get_as<double>(v, k);
    else if (k == "init_sigma") train.init_sigma = get_as<double>(v, k);
    else if (k == "n1") n1 = get_as<int>(v, k);
    else if (k == "n2") n2 = get_as<int>(v, k);
    else if (k == "seed") seed = get_as<std::uint64_t>(v, k);
    else if (k == "workers") workers = get_as<int>(v, k);
    else throw ConfigError("config: " + k + ": unknown key");
  }
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(ParseFailure::kMalformed, "config: " + path.string() + ": " + e.what());
  }
  PipelineConfig c;
  c.merge_json(j);
  c.validate();
  return c;
}

void echo_config(const PipelineConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / "config.json";
  std::ofstream f(path);
  if (!f) throw IoError("config: cannot write " + path.string());
  f << config.to_json().dump(2) << '\n';
  if (!f) throw IoError("config: failed writing " + path.string());
}

ModelImprint fit_model(const FeatureSequence& seq, const PipelineConfig& config) {
  config.validate();
  const int workers = resolve_workers(config.workers);
  if (config.model == ModelKind::kTcg) {
    seq.validate_nonnegative();
    tcg::TcgConfig c;
    c.grid = config.E;
    c.window = config.W;
    c.tess = config.S;
    c.max_iters = config.max_iters;
    c.tol = config.tol;
    c.seed = config.seed;
    c.workers = workers;
    const TessellatedCounts counts = downsample_to_tessellation(seq, config.S);
    tcg::TcgFit fit = tcg::tcg_fit(counts, c);
    return tcg::TcgImprint{std::move(fit.grid), std::move(fit.posterior)};
  }
  const FeatureSequence frames = resample_frames(seq, config.W);
  epitome::TwoStepConfig c;
  c.grid = config.E;
  c.window = config.W;
  c.max_iters = config.max_iters;
  c.tol = config.tol;
  c.seed = config.seed;
  c.learn_sigma = config.learn_sigma;
  c.workers = workers;
  c.reduced_dim = config.d;
  if (config.model == ModelKind::kEpitome) {
    epitome::EpitomeFit fit = epitome::epitome_fit(frames, c);
    return epitome::EpitomeImprint{std::move(fit.epitome), std::move(fit.posterior)};
  }
  epitome::TwoStepFit fit = epitome::epitome_two_step_fit(frames, c);
  return epitome::EpitomeImprint{std::move(fit.epitome), std::move(fit.posterior)};
}

imprint::VideoImprint to_video_imprint(const ModelImprint& model, std::string video_id) {
  if (const auto* t = std::get_if<tcg::TcgImprint>(&model)) return imprint::from_tcg(t->grid, t->posterior, std::move(video_id));
  const auto& e = std::get<epitome::EpitomeImprint>(model);
  return imprint::from_epitome(e.epitome, e.posterior, std::move(video_id));
}

imprint::VideoImprint build_imprint(const FeatureSequence& seq, const PipelineConfig& config) {
  return to_video_imprint(fit_model(seq, config), seq.video_id);
}

void save_model_imprint(const ModelImprint& model, const std::filesystem::path& path) {
  if (const auto* t = std::get_if<tcg::TcgImprint>(&model)) tcg::save_imprint(*t, path);
  else epitome::save_imprint(std::get<epitome::EpitomeImprint>(model), path);
}

ModelImprint load_model_imprint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "TCGI")) return tcg::decode_imprint(bytes);
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "EPIT")) return epitome::decode_imprint(bytes);
  throw ParseError(ParseFailure::kBadMagic, "imprint: " + path.string() + ": neither a TCGI nor an EPIT file");
}

imprint::ActiveMap active_map_for(const imprint::VideoImprint& imp, const PipelineConfig& config) {
  return imprint::build_active_map(imp.posterior, imp.window, config.tau, config.per_frame_tau);
}

rnet::Example make_example(const imprint::VideoImprint& imp, const PipelineConfig& config,
                           const numerics::PcaModel& descriptor_pca, int label) {
  rnet::Example ex;
  ex.active = active_map_for(imp, config);
  ex.descriptors =
      imprint::postprocess_imprint_descriptors(imprint::descriptor_set(imp, ex.active), descriptor_pca, config.alpha);
  ex.label = label;
  return ex;
}

SpeedupResult benchmark_two_step(const FeatureSequence& seq, const epitome::TwoStepConfig& config) {
  using clock = std::chrono::steady_clock;
  SpeedupResult out;

  const epitome::Epitome init = epitome::epitome_init(seq, config);
  epitome::TwoStepFit two;
  {
    const auto t0 = clock::now();
    two = epitome::epitome_two_step_fit(seq, config);
    out.two_step_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  }
  out.reduced_iterations = two.trace.iterations;

  epitome::EpitomeConfig full_config = config;
  full_config.learn_sigma = false;
  const epitome::Epitome lifted = epitome::lift_to_subspace(init, two.pca);
  epitome::EpitomeFit full;
  {
    const auto t0 = clock::now();
    full = epitome::epitome_fit_from(seq, lifted, full_config);
    out.full_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  }
  out.full_iterations = full.trace.iterations;

  int agree = 0;
  for (int t = 0; t < seq.frames; ++t) agree += full.posterior.argmax(t) == two.posterior.argmax(t);
  out.argmax_agreement = static_cast<double>(agree) / seq.frames;
  for (std::size_t i = 0; i < full.posterior.q.size(); ++i) {
    if (std::max(full.posterior.q[i], two.posterior.q[i]) < 1e-6) continue;
    out.max_abs_dlogq = std::max(out.max_abs_dlogq, std::abs(full.posterior.log_q[i] - two.posterior.log_q[i]));
  }
  return out;
}

}  // namespace vimprint
