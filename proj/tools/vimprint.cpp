// vimprint: command-line driver for the video-imprint pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vimprint/errors.hpp"
#include "vimprint/features.hpp"
#include "vimprint/imprint.hpp"
#include "vimprint/parallel.hpp"
#include "vimprint/pipeline.hpp"
#include "vimprint/retrieval.hpp"
#include "vimprint/rnet.hpp"

namespace fs = std::filesystem;
using namespace vimprint;

namespace {

int exit_code(const std::string& category) {
  if (category == "domain") return 2;
  if (category == "config") return 3;
  if (category == "numerical") return 4;
  if (category == "io") return 5;
  if (category == "parse") return 6;
  return 1;
}

// Flags shared by every subcommand that reads a PipelineConfig. Only flags
// the user actually passed override the config file.
struct ConfigFlags {
  std::string config_path;
  nlohmann::json overrides = nlohmann::json::object();
  std::string model, head;
  int E = 0, W = 0, S = 0, d = 0, pca_dim = 0, hops = 0, hidden = 0, epochs = 0, max_iters = -1, workers = -1;
  double tau = -1.0, alpha = -1.0;
  std::uint64_t seed = 0;
  bool seed_set = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON pipeline config")->check(CLI::ExistingFile);
    app->add_option("--model", model, "tcg | epitome | epitome2step");
    app->add_option("--E", E, "grid side");
    app->add_option("--W", W, "window side");
    app->add_option("--S", S, "tessellation side (tcg)");
    app->add_option("--d", d, "reduced dimension (epitome2step)");
    app->add_option("--tau", tau, "active-map threshold");
    app->add_option("--alpha", alpha, "power-normalization exponent");
    app->add_option("--pca-dim", pca_dim, "whitening dimension");
    app->add_option("--hops", hops, "memory hops");
    app->add_option("--head", head, "softmax | hidden");
    app->add_option("--hidden", hidden, "hidden width (0: h)");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--max-iters", max_iters, "EM iterations");
    app->add_option("--seed", seed, "random seed")->each([this](const std::string&) { seed_set = true; });
    app->add_option("--workers", workers, "worker threads (default: VIMPRINT_WORKERS or 1)");
  }

  PipelineConfig resolve() {
    PipelineConfig c = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    nlohmann::json j = nlohmann::json::object();
    if (!model.empty()) j["model"] = model;
    if (!head.empty()) j["head"] = head;
    if (E) j["E"] = E;
    if (W) j["W"] = W;
    if (S) j["S"] = S;
    if (d) j["d"] = d;
    if (pca_dim) j["pca_dim"] = pca_dim;
    if (hops) j["hops"] = hops;
    if (hidden) j["hidden"] = hidden;
    if (epochs) j["epochs"] = epochs;
    if (max_iters >= 0) j["max_iters"] = max_iters;
    if (workers >= 0) j["workers"] = workers;
    if (tau >= 0.0) j["tau"] = tau;
    if (alpha >= 0.0) j["alpha"] = alpha;
    if (seed_set) j["seed"] = seed;
    c.merge_json(j);
    c.validate();
    return c;
  }
};

void guard_output(const fs::path& path, bool overwrite) {
  if (!overwrite && fs::exists(path))
    throw IoError("cli: " + path.string() + " exists (pass --overwrite to replace it)");
}

fs::path imprint_path(const fs::path& dir, const std::string& id) { return dir / (id + ".imprint"); }

imprint::VideoImprint load_video(const fs::path& dir, const std::string& id) {
  return to_video_imprint(load_model_imprint(imprint_path(dir, id)), id);
}

// synth -----------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  SynthSpec spec;
  int frame = 8;
  bool overwrite = false;
};

int cmd_synth(SynthArgs& a) {
  a.spec.frame = {a.frame, a.frame};
  guard_output(a.out / "manifest.json", a.overwrite);
  const SynthDataset ds = synth_event_dataset(a.spec);
  write_dataset(ds, a.out);
  nlohmann::json shots = nlohmann::json::object();
  for (std::size_t i = 0; i < ds.videos.size(); ++i) shots[ds.videos[i].video_id] = ds.frame_shots[i];
  std::ofstream(a.out / "frame_shots.json") << shots.dump() << '\n';
  std::printf("synth: %zu videos (%d events, %d distractors) -> %s\n", ds.videos.size(), a.spec.n_events,
              a.spec.n_distractor_videos, a.out.c_str());
  return 0;
}

// imprint ---------------------------------------------------------------------

struct ImprintArgs {
  fs::path manifest, out;
  ConfigFlags flags;
  bool overwrite = false;
};

int cmd_imprint(ImprintArgs& a) {
  PipelineConfig cfg = a.flags.resolve();
  const DatasetManifest m = read_manifest(a.manifest);
  const int workers = resolve_workers(cfg.workers);
  for (const auto& e : m.entries) guard_output(imprint_path(a.out, e.video_id), a.overwrite);
  echo_config(cfg, a.out);
  PipelineConfig inner = cfg;
  inner.workers = 1;
  parallel_for(m.entries.size(), workers, [&](std::size_t i) {
    const auto& e = m.entries[i];
    const FeatureSequence seq = read_features(e.feature_path);
    save_model_imprint(fit_model(seq, inner), imprint_path(a.out, e.video_id));
  });
  std::printf("imprint: %zu videos, model %s -> %s\n", m.entries.size(), to_string(cfg.model).c_str(), a.out.c_str());
  return 0;
}

// aggregate -------------------------------------------------------------------

struct AggregateArgs {
  fs::path manifest, imprints, out;
  std::string method = "imprint";
  ConfigFlags flags;
  bool overwrite = false;
};

int cmd_aggregate(AggregateArgs& a) {
  PipelineConfig cfg = a.flags.resolve();
  if (a.method != "imprint" && a.method != "sum") throw ConfigError("cli: --method must be 'imprint' or 'sum'");
  if (a.method == "imprint" && a.imprints.empty()) throw ConfigError("cli: --imprints is required for --method imprint");
  guard_output(a.out, a.overwrite);
  const DatasetManifest m = read_manifest(a.manifest);
  std::vector<std::vector<double>> raw(m.entries.size());
  int empty = 0;
  parallel_for(m.entries.size(), resolve_workers(cfg.workers), [&](std::size_t i) {
    const auto& e = m.entries[i];
    if (a.method == "sum") {
      raw[i] = imprint::sum_aggregate(read_features(e.feature_path));
    } else {
      const auto imp = load_video(a.imprints, e.video_id);
      raw[i] = imprint::aggregate(imp, active_map_for(imp, cfg));
    }
  });
  const auto pca = imprint::fit_vector_pca(raw, cfg.pca_dim);
  imprint::VectorStore store;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto r = imprint::postprocess_video_vector(raw[i], pca);
    if (r.zero_input) {
      ++empty;
      std::fprintf(stderr, "warning: %s has an empty aggregate\n", m.entries[i].video_id.c_str());
    }
    store.add(m.entries[i].video_id, std::move(r.vector));
  }
  imprint::save_store(store, a.out);
  echo_config(cfg, a.out.parent_path().empty() ? fs::path(".") : a.out.parent_path());
  std::printf("aggregate: %zu vectors of dim %d (%s, %d empty) -> %s\n", store.size(), store.dim, a.method.c_str(),
              empty, a.out.c_str());
  return 0;
}

// train -----------------------------------------------------------------------

struct TrainArgs {
  fs::path manifest, imprints, out;
  ConfigFlags flags;
  bool overwrite = false;
};

double accuracy(const rnet::ReasoningNet& net, const std::vector<rnet::Example>& xs) {
  if (xs.empty()) return 0.0;
  int ok = 0;
  for (const auto& x : xs) ok += rnet::predict(net, x) == x.label;
  return static_cast<double>(ok) / static_cast<double>(xs.size());
}

int cmd_train(TrainArgs& a) {
  PipelineConfig cfg = a.flags.resolve();
  guard_output(a.out / "model.rnet", a.overwrite);
  const DatasetManifest m = read_manifest(a.manifest);
  std::vector<const ManifestEntry*> labeled;
  for (const auto& e : m.entries)
    if (e.label >= 0) labeled.push_back(&e);
  if (labeled.empty()) throw DomainError("cli: manifest has no labeled videos");

  std::vector<imprint::VideoImprint> imps(labeled.size());
  std::vector<imprint::ImprintDescriptorSet> sets(labeled.size());
  parallel_for(labeled.size(), resolve_workers(cfg.workers), [&](std::size_t i) {
    imps[i] = load_video(a.imprints, labeled[i]->video_id);
    sets[i] = imprint::descriptor_set(imps[i], active_map_for(imps[i], cfg));
  });
  std::vector<imprint::ImprintDescriptorSet> fit_sets;
  for (std::size_t i = 0; i < labeled.size(); ++i)
    if (!labeled[i]->is_query) fit_sets.push_back(sets[i]);
  const auto pca = imprint::fit_descriptor_pca(fit_sets, cfg.pca_dim, cfg.alpha);

  std::vector<rnet::Example> train, test;
  int skipped = 0;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (sets[i].vectors.empty()) {
      std::fprintf(stderr, "warning: %s has no active locations; skipped\n", labeled[i]->video_id.c_str());
      ++skipped;
      continue;
    }
    auto ex = make_example(imps[i], cfg, pca, labeled[i]->label);
    (labeled[i]->is_query ? test : train).push_back(std::move(ex));
  }
  rnet::NetConfig nc;
  nc.d_in = nc.h = static_cast<int>(pca.output_dim());
  nc.classes = static_cast<int>(m.label_names.size());
  for (const auto* e : labeled) nc.classes = std::max(nc.classes, e->label + 1);
  nc.hops = cfg.hops;
  nc.head = cfg.head;
  nc.hidden = cfg.hidden;
  rnet::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.workers = resolve_workers(cfg.workers);
  rnet::TrainReport report;
  const auto net = rnet::rnet_train(train, nc, tc, &report);
  rnet::save_net(net, a.out / "model.rnet");
  imprint::save_pca(pca, a.out / "descriptor_pca.vpca");
  echo_config(cfg, a.out);
  std::printf("train: %zu train / %zu test videos, %d skipped, final loss %.4f, train acc %.3f, test acc %.3f -> %s\n",
              train.size(), test.size(), skipped, report.epoch_loss.back(), accuracy(net, train), accuracy(net, test),
              a.out.c_str());
  return 0;
}

// recount ---------------------------------------------------------------------

struct RecountArgs {
  fs::path imprint, model_dir, out;
  int display = 64;
  ConfigFlags flags;
  bool overwrite = false;
};

int cmd_recount(RecountArgs& a) {
  PipelineConfig cfg = a.flags.resolve();
  guard_output(a.out / "importance.csv", a.overwrite);
  const auto net = rnet::load_net(a.model_dir / "model.rnet");
  const auto pca = imprint::load_pca(a.model_dir / "descriptor_pca.vpca");
  const auto imp = to_video_imprint(load_model_imprint(a.imprint), a.imprint.stem().string());
  const auto ex = make_example(imp, cfg, pca, 0);
  const auto fwd = rnet::rnet_forward(net, ex.descriptors, ex.active);
  const auto rc = rnet::recount(fwd.trace, imp.posterior, imp.window);
  rnet::render_recounting(rc, a.out, {{a.display, a.display}});
  echo_config(cfg, a.out);
  Eigen::Index cls = 0;
  fwd.log_probs.maxCoeff(&cls);
  std::printf("recount: %s class %ld, %zu frames, top frame %d -> %s\n", imp.video_id.c_str(), static_cast<long>(cls),
              rc.importance.size(), rc.ranking.empty() ? -1 : rc.ranking.front(), a.out.c_str());
  return 0;
}

// retrieve / eval ---------------------------------------------------------------

struct RetrieveArgs {
  fs::path store, manifest, out;
  std::string rerank = "none";
  int n1 = 10, n2 = 2000, workers = -1;
  bool overwrite = false;
};

int cmd_retrieve(RetrieveArgs& a) {
  guard_output(a.out, a.overwrite);
  const auto store = imprint::load_store(a.store);
  const auto m = read_manifest(a.manifest);
  retrieval::QueryOptions opt;
  if (a.rerank == "none") opt.rerank = retrieval::Rerank::kNone;
  else if (a.rerank == "aqe") opt.rerank = retrieval::Rerank::kAqe;
  else if (a.rerank == "don") opt.rerank = retrieval::Rerank::kDon;
  else throw ConfigError("cli: --rerank must be none, aqe or don");
  opt.n1 = a.n1;
  opt.n2 = a.n2;
  opt.workers = resolve_workers(a.workers > 0 ? a.workers : 0);
  std::vector<std::string> queries;
  for (const auto& e : m.entries)
    if (e.is_query) queries.push_back(e.video_id);
  const auto runs = retrieval::run_queries(store, queries, opt);
  retrieval::write_run(runs, a.out);
  std::printf("retrieve: %zu queries over %zu videos (%s) -> %s\n", runs.size(), store.size(), a.rerank.c_str(),
              a.out.c_str());
  return 0;
}

struct EvalArgs {
  fs::path run, manifest, out;
  bool overwrite = false;
};

int cmd_eval(EvalArgs& a) {
  guard_output(a.out, a.overwrite);
  const auto runs = retrieval::read_run(a.run);
  const auto report = retrieval::evaluate_map(runs, read_manifest(a.manifest));
  for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  retrieval::write_report(report, a.out);
  std::printf("eval: %d queries, %zu events, mAP %.4f -> %s\n", report.evaluated_queries, report.per_event.size(),
              report.overall, a.out.c_str());
  return 0;
}

// bench -----------------------------------------------------------------------

struct BenchArgs {
  fs::path out;
  std::vector<int> depths{2048};
  int d = 64, frames = 200, grid = 24, window = 8, iters = 30;
  std::uint64_t seed = 1;
  int workers = -1;
  bool overwrite = false;
};

int cmd_bench(BenchArgs& a) {
  guard_output(a.out, a.overwrite);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  std::ofstream csv(a.out);
  if (!csv) throw IoError("cli: cannot write " + a.out.string());
  csv << "D,d,full_seconds,two_step_seconds,speedup,max_abs_dlogq\n";
  for (int D : a.depths) {
    SynthSpec spec;
    spec.frames_per_video = a.frames;
    spec.frame = {a.window, a.window};
    spec.depth = D;
    spec.seed = a.seed;
    const auto seq = synth_two_shot_video(spec);
    epitome::TwoStepConfig c;
    c.grid = {a.grid, a.grid};
    c.window = {a.window, a.window};
    c.max_iters = a.iters;
    c.tol = 0.0;
    c.seed = a.seed;
    c.workers = resolve_workers(a.workers > 0 ? a.workers : 0);
    c.reduced_dim = std::min(a.d, D);
    const auto r = benchmark_two_step(seq, c);
    char line[256];
    std::snprintf(line, sizeof line, "%d,%d,%.4f,%.4f,%.3f,%.3g", D, c.reduced_dim, r.full_seconds, r.two_step_seconds,
                  r.full_seconds / r.two_step_seconds, r.max_abs_dlogq);
    csv << line << '\n';
    std::printf("bench: %s (argmax agreement %.3f)\n", line, r.argmax_agreement);
  }
  if (!csv) throw IoError("cli: failed writing " + a.out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video imprint pipeline: alignment, aggregation, reasoning network, retrieval"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a planted synthetic event dataset");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--events", synth.spec.n_events);
  s->add_option("--videos-per-event", synth.spec.videos_per_event);
  s->add_option("--frames", synth.spec.frames_per_video);
  s->add_option("--shot-pool", synth.spec.shot_pool_size);
  s->add_option("--distractor-ratio", synth.spec.distractor_ratio, "fraction of shared shots in event videos");
  s->add_option("--distractors", synth.spec.n_distractor_videos, "distractor videos");
  s->add_option("--shared-shots", synth.spec.n_shared_shots);
  s->add_option("--queries-per-event", synth.spec.queries_per_event);
  s->add_option("--shot-length", synth.spec.shot_length);
  s->add_option("--noise", synth.spec.noise_sigma);
  s->add_option("--depth", synth.spec.depth);
  s->add_option("--frame", synth.frame, "frame side");
  s->add_option("--seed", synth.spec.seed);
  s->add_flag("--overwrite", synth.overwrite);

  ImprintArgs imp;
  auto* i = app.add_subcommand("imprint", "fit an alignment model per video");
  i->add_option("--manifest", imp.manifest)->required()->check(CLI::ExistingFile);
  i->add_option("--out", imp.out, "imprint directory")->required();
  i->add_flag("--overwrite", imp.overwrite);
  imp.flags.attach(i);

  AggregateArgs agg;
  auto* g = app.add_subcommand("aggregate", "build post-processed video vectors (VVEC)");
  g->add_option("--manifest", agg.manifest)->required()->check(CLI::ExistingFile);
  g->add_option("--imprints", agg.imprints, "imprint directory");
  g->add_option("--method", agg.method, "imprint | sum");
  g->add_option("--out", agg.out, "VVEC file")->required();
  g->add_flag("--overwrite", agg.overwrite);
  agg.flags.attach(g);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train the reasoning network on labeled imprints");
  t->add_option("--manifest", tr.manifest)->required()->check(CLI::ExistingFile);
  t->add_option("--imprints", tr.imprints)->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "model directory")->required();
  t->add_flag("--overwrite", tr.overwrite);
  tr.flags.attach(t);

  RecountArgs rc;
  auto* r = app.add_subcommand("recount", "per-frame recounting maps and importance for one video");
  r->add_option("--imprint", rc.imprint)->required()->check(CLI::ExistingFile);
  r->add_option("--model-dir", rc.model_dir, "directory written by train")->required()->check(CLI::ExistingDirectory);
  r->add_option("--out", rc.out)->required();
  r->add_option("--display", rc.display, "heat-map side in pixels");
  r->add_flag("--overwrite", rc.overwrite);
  rc.flags.attach(r);

  RetrieveArgs rt;
  auto* q = app.add_subcommand("retrieve", "rank the store for every query in the manifest");
  q->add_option("--store", rt.store)->required()->check(CLI::ExistingFile);
  q->add_option("--manifest", rt.manifest)->required()->check(CLI::ExistingFile);
  q->add_option("--out", rt.out, "run file")->required();
  q->add_option("--rerank", rt.rerank, "none | aqe | don");
  q->add_option("--n1", rt.n1);
  q->add_option("--n2", rt.n2);
  q->add_option("--workers", rt.workers);
  q->add_flag("--overwrite", rt.overwrite);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "per-event mAP of a run file");
  e->add_option("--run", ev.run)->required()->check(CLI::ExistingFile);
  e->add_option("--manifest", ev.manifest)->required()->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "JSON report")->required();
  e->add_flag("--overwrite", ev.overwrite);

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "full EM against the two-step scheme");
  b->add_option("--out", bn.out, "CSV file")->required();
  b->add_option("--D", bn.depths, "feature depths");
  b->add_option("--d", bn.d);
  b->add_option("--T", bn.frames);
  b->add_option("--E", bn.grid);
  b->add_option("--W", bn.window);
  b->add_option("--iters", bn.iters);
  b->add_option("--seed", bn.seed);
  b->add_option("--workers", bn.workers);
  b->add_flag("--overwrite", bn.overwrite);

  CLI11_PARSE(app, argc, argv);

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (i->parsed()) return cmd_imprint(imp);
    if (g->parsed()) return cmd_aggregate(agg);
    if (t->parsed()) return cmd_train(tr);
    if (r->parsed()) return cmd_recount(rc);
    if (q->parsed()) return cmd_retrieve(rt);
    if (e->parsed()) return cmd_eval(ev);
    if (b->parsed()) return cmd_bench(bn);
  } catch (const Error& err) {
    std::fprintf(stderr, "error[%s]: %s\n", err.category(), err.what());
    return exit_code(err.category());
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error[internal]: %s\n", err.what());
    return 1;
  }
  return 1;
}
