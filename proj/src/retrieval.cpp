#include "vimprint/retrieval.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vimprint/errors.hpp"
#include "vimprint/numerics.hpp"
#include "vimprint/parallel.hpp"

namespace vimprint::retrieval {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void sort_items(std::vector<RankedItem>& items) {
  std::stable_sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.video_id < b.video_id;
  });
}

void check_index(std::span<const double> query, const imprint::VectorStore& index) {
  if (index.size() == 0) throw DomainError("retrieval: empty index");
  if (query.size() != static_cast<std::size_t>(index.dim))
    throw DomainError("retrieval: query dim " + std::to_string(query.size()) + " != index dim " +
                      std::to_string(index.dim));
}

std::span<const double> lookup(const imprint::VectorStore& index, const std::string& id) {
  for (std::size_t i = 0; i < index.size(); ++i)
    if (index.ids[i] == id) return index.vectors[i];
  throw DomainError("retrieval: query '" + id + "' is not in the index");
}

}  // namespace

RankedList rank(const std::string& query_id, std::span<const double> query, const imprint::VectorStore& index) {
  check_index(query, index);
  RankedList out;
  out.query_id = query_id;
  out.items.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index.ids[i] == query_id) continue;
    out.items.push_back({index.ids[i], dot(query, index.vectors[i])});
  }
  sort_items(out.items);
  return out;
}

std::vector<double> aqe_expand(const std::string& query_id, std::span<const double> query,
                               const imprint::VectorStore& index, int n1, bool* truncated) {
  if (n1 < 1) throw ConfigError("retrieval: N1 must be >= 1");
  const RankedList first = rank(query_id, query, index);
  const std::size_t take = std::min(first.items.size(), static_cast<std::size_t>(n1));
  if (truncated) *truncated = take < static_cast<std::size_t>(n1);
  std::vector<double> sum(query.begin(), query.end());
  for (std::size_t k = 0; k < take; ++k) {
    const auto v = lookup(index, first.items[k].video_id);
    for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += v[c];
  }
  std::vector<double> out;
  if (!numerics::l2_normalize(sum, out)) out.assign(query.begin(), query.end());
  return out;
}

RankedList aqe_rerank(const std::string& query_id, std::span<const double> query, const imprint::VectorStore& index,
                      int n1) {
  bool truncated = false;
  const auto expanded = aqe_expand(query_id, query, index, n1, &truncated);
  RankedList out = rank(query_id, expanded, index);
  out.expansion_truncated = truncated;
  return out;
}

std::vector<double> neighborhood_means(const imprint::VectorStore& index, int n2) {
  if (n2 < 1) throw ConfigError("retrieval: N2 must be >= 1");
  const std::size_t n = index.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  const std::size_t take = std::min(n - 1, static_cast<std::size_t>(n2));
  std::vector<double> sims;
  for (std::size_t i = 0; i < n; ++i) {
    sims.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sims.push_back(dot(index.vectors[i], index.vectors[j]));
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(take), sims.end(), std::greater<>());
    double s = 0.0;
    for (std::size_t k = 0; k < take; ++k) s += sims[k];
    out[i] = s / static_cast<double>(take);
  }
  return out;
}

RankedList don_rerank(const std::string& query_id, std::span<const double> query, const imprint::VectorStore& index,
                      int n1, std::span<const double> background) {
  if (background.size() != index.size()) throw DomainError("retrieval: background has the wrong length");
  bool truncated = false;
  const auto expanded = aqe_expand(query_id, query, index, n1, &truncated);
  RankedList out;
  out.query_id = query_id;
  out.expansion_truncated = truncated;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index.ids[i] == query_id) continue;
    out.items.push_back({index.ids[i], dot(expanded, index.vectors[i]) - background[i]});
  }
  sort_items(out.items);
  return out;
}

RankedList don_rerank(const std::string& query_id, std::span<const double> query, const imprint::VectorStore& index,
                      int n1, int n2) {
  if (n2 < n1) throw ConfigError("retrieval: N2 must be >= N1");
  check_index(query, index);
  return don_rerank(query_id, query, index, n1, neighborhood_means(index, n2));
}

std::vector<RankedList> run_queries(const imprint::VectorStore& index, const std::vector<std::string>& queries,
                                    const QueryOptions& options) {
  if (options.rerank != Rerank::kNone && options.n1 < 1) throw ConfigError("retrieval: N1 must be >= 1");
  if (options.rerank == Rerank::kDon && options.n2 < options.n1) throw ConfigError("retrieval: N2 must be >= N1");
  std::vector<double> background;
  if (options.rerank == Rerank::kDon) background = neighborhood_means(index, options.n2);
  std::vector<RankedList> out(queries.size());
  parallel_for(queries.size(), resolve_workers(options.workers), [&](std::size_t i) {
    const auto q = lookup(index, queries[i]);
    switch (options.rerank) {
      case Rerank::kNone: out[i] = rank(queries[i], q, index); break;
      case Rerank::kAqe: out[i] = aqe_rerank(queries[i], q, index, options.n1); break;
      case Rerank::kDon: out[i] = don_rerank(queries[i], q, index, options.n1, background); break;
    }
  });
  return out;
}

double average_precision(const std::vector<bool>& relevant_in_rank_order, std::size_t total_relevant) {
  if (total_relevant == 0) throw DomainError("retrieval: AP undefined without relevant items");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < relevant_in_rank_order.size(); ++k) {
    if (!relevant_in_rank_order[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(total_relevant);
}

EvalReport evaluate_map(const std::vector<RankedList>& runs, const DatasetManifest& manifest) {
  EvalReport report;
  std::map<int, std::pair<double, int>> acc;
  for (const RankedList& run : runs) {
    const ManifestEntry* q = manifest.find(run.query_id);
    if (!q) {
      report.warnings.push_back("query '" + run.query_id + "' is not in the manifest; skipped");
      continue;
    }
    if (q->label < 0) {
      report.warnings.push_back("query '" + run.query_id + "' has no event label; skipped");
      continue;
    }
    std::size_t total = 0;
    for (const auto& e : manifest.entries)
      if (e.label == q->label && e.video_id != q->video_id) ++total;
    if (total == 0) {
      report.warnings.push_back("query '" + run.query_id + "' has no relevant targets; excluded");
      continue;
    }
    std::vector<bool> rel;
    rel.reserve(run.items.size());
    for (const auto& item : run.items) {
      const ManifestEntry* e = manifest.find(item.video_id);
      rel.push_back(e && e->label == q->label && item.video_id != q->video_id);
    }
    auto& [sum, count] = acc[q->label];
    sum += average_precision(rel, total);
    ++count;
    ++report.evaluated_queries;
  }
  double total = 0.0;
  for (const auto& [label, sc] : acc) {
    const std::string name = static_cast<std::size_t>(label) < manifest.label_names.size()
                                 ? manifest.label_names[static_cast<std::size_t>(label)]
                                 : std::to_string(label);
    const double m = sc.first / sc.second;
    report.per_event[name] = m;
    total += m;
  }
  report.overall = acc.empty() ? 0.0 : total / static_cast<double>(acc.size());
  return report;
}

void write_run(const std::vector<RankedList>& runs, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("retrieval: cannot write " + path.string());
  char buf[64];
  for (const auto& run : runs)
    for (std::size_t k = 0; k < run.items.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", run.items[k].score);
      f << run.query_id << ' ' << run.items[k].video_id << ' ' << (k + 1) << ' ' << buf << '\n';
    }
  if (!f) throw IoError("retrieval: failed writing " + path.string());
}

std::vector<RankedList> read_run(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("retrieval: cannot read " + path.string());
  std::vector<RankedList> runs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string qid, vid;
    std::size_t rank_pos = 0;
    double score = 0.0;
    std::string extra;
    if (!(in >> qid >> vid >> rank_pos >> score) || (in >> extra))
      throw ParseError(ParseFailure::kMalformed,
                       "retrieval: " + path.string() + ":" + std::to_string(lineno) + ": expected 'query video rank score'");
    if (runs.empty() || runs.back().query_id != qid) runs.push_back({qid, {}, false});
    if (rank_pos != runs.back().items.size() + 1)
      throw ParseError(ParseFailure::kMalformed,
                       "retrieval: " + path.string() + ":" + std::to_string(lineno) + ": ranks out of order");
    runs.back().items.push_back({vid, score});
  }
  return runs;
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["per_event"] = nlohmann::json::object();
  for (const auto& [k, v] : report.per_event) j["per_event"][k] = v;
  j["overall"] = report.overall;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("retrieval: cannot write " + path.string());
  f << j.dump(2) << '\n';
  if (!f) throw IoError("retrieval: failed writing " + path.string());
}

}  // namespace vimprint::retrieval
