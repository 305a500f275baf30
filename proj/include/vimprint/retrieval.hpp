#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vimprint/features.hpp"
#include "vimprint/imprint.hpp"

namespace vimprint::retrieval {

struct RankedItem {
  std::string video_id;
  double score = 0.0;
};

struct RankedList {
  std::string query_id;
  std::vector<RankedItem> items;  // descending score, ties by video_id
  bool expansion_truncated = false;  // fewer than N1 neighbors were available
};

/// Exhaustive dot-product ranking of `index` against a unit query. Entries
/// whose id equals `query_id` are left out.
RankedList rank(const std::string& query_id, std::span<const double> query, const imprint::VectorStore& index);

/// l2-normalized mean of the query and its top-n1 results.
std::vector<double> aqe_expand(const std::string& query_id, std::span<const double> query,
                               const imprint::VectorStore& index, int n1, bool* truncated = nullptr);

RankedList aqe_rerank(const std::string& query_id, std::span<const double> query, const imprint::VectorStore& index,
                      int n1);

/// Mean similarity of every indexed vector to its n2 nearest other vectors.
std::vector<double> neighborhood_means(const imprint::VectorStore& index, int n2);

/// AQE expansion, then s(q_exp, d) minus d's neighborhood mean.
RankedList don_rerank(const std::string& query_id, std::span<const double> query, const imprint::VectorStore& index,
                      int n1, int n2);
RankedList don_rerank(const std::string& query_id, std::span<const double> query, const imprint::VectorStore& index,
                      int n1, std::span<const double> background);

enum class Rerank { kNone, kAqe, kDon };

struct QueryOptions {
  Rerank rerank = Rerank::kNone;
  int n1 = 10;
  int n2 = 2000;
  int workers = 1;
};

/// Runs every id in `queries` (each must be in `index`) against the index.
std::vector<RankedList> run_queries(const imprint::VectorStore& index, const std::vector<std::string>& queries,
                                    const QueryOptions& options);

/// Mean of precision at each relevant rank, over `total_relevant` items.
double average_precision(const std::vector<bool>& relevant_in_rank_order, std::size_t total_relevant);

struct EvalReport {
  std::map<std::string, double> per_event;
  double overall = 0.0;
  int evaluated_queries = 0;
  std::vector<std::string> warnings;
};

/// Relevance is a shared event label; distractors are never relevant.
EvalReport evaluate_map(const std::vector<RankedList>& runs, const DatasetManifest& manifest);

/// Lines "query_id video_id rank score" with 1-based ranks.
void write_run(const std::vector<RankedList>& runs, const std::filesystem::path& path);
std::vector<RankedList> read_run(const std::filesystem::path& path);

/// {"per_event": {label: mAP}, "overall": mAP}
void write_report(const EvalReport& report, const std::filesystem::path& path);

}  // namespace vimprint::retrieval
