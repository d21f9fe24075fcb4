#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "matir/backend.hpp"
#include "matir/gallery_index.hpp"
#include "matir/grounding.hpp"
#include "matir/metrics.hpp"
#include "matir/search.hpp"

namespace matir {

enum class PipelineMode { kFull, kStage1, kRerankOnly };

std::string_view to_string(PipelineMode mode);
// Throws Error(kInvalidInput) for anything but "full", "stage1", "rerank-only".
PipelineMode parse_mode(std::string_view text);

struct Backends {
  std::shared_ptr<TextEmbedder> embedder;
  std::shared_ptr<RelevanceScorer> scorer;
  std::shared_ptr<Grounder> grounder;
};

struct PipelineConfig {
  SearchParams params;
  CallPolicy policy;
  bool degrade_on_scorer_outage = false;
  unsigned search_threads = 1;
};

// One row of the final answer.
struct PipelineItem {
  std::string image_id;
  std::optional<double> relevance;  // absent in stage1 mode
  double stage1_score = 0.0;
  std::optional<MaskId> mask_id;
  std::optional<RegionMask> mask;
  std::optional<double> matched_iou;  // only after grounding
  std::string source;                 // grounder-matched | stage1-fallback | stage1
  bool scorer_failed = false;
  bool grounder_failed = false;
};

struct PipelineResult {
  std::vector<PipelineItem> items;
  // Full stage-1 candidate list (top n_c), used for padding in evaluation.
  std::vector<RankedResult> candidates;
};

nlohmann::json to_json(const PipelineItem& item);

// Calls the embedder with retries and checks the reply. Throws
// Error(kInvalidInput) for an empty list, Error(kBackendUnavailable) on
// transport failure, Error(kDimensionMismatch) for wrong-size vectors.
std::vector<std::vector<float>> embed_text_client(TextEmbedder& embedder,
                                                  const std::vector<std::string>& texts,
                                                  std::uint32_t dimension, const CallPolicy& policy);

// Stage-1 search, reranking and grounding over a shared immutable index.
// Thread-safe: concurrent run() calls share only the call limiter.
class Pipeline {
 public:
  Pipeline(std::shared_ptr<const GalleryIndex> index, Backends backends, PipelineConfig config);

  const GalleryIndex& index() const { return *index_; }
  const PipelineConfig& config() const { return config_; }
  const Backends& backends() const { return backends_; }

  // Sends the query text to the embedder and ensembles what comes back.
  QueryEmbedding embed_query(const std::string& text) const;

  // Result length is min(n_k, gallery size). Throws
  // Error(kBackendUnavailable) when the mode needs a backend that is absent
  // or down.
  PipelineResult run(const QueryEmbedding& query, const std::string& query_text,
                     PipelineMode mode, std::optional<std::size_t> n_k = std::nullopt) const;

 private:
  std::shared_ptr<const GalleryIndex> index_;
  Backends backends_;
  PipelineConfig config_;
  std::unique_ptr<CallLimiter> limiter_;
};

struct EvalQuery {
  std::string query_id;
  std::string text;
  std::optional<std::vector<float>> embedding;  // bypasses the embedder
};

struct EvalRun {
  std::vector<QueryRanking> rankings;
  std::size_t fallback_grounded = 0;
  std::size_t failed_scored = 0;
};

// Runs every query through the pipeline and pads each final list with
// stage-1 order (stage-1 masks) up to the metric cutoff. Queries run on up
// to `query_workers` threads; output order follows `queries`.
EvalRun run_evaluation(const Pipeline& pipeline, const std::vector<EvalQuery>& queries,
                       PipelineMode mode, std::size_t query_workers = 1);

}  // namespace matir
