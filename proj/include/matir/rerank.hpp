#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "matir/backend.hpp"
#include "matir/gallery_index.hpp"
#include "matir/search.hpp"

namespace matir {

// softmax over {z_true, z_false}, evaluated as sigmoid(z_true - z_false).
// Throws Error(kInvalidLogit) for non-finite input.
double relevance_from_logits(const LogitPair& logits);

struct RerankedResult {
  std::string image_id;
  double relevance = 0.0;
  double stage1_score = 0.0;
  std::optional<MaskId> best_region;
  // Scorer failed after retries; relevance was forced to 0.
  bool scorer_failed = false;

  friend bool operator==(const RerankedResult&, const RerankedResult&) = default;
};

// Relevance descending, then stage-1 score descending, then image_id.
bool reranks_before(const RerankedResult& a, const RerankedResult& b);

struct RerankOptions {
  std::size_t n_k = 50;
  CallPolicy policy;
  CallLimiter* limiter = nullptr;
  // When every call fails: true degrades to all-zero relevance, false throws
  // Error(kBackendUnavailable).
  bool degrade_on_outage = false;
};

std::vector<RerankedResult> rerank(std::span<const RankedResult> candidates,
                                   RelevanceScorer& scorer, const std::string& query_text,
                                   const GalleryIndex& index, const RerankOptions& options);

}  // namespace matir
