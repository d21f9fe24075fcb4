#include "matir/rerank.hpp"

#include <algorithm>
#include <cmath>

#include "matir/error.hpp"

namespace matir {

double relevance_from_logits(const LogitPair& logits) {
  if (!std::isfinite(logits.z_true) || !std::isfinite(logits.z_false)) {
    throw Error(ErrorKind::kInvalidLogit, "relevance logits must be finite");
  }
  const double margin = logits.z_true - logits.z_false;
  if (margin >= 0.0) return 1.0 / (1.0 + std::exp(-margin));
  const double e = std::exp(margin);
  return e / (1.0 + e);
}

bool reranks_before(const RerankedResult& a, const RerankedResult& b) {
  if (a.relevance != b.relevance) return a.relevance > b.relevance;
  if (a.stage1_score != b.stage1_score) return a.stage1_score > b.stage1_score;
  return a.image_id < b.image_id;
}

std::vector<RerankedResult> rerank(std::span<const RankedResult> candidates,
                                   RelevanceScorer& scorer, const std::string& query_text,
                                   const GalleryIndex& index, const RerankOptions& options) {
  std::vector<BackendRequest> requests;
  requests.reserve(candidates.size());
  for (const RankedResult& c : candidates) {
    const ImageEntry* image = index.find_image(c.image_id);
    requests.push_back({image ? image->backend_uri() : c.image_id, query_text});
  }

  const auto relevances = fan_out<double>(
      candidates.size(), options.policy, options.limiter, "scorer",
      [&](std::size_t i) {
        const LogitPair logits = scorer.score(requests[i]);
        try {
          return relevance_from_logits(logits);
        } catch (const Error& e) {
          throw BackendCallError(e.what());
        }
      },
      [&](std::size_t i) { return candidates[i].image_id; });

  std::vector<RerankedResult> out;
  out.reserve(candidates.size());
  std::size_t failures = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const RankedResult& c = candidates[i];
    RerankedResult r{c.image_id, 0.0, c.stage1_score, c.best_region, false};
    if (relevances[i]) {
      r.relevance = *relevances[i];
    } else {
      r.scorer_failed = true;
      ++failures;
    }
    out.push_back(std::move(r));
  }
  if (!candidates.empty() && failures == candidates.size() && !options.degrade_on_outage) {
    throw Error(ErrorKind::kBackendUnavailable,
                "relevance scorer failed for all " + std::to_string(failures) + " candidates");
  }

  const std::size_t keep = std::min(options.n_k, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(),
                    reranks_before);
  out.resize(keep);
  return out;
}

}  // namespace matir
