#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "matir/gallery_index.hpp"
#include "matir/types.hpp"

namespace matir {

inline constexpr std::size_t kMapCutoff = 50;
inline constexpr double kMaskHitIou = 0.5;

// Cutoff AP: sum of precision@p over hit positions p <= k, divided by
// min(total_relevant, k). Empty when total_relevant is 0 (query excluded).
std::optional<double> average_precision_at_k(const std::vector<bool>& ranked_hits,
                                             std::size_t total_relevant, std::size_t k);

struct GroundTruthQuery {
  std::string query_id;
  std::string text;
  // image_id -> ground-truth masks of the described object(s).
  std::map<std::string, std::vector<RegionMask>> relevant;
};

using GroundTruth = std::vector<GroundTruthQuery>;

// JSON Lines: {"query_id", "text", "relevant": [{"image_id", "masks": [rle...]}]}.
// Throws Error(kValidation) naming the offending line.
GroundTruth parse_ground_truth(std::istream& in);
GroundTruth load_ground_truth(const std::string& path);

// Throws Error(kValidation) when a relevant image is missing from the gallery
// or a GT mask does not match its image size.
void check_ground_truth(const GroundTruth& gt, const GalleryIndex& index);

struct RankedItem {
  std::string image_id;
  std::optional<RegionMask> mask;
  double score = 0.0;
};

struct QueryRanking {
  std::string query_id;
  std::vector<RankedItem> ranking;
};

// JSON Lines: {"query_id", "ranking": [{"image_id", "mask": rle|null, "score"}]}.
std::vector<QueryRanking> parse_results(std::istream& in);
void write_results(const std::vector<QueryRanking>& results, std::ostream& out);

struct QueryScore {
  std::string query_id;
  double ap_50 = 0.0;
  double ap_50_50 = 0.0;
};

struct EvalReport {
  std::vector<QueryScore> per_query;  // sorted by query_id
  std::vector<std::string> excluded;  // queries without relevant images
  double map_50 = 0.0;
  double map_50_50 = 0.0;
  std::size_t fallback_grounded = 0;
  std::size_t failed_scored = 0;

  nlohmann::json to_json() const;
};

// Both metrics over the top-50 of each ranking. A query with no ranking
// scores 0. Throws Error(kNoEvaluableQueries) when every query is excluded.
EvalReport evaluate(const std::vector<QueryRanking>& results, const GroundTruth& gt);

double map_at_50(const std::vector<QueryRanking>& results, const GroundTruth& gt);
double map_at_50_50(const std::vector<QueryRanking>& results, const GroundTruth& gt);

}  // namespace matir
