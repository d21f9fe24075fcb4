#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "matir/gallery_index.hpp"
#include "matir/types.hpp"

namespace matir {

// Unit-norm text query embedding.
class QueryEmbedding {
 public:
  // Accepts a vector that is already unit norm (within 1e-4); throws
  // Error(kInvalidQuery) otherwise.
  static QueryEmbedding from_unit(std::vector<float> values);

  std::span<const float> values() const { return values_; }
  std::size_t dimension() const { return values_.size(); }

 private:
  explicit QueryEmbedding(std::vector<float> values) : values_(std::move(values)) {}
  std::vector<float> values_;
};

// Mean of the per-prompt embeddings, then L2-normalized.
QueryEmbedding ensemble_query(std::span<const std::vector<float>> per_prompt);

struct SearchParams {
  std::size_t n_c = 100;
  std::size_t n_k = 50;

  // Throws Error(kInvalidInput) unless 1 <= n_k <= n_c.
  void validate() const;
};

struct RankedResult {
  std::string image_id;
  double stage1_score = -1.0;
  std::optional<MaskId> best_region;

  friend bool operator==(const RankedResult&, const RankedResult&) = default;
};

// Score of an image without regions.
inline constexpr double kNoRegionScore = -1.0;

// Canonical stage-1 order: score descending, then image_id ascending.
bool ranks_before(const RankedResult& a, const RankedResult& b);

// Dot product accumulated in double.
double dot(std::span<const float> a, std::span<const float> b);

// Max cosine over the image's regions; ties go to the smallest mask_id.
RankedResult score_image(const QueryEmbedding& q, const ImageEntry& entry,
                         const GalleryIndex& index);

// Top-n_c images in canonical order. `threads` partitions the gallery; the
// result is identical for every thread count.
std::vector<RankedResult> search(const QueryEmbedding& q, const GalleryIndex& index,
                                 std::size_t n_c, unsigned threads = 1);

// Stage-1-only grounding: the region with the highest similarity.
MaskId stage1_ground(const QueryEmbedding& q, const ImageEntry& entry,
                     const GalleryIndex& index);

}  // namespace matir
