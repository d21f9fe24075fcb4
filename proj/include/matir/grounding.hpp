#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "matir/backend.hpp"
#include "matir/gallery_index.hpp"
#include "matir/rerank.hpp"

namespace matir {

enum class MaskSource { kGrounderMatched, kStage1Fallback };

std::string_view to_string(MaskSource source);

struct GroundedResult {
  std::string image_id;
  double relevance = 0.0;
  double stage1_score = 0.0;
  // Empty only for images without regions.
  std::optional<MaskId> mask_id;
  std::optional<RegionMask> mask;
  double matched_iou = 0.0;
  MaskSource source = MaskSource::kStage1Fallback;
  bool scorer_failed = false;
  bool grounder_failed = false;
};

struct MaskMatch {
  MaskId mask_id = 0;
  double iou = 0.0;
};

// Region whose bbox has the highest IoU with `box`; ties to the smallest
// mask_id. Throws Error(kNoRegion) for an image without regions.
MaskMatch match_mask(const BoundingBox& box, const ImageEntry& entry);

// Clamps corner coordinates to the image and converts to (x, y, w, h).
// Empty when the box is not finite or has no area after clamping.
std::optional<BoundingBox> clamp_pixel_box(const PixelBox& box, const ImageEntry& entry);

struct GroundOptions {
  CallPolicy policy;
  CallLimiter* limiter = nullptr;
};

// One mask per reranked image, in input order.
std::vector<GroundedResult> ground(const std::string& query_text,
                                   std::span<const RerankedResult> reranked, Grounder& grounder,
                                   const GalleryIndex& index, const GroundOptions& options);

}  // namespace matir
