#include "matir/grounding.hpp"

#include <algorithm>
#include <cmath>

#include "matir/error.hpp"
#include "matir/mask.hpp"

namespace matir {

std::string_view to_string(MaskSource source) {
  switch (source) {
    case MaskSource::kGrounderMatched: return "grounder-matched";
    case MaskSource::kStage1Fallback: return "stage1-fallback";
  }
  return "unknown";
}

MaskMatch match_mask(const BoundingBox& box, const ImageEntry& entry) {
  if (entry.regions.empty()) {
    throw Error(ErrorKind::kNoRegion, "image " + entry.image_id + " has no regions");
  }
  std::optional<MaskMatch> best;
  for (const RegionRecord& region : entry.regions) {
    const double iou = bbox_iou(box, region.bbox);
    if (!best || iou > best->iou || (iou == best->iou && region.mask_id < best->mask_id)) {
      best = MaskMatch{region.mask_id, iou};
    }
  }
  return *best;
}

std::optional<BoundingBox> clamp_pixel_box(const PixelBox& box, const ImageEntry& entry) {
  for (double v : box) {
    if (!std::isfinite(v)) return std::nullopt;
  }
  const double w = entry.width;
  const double h = entry.height;
  const double x1 = std::clamp(box[0], 0.0, w);
  const double y1 = std::clamp(box[1], 0.0, h);
  const double x2 = std::clamp(box[2], 0.0, w);
  const double y2 = std::clamp(box[3], 0.0, h);
  if (!(x2 > x1) || !(y2 > y1)) return std::nullopt;
  return BoundingBox{x1, y1, x2 - x1, y2 - y1};
}

std::vector<GroundedResult> ground(const std::string& query_text,
                                   std::span<const RerankedResult> reranked, Grounder& grounder,
                                   const GalleryIndex& index, const GroundOptions& options) {
  std::vector<const ImageEntry*> entries;
  entries.reserve(reranked.size());
  for (const RerankedResult& r : reranked) {
    const ImageEntry* entry = index.find_image(r.image_id);
    if (!entry) throw Error(ErrorKind::kInvalidInput, "unknown image " + r.image_id);
    entries.push_back(entry);
  }

  // Images without regions cannot be grounded; they skip the backend.
  std::vector<std::size_t> to_call;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i]->regions.empty()) to_call.push_back(i);
  }
  const auto responses = fan_out<std::vector<PixelBox>>(
      to_call.size(), options.policy, options.limiter, "grounder",
      [&](std::size_t k) {
        const ImageEntry& e = *entries[to_call[k]];
        return grounder.ground(BackendRequest{e.backend_uri(), query_text});
      },
      [&](std::size_t k) { return entries[to_call[k]]->image_id; });

  std::vector<GroundedResult> out;
  out.reserve(reranked.size());
  for (const RerankedResult& r : reranked) {
    out.push_back(GroundedResult{r.image_id, r.relevance, r.stage1_score, std::nullopt,
                                 std::nullopt, 0.0, MaskSource::kStage1Fallback,
                                 r.scorer_failed, false});
  }

  std::size_t failures = 0;
  for (std::size_t k = 0; k < to_call.size(); ++k) {
    const std::size_t i = to_call[k];
    const ImageEntry& entry = *entries[i];
    GroundedResult& g = out[i];

    std::optional<MaskMatch> match;
    if (!responses[k]) {
      g.grounder_failed = true;
      ++failures;
    } else if (!responses[k]->empty()) {
      if (auto box = clamp_pixel_box(responses[k]->front(), entry)) {
        match = match_mask(*box, entry);
        if (match->iou <= 0.0) match.reset();
      }
    }

    if (match) {
      g.mask_id = match->mask_id;
      g.matched_iou = match->iou;
      g.source = MaskSource::kGrounderMatched;
    } else {
      const auto& best = reranked[i].best_region;
      if (best && entry.find_region(*best) != nullptr) {
        g.mask_id = *best;
      } else {
        g.mask_id = std::min_element(entry.regions.begin(), entry.regions.end(),
                                     [](const RegionRecord& a, const RegionRecord& b) {
                                       return a.mask_id < b.mask_id;
                                     })->mask_id;
      }
      g.matched_iou = 0.0;
      g.source = MaskSource::kStage1Fallback;
    }
    g.mask = entry.find_region(*g.mask_id)->mask;
  }
  if (!to_call.empty() && failures == to_call.size()) {
    throw Error(ErrorKind::kBackendUnavailable,
                "grounder failed for all " + std::to_string(failures) + " images");
  }
  return out;
}

}  // namespace matir
