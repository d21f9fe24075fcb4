#include "matir/search.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "matir/error.hpp"

namespace matir {

QueryEmbedding QueryEmbedding::from_unit(std::vector<float> values) {
  if (values.empty()) throw Error(ErrorKind::kInvalidQuery, "query embedding is empty");
  double sq = 0.0;
  for (float x : values) {
    if (!std::isfinite(x)) throw Error(ErrorKind::kInvalidQuery, "query embedding is not finite");
    sq += static_cast<double>(x) * x;
  }
  if (std::abs(std::sqrt(sq) - 1.0) > 1e-4) {
    throw Error(ErrorKind::kInvalidQuery, "query embedding is not unit norm");
  }
  return QueryEmbedding(std::move(values));
}

QueryEmbedding ensemble_query(std::span<const std::vector<float>> per_prompt) {
  if (per_prompt.empty()) {
    throw Error(ErrorKind::kInvalidQuery, "no prompt embeddings to ensemble");
  }
  const std::size_t d = per_prompt.front().size();
  if (d == 0) throw Error(ErrorKind::kInvalidQuery, "prompt embedding is empty");
  std::vector<double> mean(d, 0.0);
  for (const auto& e : per_prompt) {
    if (e.size() != d) {
      throw Error(ErrorKind::kInvalidQuery, "prompt embeddings differ in dimension");
    }
    bool nonzero = false;
    for (std::size_t i = 0; i < d; ++i) {
      if (!std::isfinite(e[i])) {
        throw Error(ErrorKind::kInvalidQuery, "prompt embedding is not finite");
      }
      nonzero |= e[i] != 0.0F;
      mean[i] += e[i];
    }
    if (!nonzero) throw Error(ErrorKind::kInvalidQuery, "prompt embedding is all zeros");
  }
  double sq = 0.0;
  for (double& m : mean) {
    m /= static_cast<double>(per_prompt.size());
    sq += m * m;
  }
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorKind::kInvalidQuery, "ensembled query has zero norm");
  }
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(mean[i] / norm);
  return QueryEmbedding::from_unit(std::move(out));
}

void SearchParams::validate() const {
  if (n_k < 1 || n_k > n_c) {
    throw Error(ErrorKind::kInvalidInput,
                "require 1 <= n_k <= n_c (n_k=" + std::to_string(n_k) +
                    ", n_c=" + std::to_string(n_c) + ")");
  }
}

bool ranks_before(const RankedResult& a, const RankedResult& b) {
  if (a.stage1_score != b.stage1_score) return a.stage1_score > b.stage1_score;
  return a.image_id < b.image_id;
}

double dot(std::span<const float> a, std::span<const float> b) {
  const std::size_t n = a.size();
  const float* pa = a.data();
  const float* pb = b.data();
  // Eight independent lanes so the loop vectorizes without reassociation
  // flags; the final reduction order is fixed.
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) {
      acc[k] += static_cast<double>(pa[i + k]) * static_cast<double>(pb[i + k]);
    }
  }
  for (std::size_t k = 0; i < n; ++i, ++k) {
    acc[k] += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
  }
  return ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
}

RankedResult score_image(const QueryEmbedding& q, const ImageEntry& entry,
                         const GalleryIndex& index) {
  if (q.dimension() != index.dimension()) {
    throw Error(ErrorKind::kDimensionMismatch,
                "query dimension " + std::to_string(q.dimension()) +
                    " != index dimension " + std::to_string(index.dimension()));
  }
  RankedResult result{entry.image_id, kNoRegionScore, std::nullopt};
  for (const RegionRecord& region : entry.regions) {
    const double s = dot(q.values(), index.row(region.embedding_row));
    if (!result.best_region || s > result.stage1_score ||
        (s == result.stage1_score && region.mask_id < *result.best_region)) {
      result.stage1_score = s;
      result.best_region = region.mask_id;
    }
  }
  return result;
}

std::vector<RankedResult> search(const QueryEmbedding& q, const GalleryIndex& index,
                                 std::size_t n_c, unsigned threads) {
  if (q.dimension() != index.dimension()) {
    throw Error(ErrorKind::kDimensionMismatch,
                "query dimension " + std::to_string(q.dimension()) +
                    " != index dimension " + std::to_string(index.dimension()));
  }
  const auto& images = index.images();
  std::vector<RankedResult> scored(images.size());
  const std::size_t workers =
      std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(images.size(), 1));

  auto score_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) scored[i] = score_image(q, images[i], index);
  };
  if (workers == 1) {
    score_range(0, images.size());
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (images.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = std::min(images.size(), w * chunk);
      const std::size_t end = std::min(images.size(), begin + chunk);
      pool.emplace_back(score_range, begin, end);
    }
  }

  const std::size_t keep = std::min(n_c, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                    scored.end(), ranks_before);
  scored.resize(keep);
  return scored;
}

MaskId stage1_ground(const QueryEmbedding& q, const ImageEntry& entry,
                     const GalleryIndex& index) {
  if (entry.regions.empty()) {
    throw Error(ErrorKind::kNoRegion, "image " + entry.image_id + " has no regions");
  }
  return *score_image(q, entry, index).best_region;
}

}  // namespace matir
