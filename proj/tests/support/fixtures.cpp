#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace matir::testing {

using nlohmann::json;

Pixels decode_pixels(const RegionMask& mask) {
  Pixels px(mask.height, std::vector<int>(mask.width, 0));
  std::size_t idx = 0;
  int value = 0;
  for (std::uint32_t run : mask.counts) {
    for (std::uint32_t k = 0; k < run; ++k, ++idx) {
      px[idx % mask.height][idx / mask.height] = value;
    }
    value = 1 - value;
  }
  return px;
}

RegionMask encode_pixels(const Pixels& pixels) {
  RegionMask m;
  m.height = static_cast<std::uint32_t>(pixels.size());
  m.width = static_cast<std::uint32_t>(pixels.front().size());
  std::vector<int> flat;
  for (std::uint32_t c = 0; c < m.width; ++c) {
    for (std::uint32_t r = 0; r < m.height; ++r) flat.push_back(pixels[r][c]);
  }
  int value = 0;
  std::uint32_t run = 0;
  for (int v : flat) {
    if (v != value) {
      m.counts.push_back(run);
      run = 0;
      value = v;
    }
    ++run;
  }
  m.counts.push_back(run);
  return m;
}

BoundingBox scan_bbox(const Pixels& pixels) {
  int min_r = 1 << 30, max_r = -1, min_c = 1 << 30, max_c = -1;
  for (int r = 0; r < static_cast<int>(pixels.size()); ++r) {
    for (int c = 0; c < static_cast<int>(pixels[r].size()); ++c) {
      if (pixels[r][c]) {
        min_r = std::min(min_r, r);
        max_r = std::max(max_r, r);
        min_c = std::min(min_c, c);
        max_c = std::max(max_c, c);
      }
    }
  }
  return {double(min_c), double(min_r), double(max_c - min_c + 1), double(max_r - min_r + 1)};
}

double pixel_iou(const Pixels& a, const Pixels& b) {
  long inter = 0, uni = 0;
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t c = 0; c < a[r].size(); ++c) {
      inter += a[r][c] && b[r][c];
      uni += a[r][c] || b[r][c];
    }
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

double grid_box_iou(int ax, int ay, int aw, int ah, int bx, int by, int bw, int bh) {
  const int lo_x = std::min(ax, bx), hi_x = std::max(ax + aw, bx + bw);
  const int lo_y = std::min(ay, by), hi_y = std::max(ay + ah, by + bh);
  long inter = 0, uni = 0;
  for (int y = lo_y; y < hi_y; ++y) {
    for (int x = lo_x; x < hi_x; ++x) {
      const bool in_a = x >= ax && x < ax + aw && y >= ay && y < ay + ah;
      const bool in_b = x >= bx && x < bx + bw && y >= by && y < by + bh;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

double naive_ap(const std::vector<bool>& hits, std::size_t total_relevant, std::size_t k) {
  // Precision at every cutoff, averaged over the relevant positions.
  double sum = 0.0;
  for (std::size_t p = 1; p <= std::min(k, hits.size()); ++p) {
    if (!hits[p - 1]) continue;
    std::size_t relevant_so_far = 0;
    for (std::size_t i = 0; i < p; ++i) relevant_so_far += hits[i];
    sum += double(relevant_so_far) / double(p);
  }
  return sum / double(std::min(total_relevant, k));
}

long double reference_dot(const std::vector<float>& a, const float* b, std::size_t n) {
  long double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += (long double)a[i] * (long double)b[i];
  return s;
}

Pixels random_pixels(Rng& rng, int height, int width, double density) {
  std::bernoulli_distribution on(density);
  Pixels px(height, std::vector<int>(width, 0));
  for (auto& row : px) {
    for (int& v : row) v = on(rng) ? 1 : 0;
  }
  return px;
}

std::vector<float> random_unit(Rng& rng, std::uint32_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double sq = 0.0;
  for (double& x : v) {
    x = n(rng);
    sq += x * x;
  }
  std::vector<float> out(dim);
  for (std::uint32_t i = 0; i < dim; ++i) out[i] = float(v[i] / std::sqrt(sq));
  return out;
}

RegionMask rect_mask(std::uint32_t height, std::uint32_t width, std::uint32_t x, std::uint32_t y,
                     std::uint32_t w, std::uint32_t h) {
  Pixels px(height, std::vector<int>(width, 0));
  for (std::uint32_t r = y; r < y + h; ++r) {
    for (std::uint32_t c = x; c < x + w; ++c) px[r][c] = 1;
  }
  return encode_pixels(px);
}

ManifestFiles write_manifest(const std::vector<ImageSpec>& images, std::uint32_t dim) {
  ManifestFiles files;
  std::uint64_t row = 0;
  for (const auto& image : images) {
    json base{{"image_id", image.image_id}, {"width", image.width}, {"height", image.height}};
    if (!image.uri.empty()) base["uri"] = image.uri;
    if (image.regions.empty()) {
      files.manifest += base.dump() + "\n";
      continue;
    }
    for (const auto& region : image.regions) {
      json line = base;
      const BoundingBox b = scan_bbox(decode_pixels(region.mask));
      line["mask_id"] = region.mask_id;
      line["bbox"] = {b.x, b.y, b.w, b.h};
      line["rle"] = {{"size", {region.mask.height, region.mask.width}},
                     {"counts", region.mask.counts}};
      line["embedding_row"] = row++;
      files.manifest += line.dump() + "\n";
      for (std::uint32_t i = 0; i < dim; ++i) {
        std::uint32_t u;
        std::memcpy(&u, &region.embedding[i], 4);
        for (int k = 0; k < 4; ++k) files.blob.push_back(char((u >> (8 * k)) & 0xFF));
      }
    }
  }
  return files;
}

GalleryIndex build_from_specs(const std::vector<ImageSpec>& images, std::uint32_t dim) {
  const ManifestFiles files = write_manifest(images, dim);
  std::istringstream manifest(files.manifest);
  std::istringstream blob(files.blob);
  return build_index(manifest, blob, dim);
}

std::vector<ImageSpec> random_gallery(Rng& rng, int max_images, int max_regions,
                                      std::uint32_t dim) {
  std::uniform_int_distribution<int> n_images(1, max_images);
  std::uniform_int_distribution<int> n_regions(0, max_regions);
  std::uniform_int_distribution<int> ids(0, 999);
  const int n = n_images(rng);
  std::vector<ImageSpec> out;
  std::set<std::string> used;
  for (int i = 0; i < n; ++i) {
    ImageSpec image;
    do {
      image.image_id = "im" + std::to_string(ids(rng));
    } while (!used.insert(image.image_id).second);
    image.width = 12;
    image.height = 10;
    const int k = n_regions(rng);
    std::set<std::int64_t> mask_ids;
    std::uniform_int_distribution<int> mid(0, 200);
    for (int j = 0; j < k; ++j) {
      std::int64_t id;
      do {
        id = mid(rng);
      } while (!mask_ids.insert(id).second);
      std::uniform_int_distribution<std::uint32_t> px(0, 11), py(0, 9);
      const std::uint32_t x = px(rng), y = py(rng);
      std::uniform_int_distribution<std::uint32_t> pw(1, 12 - x), ph(1, 10 - y);
      image.regions.push_back({id, rect_mask(10, 12, x, y, pw(rng), ph(rng)), random_unit(rng, dim)});
    }
    out.push_back(std::move(image));
  }
  return out;
}

PlantedGallery make_planted_gallery(std::uint64_t seed, int n_images, int n_queries,
                                    std::uint32_t dim) {
  Rng rng(seed);
  PlantedGallery g;
  g.dim = dim;
  constexpr std::uint32_t kSize = 32, kTile = 8, kTilesPerSide = kSize / kTile;

  std::vector<std::vector<float>> qvec;
  for (int q = 0; q < n_queries; ++q) {
    const std::string text = "planted object " + std::to_string(q);
    qvec.push_back(random_unit(rng, dim));
    g.query_vectors[text] = qvec.back();
    char id[16];
    std::snprintf(id, sizeof id, "q%02d", q);
    g.query_text[id] = text;
  }

  // Relevant image sets.
  std::vector<std::set<int>> relevant(n_queries);
  std::uniform_int_distribution<int> count(2, 6), pick(0, n_images - 1);
  for (int q = 0; q < n_queries; ++q) {
    const int c = count(rng);
    while (static_cast<int>(relevant[q].size()) < c) relevant[q].insert(pick(rng));
  }

  auto tile_rect = [&](int tile) {
    std::uniform_int_distribution<std::uint32_t> margin(0, 2);
    const std::uint32_t tx = (tile % kTilesPerSide) * kTile, ty = (tile / kTilesPerSide) * kTile;
    const std::uint32_t l = margin(rng), t = margin(rng), r = margin(rng), b = margin(rng);
    return rect_mask(kSize, kSize, tx + l, ty + t, kTile - l - r, kTile - t - b);
  };
  auto perturbed = [&](const std::vector<float>& base) {
    const auto noise = random_unit(rng, dim);
    std::vector<float> v(dim);
    for (std::uint32_t i = 0; i < dim; ++i) v[i] = base[i] + 0.05f * noise[i];
    return v;
  };
  auto distractor = [&] {
    for (;;) {
      auto v = random_unit(rng, dim);
      double worst = 0.0;
      for (const auto& q : qvec) {
        double d = 0.0;
        for (std::uint32_t i = 0; i < dim; ++i) d += double(q[i]) * v[i];
        worst = std::max(worst, d);
      }
      if (worst < 0.6) return v;
    }
  };

  std::map<std::string, std::map<std::string, RegionMask>> gt_masks;  // qid -> image -> mask
  for (int i = 0; i < n_images; ++i) {
    ImageSpec image;
    char id[16];
    std::snprintf(id, sizeof id, "img_%03d", i);
    image.image_id = id;
    image.uri = "mem://" + image.image_id;
    image.width = kSize;
    image.height = kSize;
    std::vector<int> tiles(kTilesPerSide * kTilesPerSide);
    std::iota(tiles.begin(), tiles.end(), 0);
    std::shuffle(tiles.begin(), tiles.end(), rng);
    std::size_t next_tile = 0;
    std::int64_t mask_id = 0;
    for (int q = 0; q < n_queries; ++q) {
      if (!relevant[q].contains(i)) continue;
      RegionSpec region{mask_id++, tile_rect(tiles[next_tile++]), perturbed(qvec[q])};
      char qid[16];
      std::snprintf(qid, sizeof qid, "q%02d", q);
      gt_masks[qid][image.image_id] = region.mask;
      g.planted_region[g.query_text[qid]][image.image_id] = region.mask_id;
      image.regions.push_back(std::move(region));
    }
    std::uniform_int_distribution<int> extra(2, 4);
    for (int k = extra(rng); k > 0; --k) {
      image.regions.push_back({mask_id++, tile_rect(tiles[next_tile++]), distractor()});
    }
    g.images.push_back(std::move(image));
  }
  g.index = build_from_specs(g.images, dim);

  for (const auto& [qid, text] : g.query_text) {
    GroundTruthQuery q{qid, text, {}};
    for (const auto& [image_id, mask] : gt_masks[qid]) q.relevant[image_id] = {mask};
    g.gt.push_back(std::move(q));
  }
  return g;
}

std::string ground_truth_jsonl(const GroundTruth& gt) {
  std::string out;
  for (const auto& q : gt) {
    json relevant = json::array();
    for (const auto& [image_id, masks] : q.relevant) {
      json ms = json::array();
      for (const auto& m : masks) ms.push_back({{"size", {m.height, m.width}}, {"counts", m.counts}});
      relevant.push_back({{"image_id", image_id}, {"masks", ms}});
    }
    out += json{{"query_id", q.query_id}, {"text", q.text}, {"relevant", relevant}}.dump() + "\n";
  }
  return out;
}

}  // namespace matir::testing
