#pragma once

// Test-only fixtures and brute-force oracles. Nothing here calls into the
// code paths it is used to check.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "matir/gallery_index.hpp"
#include "matir/metrics.hpp"
#include "matir/types.hpp"

namespace matir::testing {

using Rng = std::mt19937_64;

// ---- oracles ---------------------------------------------------------------

// Row-major 0/1 grid independent of MaskGrid.
using Pixels = std::vector<std::vector<int>>;

Pixels decode_pixels(const RegionMask& mask);     // straightforward run expansion
RegionMask encode_pixels(const Pixels& pixels);   // column-major scan
BoundingBox scan_bbox(const Pixels& pixels);      // min/max over set pixels
double pixel_iou(const Pixels& a, const Pixels& b);
// Counts covered integer pixels of two integer-aligned boxes.
double grid_box_iou(int ax, int ay, int aw, int ah, int bx, int by, int bw, int bh);
// Textbook cutoff AP written independently.
double naive_ap(const std::vector<bool>& hits, std::size_t total_relevant, std::size_t k);
long double reference_dot(const std::vector<float>& a, const float* b, std::size_t n);

// ---- generators ------------------------------------------------------------

Pixels random_pixels(Rng& rng, int height, int width, double density);
std::vector<float> random_unit(Rng& rng, std::uint32_t dim);
RegionMask rect_mask(std::uint32_t height, std::uint32_t width, std::uint32_t x, std::uint32_t y,
                     std::uint32_t w, std::uint32_t h);

struct RegionSpec {
  std::int64_t mask_id;
  RegionMask mask;
  std::vector<float> embedding;  // not necessarily normalized
};

struct ImageSpec {
  std::string image_id;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::string uri;
  std::vector<RegionSpec> regions;
};

struct ManifestFiles {
  std::string manifest;  // JSON Lines
  std::string blob;      // little-endian float32
};

ManifestFiles write_manifest(const std::vector<ImageSpec>& images, std::uint32_t dim);
GalleryIndex build_from_specs(const std::vector<ImageSpec>& images, std::uint32_t dim);

// Random gallery with at most `max_images` images and `max_regions` regions
// each (zero allowed), rectangles in a small canvas.
std::vector<ImageSpec> random_gallery(Rng& rng, int max_images, int max_regions, std::uint32_t dim);

// Synthetic gallery with known answers: each query has a planted unit
// vector; every relevant image holds one region whose embedding is a small
// perturbation of it, and whose mask is the GT mask. Regions occupy
// disjoint tiles so bbox matching is unambiguous.
struct PlantedGallery {
  std::uint32_t dim = 0;
  std::vector<ImageSpec> images;
  GalleryIndex index;
  GroundTruth gt;
  std::map<std::string, std::vector<float>> query_vectors;  // text -> vector
  std::map<std::string, std::string> query_text;            // query_id -> text
  // query text -> image_id -> mask_id of the planted region
  std::map<std::string, std::map<std::string, std::int64_t>> planted_region;
};

PlantedGallery make_planted_gallery(std::uint64_t seed, int images = 50, int queries = 10,
                                    std::uint32_t dim = 64);

std::string ground_truth_jsonl(const GroundTruth& gt);

}  // namespace matir::testing
