#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "matir/types.hpp"

namespace matir {

inline constexpr std::uint32_t kDefaultDimension = 768;

// Offline gallery: image/mask metadata plus one unit-norm float32 row per
// region. Immutable once constructed; safe to share across query threads.
class GalleryIndex {
 public:
  static constexpr char kMagic[8] = {'M', 'A', 'T', 'I', 'R', 'I', 'D', 'X'};
  static constexpr std::uint32_t kFormatVersion = 1;

  GalleryIndex() = default;
  // Validates every invariant (row coverage, mask/bbox agreement, unit norms)
  // and throws Error(kValidation) on the first violation.
  GalleryIndex(std::uint32_t dimension, std::vector<ImageEntry> images,
               std::vector<float> embeddings,
               std::uint32_t version = kFormatVersion);

  std::uint32_t dimension() const { return dimension_; }
  std::uint32_t version() const { return version_; }
  const std::vector<ImageEntry>& images() const { return images_; }
  std::size_t image_count() const { return images_.size(); }
  std::size_t region_count() const { return embeddings_.size() / (dimension_ ? dimension_ : 1); }
  std::span<const float> embeddings() const { return embeddings_; }

  std::span<const float> row(std::uint64_t r) const {
    return {embeddings_.data() + r * dimension_, dimension_};
  }

  // nullptr when the id is not in the gallery.
  const ImageEntry* find_image(std::string_view image_id) const;

  friend bool operator==(const GalleryIndex& a, const GalleryIndex& b) {
    return a.dimension_ == b.dimension_ && a.version_ == b.version_ &&
           a.images_ == b.images_ && a.embeddings_ == b.embeddings_;
  }

 private:
  std::uint32_t dimension_ = kDefaultDimension;
  std::uint32_t version_ = kFormatVersion;
  std::vector<ImageEntry> images_;
  std::vector<float> embeddings_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

struct IndexStats {
  std::size_t image_count = 0;
  std::size_t region_count = 0;
  std::size_t min_regions = 0;
  double mean_regions = 0.0;
  std::size_t max_regions = 0;
  std::uint32_t dimension = 0;
};

// Manifest is JSON Lines, one region per line. A line without "mask_id"
// declares an image that has no regions. The blob is headerless
// little-endian float32, row-major. Errors carry the manifest line number.
GalleryIndex build_index(std::istream& manifest, std::istream& blob,
                         std::uint32_t dimension);
GalleryIndex build_index(const std::filesystem::path& manifest,
                         const std::filesystem::path& blob,
                         std::uint32_t dimension);

void save_index(const GalleryIndex& index, std::ostream& out);
void save_index(const GalleryIndex& index, const std::filesystem::path& path);
GalleryIndex load_index(std::istream& in);
GalleryIndex load_index(const std::filesystem::path& path);

IndexStats index_stats(const GalleryIndex& index);

// Scales v to unit L2 norm in place; returns false when the norm is zero or
// not finite.
bool normalize_in_place(std::span<float> v);

}  // namespace matir
