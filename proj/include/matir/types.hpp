#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace matir {

using MaskId = std::int64_t;

// Axis-aligned box in pixels; (x, y) is the top-left corner.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// COCO uncompressed RLE: column-major runs, the first run counts background.
struct RegionMask {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint32_t> counts;

  std::uint64_t pixel_count() const {
    return static_cast<std::uint64_t>(height) * width;
  }

  friend bool operator==(const RegionMask&, const RegionMask&) = default;
};

struct RegionRecord {
  MaskId mask_id = 0;
  RegionMask mask;
  BoundingBox bbox;
  std::uint64_t embedding_row = 0;

  friend bool operator==(const RegionRecord&, const RegionRecord&) = default;
};

struct ImageEntry {
  std::string image_id;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<RegionRecord> regions;
  std::optional<std::string> uri;

  // What backends receive as the image reference.
  const std::string& backend_uri() const { return uri ? *uri : image_id; }

  const RegionRecord* find_region(MaskId mask_id) const;

  friend bool operator==(const ImageEntry&, const ImageEntry&) = default;
};

// Row-major boolean grid, the decoded form of a RegionMask.
class MaskGrid {
 public:
  MaskGrid() = default;
  MaskGrid(std::uint32_t height, std::uint32_t width)
      : height_(height), width_(width),
        cells_(static_cast<std::size_t>(height) * width, 0) {}

  std::uint32_t height() const { return height_; }
  std::uint32_t width() const { return width_; }
  bool empty() const { return cells_.empty(); }

  bool at(std::uint32_t row, std::uint32_t col) const {
    return cells_[static_cast<std::size_t>(row) * width_ + col] != 0;
  }
  void set(std::uint32_t row, std::uint32_t col, bool value) {
    cells_[static_cast<std::size_t>(row) * width_ + col] = value ? 1 : 0;
  }

  friend bool operator==(const MaskGrid&, const MaskGrid&) = default;

 private:
  std::uint32_t height_ = 0;
  std::uint32_t width_ = 0;
  std::vector<std::uint8_t> cells_;
};

}  // namespace matir
