#include "matir/mask.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "matir/error.hpp"

namespace matir {

const RegionRecord* ImageEntry::find_region(MaskId mask_id) const {
  for (const auto& region : regions) {
    if (region.mask_id == mask_id) return &region;
  }
  return nullptr;
}

void validate_mask(const RegionMask& mask) {
  if (mask.height == 0 || mask.width == 0) {
    throw Error(ErrorKind::kMalformedMask, "mask has zero height or width");
  }
  if (mask.counts.empty()) {
    throw Error(ErrorKind::kMalformedMask, "mask has no runs");
  }
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < mask.counts.size(); ++i) {
    if (i > 0 && mask.counts[i] == 0) {
      throw Error(ErrorKind::kMalformedMask,
                  "zero-length run at position " + std::to_string(i));
    }
    total += mask.counts[i];
  }
  if (total != mask.pixel_count()) {
    throw Error(ErrorKind::kMalformedMask,
                "run lengths sum to " + std::to_string(total) + ", expected " +
                    std::to_string(mask.pixel_count()));
  }
}

MaskGrid rle_decode(const RegionMask& mask) {
  validate_mask(mask);
  MaskGrid grid(mask.height, mask.width);
  std::uint64_t pos = 0;
  bool foreground = false;
  for (std::uint32_t run : mask.counts) {
    if (foreground) {
      for (std::uint64_t p = pos; p < pos + run; ++p) {
        grid.set(static_cast<std::uint32_t>(p % mask.height),
                 static_cast<std::uint32_t>(p / mask.height), true);
      }
    }
    pos += run;
    foreground = !foreground;
  }
  return grid;
}

RegionMask rle_encode(const MaskGrid& grid) {
  if (grid.empty()) {
    throw Error(ErrorKind::kInvalidInput, "cannot encode an empty grid");
  }
  RegionMask mask{grid.height(), grid.width(), {}};
  bool current = false;
  std::uint32_t run = 0;
  for (std::uint32_t col = 0; col < grid.width(); ++col) {
    for (std::uint32_t row = 0; row < grid.height(); ++row) {
      if (grid.at(row, col) != current) {
        mask.counts.push_back(run);
        run = 0;
        current = !current;
      }
      ++run;
    }
  }
  mask.counts.push_back(run);
  return mask;
}

std::uint64_t mask_area(const RegionMask& mask) {
  std::uint64_t area = 0;
  for (std::size_t i = 1; i < mask.counts.size(); i += 2) area += mask.counts[i];
  return area;
}

BoundingBox bbox_from_mask(const RegionMask& mask) {
  validate_mask(mask);
  const std::uint64_t h = mask.height;
  std::uint64_t min_row = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t max_row = 0;
  std::uint64_t min_col = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t max_col = 0;
  bool any = false;

  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < mask.counts.size(); ++i) {
    const std::uint64_t run = mask.counts[i];
    if (i % 2 == 1 && run > 0) {
      const std::uint64_t first = pos;
      const std::uint64_t last = pos + run - 1;
      const std::uint64_t c0 = first / h;
      const std::uint64_t c1 = last / h;
      min_col = std::min(min_col, c0);
      max_col = std::max(max_col, c1);
      if (c0 == c1) {
        min_row = std::min(min_row, first % h);
        max_row = std::max(max_row, last % h);
      } else {
        // A run spanning a column boundary covers the bottom row of its first
        // column and the top row of its last one.
        min_row = 0;
        max_row = h - 1;
      }
      any = true;
    }
    pos += run;
  }
  if (!any) throw Error(ErrorKind::kEmptyMask, "mask has no foreground pixels");
  return BoundingBox{static_cast<double>(min_col), static_cast<double>(min_row),
                     static_cast<double>(max_col - min_col + 1),
                     static_cast<double>(max_row - min_row + 1)};
}

double bbox_iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double mask_iou(const RegionMask& a, const RegionMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw Error(ErrorKind::kInvalidInput, "mask_iou on masks of different size");
  }
  validate_mask(a);
  validate_mask(b);

  // Merge-walk both run lists; each step consumes the shorter remaining run.
  std::size_t ia = 0, ib = 0;
  std::uint64_t ra = a.counts[0], rb = b.counts[0];
  bool fa = false, fb = false;
  std::uint64_t inter = 0, uni = 0;
  while (ia < a.counts.size() && ib < b.counts.size()) {
    if (ra == 0) {
      if (++ia == a.counts.size()) break;
      ra = a.counts[ia];
      fa = !fa;
      continue;
    }
    if (rb == 0) {
      if (++ib == b.counts.size()) break;
      rb = b.counts[ib];
      fb = !fb;
      continue;
    }
    const std::uint64_t step = std::min(ra, rb);
    if (fa && fb) inter += step;
    if (fa || fb) uni += step;
    ra -= step;
    rb -= step;
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace matir
