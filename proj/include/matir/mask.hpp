#pragma once

#include <cstdint>

#include "matir/types.hpp"

namespace matir {

// Throws Error(kMalformedMask) when the run sum or run layout is invalid.
void validate_mask(const RegionMask& mask);

MaskGrid rle_decode(const RegionMask& mask);
RegionMask rle_encode(const MaskGrid& grid);

std::uint64_t mask_area(const RegionMask& mask);

// Tight integer-aligned box of the foreground. Throws kEmptyMask when there
// is no foreground pixel.
BoundingBox bbox_from_mask(const RegionMask& mask);

// Continuous-area IoU; two degenerate boxes give 0.
double bbox_iou(const BoundingBox& a, const BoundingBox& b);

// Pixelwise IoU computed directly on the runs. Two empty masks give 0.
double mask_iou(const RegionMask& a, const RegionMask& b);

}  // namespace matir
