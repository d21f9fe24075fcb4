#pragma once

#include <json.hpp>

#include "matir/types.hpp"

namespace matir {

// {"size": [h, w], "counts": [...]}
nlohmann::json mask_to_json(const RegionMask& mask);
// Shape-checks the object and validates the runs; throws matir::Error.
RegionMask mask_from_json(const nlohmann::json& value);

// [x, y, w, h]
nlohmann::json bbox_to_json(const BoundingBox& box);
BoundingBox bbox_from_json(const nlohmann::json& value);

}  // namespace matir
