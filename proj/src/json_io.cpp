#include "matir/json_io.hpp"

#include <cmath>

#include "matir/error.hpp"
#include "matir/mask.hpp"

namespace matir {

using nlohmann::json;

json mask_to_json(const RegionMask& mask) {
  return json{{"size", {mask.height, mask.width}}, {"counts", mask.counts}};
}

namespace {

std::uint32_t to_u32(const json& v, const char* what) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0 ||
      v.get<std::int64_t>() > static_cast<std::int64_t>(UINT32_MAX)) {
    throw Error(ErrorKind::kMalformedMask, std::string("rle ") + what +
                                               " must be a non-negative integer");
  }
  return v.get<std::uint32_t>();
}

}  // namespace

RegionMask mask_from_json(const json& value) {
  if (!value.is_object() || !value.contains("size") || !value.contains("counts")) {
    throw Error(ErrorKind::kMalformedMask, "rle must be an object with size and counts");
  }
  const json& size = value.at("size");
  const json& counts = value.at("counts");
  if (!size.is_array() || size.size() != 2) {
    throw Error(ErrorKind::kMalformedMask, "rle size must be [h, w]");
  }
  if (!counts.is_array()) {
    throw Error(ErrorKind::kMalformedMask,
                "rle counts must be an array (compressed RLE is not supported)");
  }
  RegionMask mask;
  mask.height = to_u32(size[0], "height");
  mask.width = to_u32(size[1], "width");
  mask.counts.reserve(counts.size());
  for (const auto& c : counts) mask.counts.push_back(to_u32(c, "count"));
  validate_mask(mask);
  return mask;
}

json bbox_to_json(const BoundingBox& box) { return json{box.x, box.y, box.w, box.h}; }

BoundingBox bbox_from_json(const json& value) {
  if (!value.is_array() || value.size() != 4) {
    throw Error(ErrorKind::kInvalidInput, "bbox must be [x, y, w, h]");
  }
  for (const auto& v : value) {
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      throw Error(ErrorKind::kInvalidInput, "bbox entries must be finite numbers");
    }
  }
  BoundingBox box{value[0].get<double>(), value[1].get<double>(),
                  value[2].get<double>(), value[3].get<double>()};
  if (box.w < 0 || box.h < 0) {
    throw Error(ErrorKind::kInvalidInput, "bbox width/height must be non-negative");
  }
  return box;
}

}  // namespace matir
