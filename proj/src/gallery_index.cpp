#include "matir/gallery_index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <utility>

#include <json.hpp>

#include "matir/error.hpp"
#include "matir/json_io.hpp"
#include "matir/mask.hpp"

namespace matir {

namespace {

constexpr double kUnitNormTolerance = 1e-4;

[[noreturn]] void fail_validation(const std::string& message) {
  throw Error(ErrorKind::kValidation, message);
}

std::string region_label(const ImageEntry& image, const RegionRecord& region) {
  return "image_id=" + image.image_id + " mask_id=" + std::to_string(region.mask_id);
}

}  // namespace

bool normalize_in_place(std::span<float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) return false;
  for (float& x : v) x = static_cast<float>(x / norm);
  return true;
}

GalleryIndex::GalleryIndex(std::uint32_t dimension, std::vector<ImageEntry> images,
                           std::vector<float> embeddings, std::uint32_t version)
    : dimension_(dimension),
      version_(version),
      images_(std::move(images)),
      embeddings_(std::move(embeddings)) {
  if (dimension_ == 0) fail_validation("index dimension must be positive");
  if (embeddings_.size() % dimension_ != 0) {
    fail_validation("embedding block is not a whole number of rows");
  }
  const std::size_t rows = embeddings_.size() / dimension_;

  std::vector<bool> row_used(rows, false);
  std::size_t total_regions = 0;
  for (std::size_t i = 0; i < images_.size(); ++i) {
    const ImageEntry& image = images_[i];
    if (!by_id_.emplace(image.image_id, i).second) {
      fail_validation("duplicate image_id " + image.image_id);
    }
    std::set<MaskId> mask_ids;
    for (const RegionRecord& region : image.regions) {
      const std::string label = region_label(image, region);
      if (!mask_ids.insert(region.mask_id).second) {
        fail_validation("duplicate mask_id: " + label);
      }
      if (region.mask.height != image.height || region.mask.width != image.width) {
        fail_validation("mask size differs from image size: " + label);
      }
      try {
        if (bbox_from_mask(region.mask) != region.bbox) {
          fail_validation("bbox disagrees with mask: " + label);
        }
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kValidation) throw;
        fail_validation(std::string(e.what()) + ": " + label);
      }
      if (region.embedding_row >= rows) {
        fail_validation("embedding_row out of range: " + label);
      }
      if (row_used[region.embedding_row]) {
        fail_validation("embedding_row reused: " + label);
      }
      row_used[region.embedding_row] = true;
      double sq = 0.0;
      for (float x : row(region.embedding_row)) sq += static_cast<double>(x) * x;
      if (!(std::abs(std::sqrt(sq) - 1.0) <= kUnitNormTolerance)) {
        fail_validation("embedding is not unit norm: " + label);
      }
      ++total_regions;
    }
  }
  if (total_regions != rows) {
    fail_validation("index holds " + std::to_string(rows) + " embedding rows but " +
                    std::to_string(total_regions) + " regions");
  }
}

const ImageEntry* GalleryIndex::find_image(std::string_view image_id) const {
  auto it = by_id_.find(std::string(image_id));
  return it == by_id_.end() ? nullptr : &images_[it->second];
}

// ---------------------------------------------------------------------------
// Build from manifest + blob

namespace {

struct PendingRegion {
  RegionRecord record;
  std::size_t line = 0;
};

struct PendingImage {
  ImageEntry entry;
  std::size_t first_line = 0;
  std::vector<std::size_t> region_lines;
};

[[noreturn]] void fail_line(std::size_t line, const std::string& message) {
  throw Error(ErrorKind::kValidation, "manifest line " + std::to_string(line) + ": " + message);
}

std::uint32_t read_dim(const nlohmann::json& obj, const char* key, std::size_t line) {
  if (!obj.contains(key) || !obj[key].is_number_unsigned() ||
      obj[key].get<std::uint64_t>() == 0 ||
      obj[key].get<std::uint64_t>() > std::numeric_limits<std::uint32_t>::max()) {
    fail_line(line, std::string("'") + key + "' must be a positive integer");
  }
  return obj[key].get<std::uint32_t>();
}

}  // namespace

GalleryIndex build_index(std::istream& manifest, std::istream& blob,
                         std::uint32_t dimension) {
  if (dimension == 0) {
    throw Error(ErrorKind::kInvalidInput, "dimension must be positive");
  }
  std::vector<PendingImage> images;
  std::unordered_map<std::string, std::size_t> image_pos;
  // Row -> (image index, region index, line) for norm errors.
  std::map<std::uint64_t, std::pair<std::size_t, std::size_t>> rows;

  std::string text;
  std::size_t line = 0;
  while (std::getline(manifest, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      fail_line(line, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) fail_line(line, "expected a JSON object");
    if (!obj.contains("image_id") || !obj["image_id"].is_string()) {
      fail_line(line, "'image_id' must be a string");
    }
    const std::string image_id = obj["image_id"].get<std::string>();
    const std::uint32_t width = read_dim(obj, "width", line);
    const std::uint32_t height = read_dim(obj, "height", line);
    std::optional<std::string> uri;
    if (obj.contains("uri") && !obj["uri"].is_null()) {
      if (!obj["uri"].is_string()) fail_line(line, "'uri' must be a string");
      uri = obj["uri"].get<std::string>();
    }

    auto [it, inserted] = image_pos.emplace(image_id, images.size());
    if (inserted) {
      PendingImage pending;
      pending.entry.image_id = image_id;
      pending.entry.width = width;
      pending.entry.height = height;
      pending.entry.uri = uri;
      pending.first_line = line;
      images.push_back(std::move(pending));
    }
    PendingImage& image = images[it->second];
    if (image.entry.width != width || image.entry.height != height ||
        image.entry.uri != uri) {
      fail_line(line, "image " + image_id + " metadata disagrees with line " +
                          std::to_string(image.first_line));
    }

    if (!obj.contains("mask_id") || obj["mask_id"].is_null()) continue;

    RegionRecord region;
    if (!obj["mask_id"].is_number_integer()) fail_line(line, "'mask_id' must be an integer");
    region.mask_id = obj["mask_id"].get<MaskId>();
    if (!obj.contains("embedding_row") || !obj["embedding_row"].is_number_unsigned()) {
      fail_line(line, "'embedding_row' must be a non-negative integer");
    }
    region.embedding_row = obj["embedding_row"].get<std::uint64_t>();
    if (!obj.contains("rle")) fail_line(line, "missing 'rle'");
    if (!obj.contains("bbox")) fail_line(line, "missing 'bbox'");
    const std::string label = "image_id=" + image_id + " mask_id=" + std::to_string(region.mask_id);
    try {
      region.mask = mask_from_json(obj["rle"]);
      region.bbox = bbox_from_json(obj["bbox"]);
    } catch (const Error& e) {
      fail_line(line, std::string(e.what()) + " (" + label + ")");
    }
    if (region.mask.height != height || region.mask.width != width) {
      fail_line(line, "rle size differs from image size (" + label + ")");
    }
    BoundingBox derived;
    try {
      derived = bbox_from_mask(region.mask);
    } catch (const Error& e) {
      fail_line(line, std::string(e.what()) + " (" + label + ")");
    }
    if (derived != region.bbox) {
      fail_line(line, "bbox does not match rle-derived box (" + label + ")");
    }
    if (image.entry.find_region(region.mask_id) != nullptr) {
      fail_line(line, "duplicate (image_id, mask_id) (" + label + ")");
    }
    if (!rows.emplace(region.embedding_row,
                      std::make_pair(it->second, image.entry.regions.size()))
             .second) {
      fail_line(line, "embedding_row " + std::to_string(region.embedding_row) +
                          " used twice (" + label + ")");
    }
    image.entry.regions.push_back(std::move(region));
    image.region_lines.push_back(line);
  }

  const std::uint64_t total_regions = rows.size();
  if (total_regions > 0 && rows.rbegin()->first != total_regions - 1) {
    throw Error(ErrorKind::kValidation,
                "embedding_row values are not contiguous 0.." +
                    std::to_string(total_regions - 1));
  }

  const std::uint64_t expected_bytes = total_regions * dimension * sizeof(float);
  std::vector<float> embeddings(total_regions * dimension);
  blob.read(reinterpret_cast<char*>(embeddings.data()),
            static_cast<std::streamsize>(expected_bytes));
  std::uint64_t actual_bytes = static_cast<std::uint64_t>(blob.gcount());
  if (actual_bytes == expected_bytes) {
    char extra[4096];
    while (blob.read(extra, sizeof extra) || blob.gcount() > 0) {
      actual_bytes += static_cast<std::uint64_t>(blob.gcount());
    }
  }
  if (actual_bytes != expected_bytes) {
    throw Error(ErrorKind::kSizeMismatch,
                "embedding blob size mismatch: expected " + std::to_string(expected_bytes) +
                    " bytes (" + std::to_string(total_regions) + " rows x " +
                    std::to_string(dimension) + " dims x 4), got " +
                    std::to_string(actual_bytes));
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (float& x : embeddings) {
      x = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(x)));
    }
  }

  for (const auto& [row, where] : rows) {
    std::span<float> v(embeddings.data() + row * dimension, dimension);
    if (!normalize_in_place(v)) {
      const PendingImage& image = images[where.first];
      fail_line(image.region_lines[where.second],
                "embedding row " + std::to_string(row) + " has zero or non-finite norm");
    }
  }

  std::vector<ImageEntry> entries;
  entries.reserve(images.size());
  for (auto& image : images) entries.push_back(std::move(image.entry));
  return GalleryIndex(dimension, std::move(entries), std::move(embeddings));
}

GalleryIndex build_index(const std::filesystem::path& manifest,
                         const std::filesystem::path& blob, std::uint32_t dimension) {
  std::ifstream manifest_in(manifest);
  if (!manifest_in) {
    throw Error(ErrorKind::kInvalidInput, "cannot open manifest " + manifest.string());
  }
  std::ifstream blob_in(blob, std::ios::binary);
  if (!blob_in) {
    throw Error(ErrorKind::kSizeMismatch,
                "embedding blob size mismatch: cannot open " + blob.string());
  }
  return build_index(manifest_in, blob_in, dimension);
}

// ---------------------------------------------------------------------------
// Binary serialization

namespace {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    static_assert(std::is_integral_v<T>);
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(value);
    char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
    }
    out_.write(bytes, sizeof(T));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void put_raw(const char* data, std::size_t n) {
    out_.write(data, static_cast<std::streamsize>(n));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::uint64_t remaining) : in_(in), remaining_(remaining) {}

  template <typename T>
  T get() {
    static_assert(std::is_integral_v<T>);
    unsigned char bytes[sizeof(T)];
    raw(reinterpret_cast<char*>(bytes), sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<std::make_unsigned_t<T>>(bytes[i]) << (8 * i);
    }
    return static_cast<T>(u);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void raw(char* data, std::uint64_t n) {
    need(n);
    in_.read(data, static_cast<std::streamsize>(n));
    if (static_cast<std::uint64_t>(in_.gcount()) != n) truncated();
    remaining_ -= n;
  }
  void need(std::uint64_t n) const {
    if (n > remaining_) truncated();
  }
  std::uint64_t remaining() const { return remaining_; }

  [[noreturn]] static void truncated() {
    throw Error(ErrorKind::kLoad, "index file is truncated");
  }

 private:
  std::istream& in_;
  std::uint64_t remaining_;
};

}  // namespace

void save_index(const GalleryIndex& index, std::ostream& out) {
  Writer w(out);
  w.put_raw(GalleryIndex::kMagic, sizeof GalleryIndex::kMagic);
  w.put(index.version());
  w.put(index.dimension());
  w.put(static_cast<std::uint64_t>(index.image_count()));
  w.put(static_cast<std::uint64_t>(index.region_count()));
  for (const ImageEntry& image : index.images()) {
    w.put_string(image.image_id);
    w.put(image.width);
    w.put(image.height);
    w.put(static_cast<std::uint8_t>(image.uri.has_value()));
    if (image.uri) w.put_string(*image.uri);
    w.put(static_cast<std::uint32_t>(image.regions.size()));
    for (const RegionRecord& region : image.regions) {
      w.put(region.mask_id);
      w.put(region.embedding_row);
      w.put_f64(region.bbox.x);
      w.put_f64(region.bbox.y);
      w.put_f64(region.bbox.w);
      w.put_f64(region.bbox.h);
      w.put(region.mask.height);
      w.put(region.mask.width);
      w.put(static_cast<std::uint32_t>(region.mask.counts.size()));
      for (std::uint32_t c : region.mask.counts) w.put(c);
    }
  }
  const auto block = index.embeddings();
  if constexpr (std::endian::native == std::endian::little) {
    w.put_raw(reinterpret_cast<const char*>(block.data()), block.size_bytes());
  } else {
    for (float x : block) w.put(std::bit_cast<std::uint32_t>(x));
  }
  if (!out) throw Error(ErrorKind::kInvalidInput, "failed writing index");
}

void save_index(const GalleryIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kInvalidInput, "cannot open " + path.string() + " for writing");
  save_index(index, out);
  out.flush();
  if (!out) throw Error(ErrorKind::kInvalidInput, "failed writing " + path.string());
}

GalleryIndex load_index(std::istream& in) {
  const auto start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto end = in.tellg();
  in.seekg(start);
  if (start < 0 || end < start) throw Error(ErrorKind::kLoad, "index stream is not seekable");
  Reader r(in, static_cast<std::uint64_t>(end - start));

  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, GalleryIndex::kMagic, sizeof magic) != 0) {
    throw Error(ErrorKind::kLoad, "bad magic: not a MATIRIDX index file");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != GalleryIndex::kFormatVersion) {
    throw Error(ErrorKind::kLoad, "unsupported index format version " + std::to_string(version));
  }
  const auto dimension = r.get<std::uint32_t>();
  const auto image_count = r.get<std::uint64_t>();
  const auto region_count = r.get<std::uint64_t>();
  if (dimension == 0) throw Error(ErrorKind::kLoad, "index dimension is zero");

  std::vector<ImageEntry> images;
  for (std::uint64_t i = 0; i < image_count; ++i) {
    r.need(1);
    ImageEntry image;
    image.image_id = r.get_string();
    image.width = r.get<std::uint32_t>();
    image.height = r.get<std::uint32_t>();
    if (r.get<std::uint8_t>() != 0) image.uri = r.get_string();
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t j = 0; j < n; ++j) {
      r.need(1);
      RegionRecord region;
      region.mask_id = r.get<std::int64_t>();
      region.embedding_row = r.get<std::uint64_t>();
      region.bbox.x = r.get_f64();
      region.bbox.y = r.get_f64();
      region.bbox.w = r.get_f64();
      region.bbox.h = r.get_f64();
      region.mask.height = r.get<std::uint32_t>();
      region.mask.width = r.get<std::uint32_t>();
      const auto runs = r.get<std::uint32_t>();
      r.need(static_cast<std::uint64_t>(runs) * 4);
      region.mask.counts.resize(runs);
      for (auto& c : region.mask.counts) c = r.get<std::uint32_t>();
      image.regions.push_back(std::move(region));
    }
    images.push_back(std::move(image));
  }

  const std::uint64_t block_bytes = region_count * dimension * sizeof(float);
  if (region_count != 0 && block_bytes / region_count / sizeof(float) != dimension) {
    throw Error(ErrorKind::kLoad, "embedding block size overflows");
  }
  r.need(block_bytes);
  std::vector<float> embeddings(region_count * dimension);
  r.raw(reinterpret_cast<char*>(embeddings.data()), block_bytes);
  if constexpr (std::endian::native == std::endian::big) {
    for (float& x : embeddings) {
      x = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(x)));
    }
  }
  if (r.remaining() != 0) {
    throw Error(ErrorKind::kLoad, "trailing bytes after embedding block");
  }
  try {
    return GalleryIndex(dimension, std::move(images), std::move(embeddings), version);
  } catch (const Error& e) {
    throw Error(ErrorKind::kLoad, std::string("index file is inconsistent: ") + e.what());
  }
}

GalleryIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kLoad, "cannot open index " + path.string());
  return load_index(in);
}

IndexStats index_stats(const GalleryIndex& index) {
  IndexStats stats;
  stats.image_count = index.image_count();
  stats.region_count = index.region_count();
  stats.dimension = index.dimension();
  if (stats.image_count == 0) return stats;
  stats.min_regions = std::numeric_limits<std::size_t>::max();
  for (const ImageEntry& image : index.images()) {
    stats.min_regions = std::min(stats.min_regions, image.regions.size());
    stats.max_regions = std::max(stats.max_regions, image.regions.size());
  }
  stats.mean_regions =
      static_cast<double>(stats.region_count) / static_cast<double>(stats.image_count);
  return stats;
}

}  // namespace matir
