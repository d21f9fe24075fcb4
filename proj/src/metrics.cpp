#include "matir/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "matir/error.hpp"
#include "matir/json_io.hpp"
#include "matir/mask.hpp"

namespace matir {

using nlohmann::json;

std::optional<double> average_precision_at_k(const std::vector<bool>& ranked_hits,
                                             std::size_t total_relevant, std::size_t k) {
  if (total_relevant == 0) return std::nullopt;
  if (k == 0) throw Error(ErrorKind::kInvalidInput, "AP cutoff k must be positive");
  const std::size_t depth = std::min(k, ranked_hits.size());
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t p = 0; p < depth; ++p) {
    if (ranked_hits[p]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(p + 1);
    }
  }
  return sum / static_cast<double>(std::min(total_relevant, k));
}

namespace {

[[noreturn]] void fail_line(const char* what, std::size_t line, const std::string& message) {
  throw Error(ErrorKind::kValidation,
              std::string(what) + " line " + std::to_string(line) + ": " + message);
}

const json& require(const json& obj, const char* key, std::size_t line, const char* what) {
  if (!obj.contains(key)) fail_line(what, line, std::string("missing '") + key + "'");
  return obj[key];
}

}  // namespace

GroundTruth parse_ground_truth(std::istream& in) {
  constexpr const char* kWhat = "ground truth";
  GroundTruth gt;
  std::set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::exception& e) {
      fail_line(kWhat, line, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) fail_line(kWhat, line, "expected a JSON object");
    GroundTruthQuery q;
    const json& id = require(obj, "query_id", line, kWhat);
    const json& qtext = require(obj, "text", line, kWhat);
    const json& relevant = require(obj, "relevant", line, kWhat);
    if (!id.is_string()) fail_line(kWhat, line, "'query_id' must be a string");
    if (!qtext.is_string()) fail_line(kWhat, line, "'text' must be a string");
    if (!relevant.is_array()) fail_line(kWhat, line, "'relevant' must be an array");
    q.query_id = id.get<std::string>();
    q.text = qtext.get<std::string>();
    if (!seen.insert(q.query_id).second) {
      fail_line(kWhat, line, "duplicate query_id " + q.query_id);
    }
    for (const json& item : relevant) {
      if (!item.is_object() || !item.contains("image_id") || !item["image_id"].is_string() ||
          !item.contains("masks") || !item["masks"].is_array()) {
        fail_line(kWhat, line, "relevant entries need 'image_id' and 'masks'");
      }
      const std::string image_id = item["image_id"].get<std::string>();
      if (item["masks"].empty()) {
        fail_line(kWhat, line, "relevant image " + image_id + " has no masks");
      }
      auto& masks = q.relevant[image_id];
      if (!masks.empty()) fail_line(kWhat, line, "image " + image_id + " listed twice");
      for (const json& m : item["masks"]) {
        try {
          masks.push_back(mask_from_json(m));
        } catch (const Error& e) {
          fail_line(kWhat, line, std::string(e.what()) + " (image " + image_id + ")");
        }
      }
    }
    gt.push_back(std::move(q));
  }
  return gt;
}

GroundTruth load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInvalidInput, "cannot open ground truth " + path);
  return parse_ground_truth(in);
}

void check_ground_truth(const GroundTruth& gt, const GalleryIndex& index) {
  for (const auto& q : gt) {
    for (const auto& [image_id, masks] : q.relevant) {
      const ImageEntry* image = index.find_image(image_id);
      if (!image) {
        throw Error(ErrorKind::kValidation,
                    "query " + q.query_id + ": relevant image " + image_id + " is not in the gallery");
      }
      for (const auto& m : masks) {
        if (m.height != image->height || m.width != image->width) {
          throw Error(ErrorKind::kValidation, "query " + q.query_id + ": GT mask for " +
                                                  image_id + " differs from image size");
        }
      }
    }
  }
}

std::vector<QueryRanking> parse_results(std::istream& in) {
  constexpr const char* kWhat = "results";
  std::vector<QueryRanking> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::exception& e) {
      fail_line(kWhat, line, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) fail_line(kWhat, line, "expected a JSON object");
    const json& id = require(obj, "query_id", line, kWhat);
    const json& ranking = require(obj, "ranking", line, kWhat);
    if (!id.is_string() || !ranking.is_array()) {
      fail_line(kWhat, line, "'query_id' must be a string and 'ranking' an array");
    }
    QueryRanking q{id.get<std::string>(), {}};
    for (const json& item : ranking) {
      if (!item.is_object() || !item.contains("image_id") || !item["image_id"].is_string()) {
        fail_line(kWhat, line, "ranking entries need a string 'image_id'");
      }
      RankedItem r;
      r.image_id = item["image_id"].get<std::string>();
      if (item.contains("mask") && !item["mask"].is_null()) {
        try {
          r.mask = mask_from_json(item["mask"]);
        } catch (const Error& e) {
          fail_line(kWhat, line, e.what());
        }
      }
      if (item.contains("score") && item["score"].is_number()) r.score = item["score"].get<double>();
      q.ranking.push_back(std::move(r));
    }
    out.push_back(std::move(q));
  }
  return out;
}

void write_results(const std::vector<QueryRanking>& results, std::ostream& out) {
  for (const auto& q : results) {
    json ranking = json::array();
    for (const auto& r : q.ranking) {
      ranking.push_back({{"image_id", r.image_id},
                         {"mask", r.mask ? mask_to_json(*r.mask) : json(nullptr)},
                         {"score", r.score}});
    }
    out << json{{"query_id", q.query_id}, {"ranking", std::move(ranking)}}.dump() << '\n';
  }
}

json EvalReport::to_json() const {
  json queries = json::array();
  for (const auto& q : per_query) {
    queries.push_back({{"query_id", q.query_id}, {"ap_50", q.ap_50}, {"ap_50_50", q.ap_50_50}});
  }
  return json{{"map_50", map_50},
              {"map_50_50", map_50_50},
              {"evaluated_queries", per_query.size()},
              {"excluded_queries", excluded},
              {"fallback_grounded", fallback_grounded},
              {"failed_scored", failed_scored},
              {"per_query", std::move(queries)}};
}

namespace {

bool mask_hits(const std::optional<RegionMask>& predicted, const std::vector<RegionMask>& gt_masks) {
  if (!predicted) return false;
  for (const auto& gt : gt_masks) {
    if (gt.height == predicted->height && gt.width == predicted->width &&
        mask_iou(*predicted, gt) >= kMaskHitIou) {
      return true;
    }
  }
  return false;
}

}  // namespace

EvalReport evaluate(const std::vector<QueryRanking>& results, const GroundTruth& gt) {
  std::unordered_map<std::string, const QueryRanking*> by_query;
  for (const auto& r : results) {
    if (!by_query.emplace(r.query_id, &r).second) {
      throw Error(ErrorKind::kValidation, "results list query " + r.query_id + " twice");
    }
  }

  std::vector<const GroundTruthQuery*> ordered;
  for (const auto& q : gt) ordered.push_back(&q);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->query_id < b->query_id; });

  EvalReport report;
  for (const GroundTruthQuery* q : ordered) {
    std::vector<bool> image_hits;
    std::vector<bool> mask_hit;
    if (auto it = by_query.find(q->query_id); it != by_query.end()) {
      std::set<std::string> seen;
      const auto& ranking = it->second->ranking;
      const std::size_t depth = std::min(ranking.size(), kMapCutoff);
      for (std::size_t p = 0; p < depth; ++p) {
        const RankedItem& item = ranking[p];
        auto rel = q->relevant.find(item.image_id);
        const bool first = seen.insert(item.image_id).second;
        const bool relevant = first && rel != q->relevant.end();
        image_hits.push_back(relevant);
        mask_hit.push_back(relevant && mask_hits(item.mask, rel->second));
      }
    }
    const auto ap = average_precision_at_k(image_hits, q->relevant.size(), kMapCutoff);
    if (!ap) {
      report.excluded.push_back(q->query_id);
      continue;
    }
    const auto ap_mask = average_precision_at_k(mask_hit, q->relevant.size(), kMapCutoff);
    report.per_query.push_back({q->query_id, *ap, *ap_mask});
  }
  for (const auto& r : results) {
    if (std::none_of(gt.begin(), gt.end(),
                     [&](const GroundTruthQuery& q) { return q.query_id == r.query_id; })) {
      spdlog::warn("results for query {} have no ground truth; ignored", r.query_id);
    }
  }
  if (report.per_query.empty()) {
    throw Error(ErrorKind::kNoEvaluableQueries, "no query has a relevant image");
  }
  double sum50 = 0.0;
  double sum5050 = 0.0;
  for (const auto& q : report.per_query) {
    sum50 += q.ap_50;
    sum5050 += q.ap_50_50;
  }
  report.map_50 = sum50 / static_cast<double>(report.per_query.size());
  report.map_50_50 = sum5050 / static_cast<double>(report.per_query.size());
  return report;
}

double map_at_50(const std::vector<QueryRanking>& results, const GroundTruth& gt) {
  return evaluate(results, gt).map_50;
}

double map_at_50_50(const std::vector<QueryRanking>& results, const GroundTruth& gt) {
  return evaluate(results, gt).map_50_50;
}

}  // namespace matir
