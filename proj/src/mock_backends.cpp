#include "matir/mock_backends.hpp"

#include <cmath>
#include <random>
#include <string_view>

#include <httplib.h>

#include "matir/error.hpp"
#include "matir/http_backends.hpp"
#include "matir/mask.hpp"

namespace matir {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::uint64_t seed, std::string_view a, std::string_view b = {},
                    std::string_view c = {}) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  auto mix = [&h](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    h ^= 0xFF;
    h *= 1099511628211ULL;
  };
  mix(a);
  mix(b);
  mix(c);
  return h;
}

// Uniform in [0, 1), fixed per (seed, endpoint, request).
double request_draw(std::uint64_t seed, std::string_view endpoint, std::string_view a,
                    std::string_view b = {}) {
  std::mt19937_64 rng(fnv1a(seed, endpoint, a, b));
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void inject(const FailureSpec& failure, std::uint64_t seed, std::string_view endpoint,
            std::string_view a, std::string_view b = {}) {
  if (failure.latency.count() > 0) std::this_thread::sleep_for(failure.latency);
  if (failure.error_rate > 0.0 && request_draw(seed, endpoint, a, b) < failure.error_rate) {
    throw BackendCallError(std::string("injected ") + std::string(endpoint) + " failure");
  }
}

std::vector<float> seeded_unit_vector(std::uint64_t seed, const std::string& text,
                                      std::uint32_t dimension) {
  std::mt19937_64 rng(fnv1a(seed, "embed-vector", text));
  std::vector<float> v(dimension);
  double sq = 0.0;
  for (float& x : v) {
    x = static_cast<float>(static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0);
    sq += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(sq);
  for (float& x : v) x = static_cast<float>(x / norm);
  return v;
}

json failure_to_json(const FailureSpec& f) {
  return json{{"error_rate", f.error_rate}, {"latency_ms", f.latency.count()}};
}

FailureSpec failure_from_json(const json& j) {
  FailureSpec f;
  if (j.contains("error_rate")) f.error_rate = j["error_rate"].get<double>();
  if (j.contains("latency_ms")) f.latency = std::chrono::milliseconds(j["latency_ms"].get<long>());
  return f;
}

}  // namespace

json MockSpec::to_json() const {
  json boxes_json = json::object();
  for (const auto& [text, per_image] : boxes) {
    json images = json::object();
    for (const auto& [uri, list] : per_image) {
      json arr = json::array();
      for (const auto& b : list) arr.push_back({b[0], b[1], b[2], b[3]});
      images[uri] = std::move(arr);
    }
    boxes_json[text] = std::move(images);
  }
  return json{{"seed", seed},
              {"dimension", dimension},
              {"embeddings", embeddings},
              {"relevant", relevant},
              {"relevant_logits", {relevant_logits.z_true, relevant_logits.z_false}},
              {"irrelevant_logits", {irrelevant_logits.z_true, irrelevant_logits.z_false}},
              {"invert_scorer", invert_scorer},
              {"boxes", std::move(boxes_json)},
              {"grounder_always_empty", grounder_always_empty},
              {"failures",
               {{"embed", failure_to_json(embed_failure)},
                {"score", failure_to_json(score_failure)},
                {"ground", failure_to_json(ground_failure)}}}};
}

MockSpec MockSpec::from_json(const json& value) {
  MockSpec spec;
  try {
    if (!value.is_object()) throw Error(ErrorKind::kInvalidInput, "mock spec must be an object");
    spec.seed = value.value("seed", std::uint64_t{0});
    spec.dimension = value.value("dimension", kDefaultDimension);
    if (value.contains("embeddings")) {
      spec.embeddings = value["embeddings"].get<decltype(spec.embeddings)>();
    }
    if (value.contains("relevant")) spec.relevant = value["relevant"].get<decltype(spec.relevant)>();
    if (value.contains("relevant_logits")) {
      spec.relevant_logits = {value["relevant_logits"][0].get<double>(),
                              value["relevant_logits"][1].get<double>()};
    }
    if (value.contains("irrelevant_logits")) {
      spec.irrelevant_logits = {value["irrelevant_logits"][0].get<double>(),
                                value["irrelevant_logits"][1].get<double>()};
    }
    spec.invert_scorer = value.value("invert_scorer", false);
    if (value.contains("boxes")) {
      for (const auto& [text, per_image] : value["boxes"].items()) {
        for (const auto& [uri, list] : per_image.items()) {
          auto& out = spec.boxes[text][uri];
          for (const auto& b : list) {
            out.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                           b.at(3).get<double>()});
          }
        }
      }
    }
    spec.grounder_always_empty = value.value("grounder_always_empty", false);
    if (value.contains("failures")) {
      const json& f = value["failures"];
      if (f.contains("embed")) spec.embed_failure = failure_from_json(f["embed"]);
      if (f.contains("score")) spec.score_failure = failure_from_json(f["score"]);
      if (f.contains("ground")) spec.ground_failure = failure_from_json(f["ground"]);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("malformed mock spec: ") + e.what());
  }
  return spec;
}

std::vector<std::vector<float>> MockEmbedder::embed_text(const std::vector<std::string>& texts) {
  std::string joined;
  for (const auto& t : texts) joined += t + '\n';
  inject(spec_->embed_failure, spec_->seed, "embed", joined);
  std::vector<std::vector<float>> out;
  for (const auto& text : texts) {
    if (auto it = spec_->embeddings.find(text); it != spec_->embeddings.end()) {
      out.insert(out.end(), it->second.begin(), it->second.end());
    } else {
      out.push_back(seeded_unit_vector(spec_->seed, text, spec_->dimension));
    }
  }
  return out;
}

LogitPair MockScorer::score(const BackendRequest& request) {
  inject(spec_->score_failure, spec_->seed, "score", request.object_text, request.image_uri);
  bool relevant = false;
  if (auto it = spec_->relevant.find(request.object_text); it != spec_->relevant.end()) {
    relevant = it->second.contains(request.image_uri);
  }
  if (spec_->invert_scorer) relevant = !relevant;
  return relevant ? spec_->relevant_logits : spec_->irrelevant_logits;
}

std::vector<PixelBox> MockGrounder::ground(const BackendRequest& request) {
  inject(spec_->ground_failure, spec_->seed, "ground", request.object_text, request.image_uri);
  if (spec_->grounder_always_empty) return {};
  auto it = spec_->boxes.find(request.object_text);
  if (it == spec_->boxes.end()) return {};
  auto jt = it->second.find(request.image_uri);
  if (jt == it->second.end()) return {};
  return jt->second;
}

Backends make_mock_backends(std::shared_ptr<const MockSpec> spec) {
  return Backends{std::make_shared<MockEmbedder>(spec), std::make_shared<MockScorer>(spec),
                  std::make_shared<MockGrounder>(spec)};
}

MockSpec make_perfect_spec(const GroundTruth& gt, const GalleryIndex& index,
                           const std::map<std::string, std::vector<float>>& planted_queries) {
  MockSpec spec;
  spec.dimension = index.dimension();
  for (const auto& [text, vector] : planted_queries) spec.embeddings[text] = {vector};
  for (const auto& q : gt) {
    auto& relevant = spec.relevant[q.text];
    for (const auto& [image_id, gt_masks] : q.relevant) {
      const ImageEntry* image = index.find_image(image_id);
      if (!image) continue;
      relevant.insert(image->backend_uri());
      const RegionRecord* best = nullptr;
      double best_iou = -1.0;
      for (const auto& region : image->regions) {
        for (const auto& m : gt_masks) {
          if (m.height != region.mask.height || m.width != region.mask.width) continue;
          const double iou = mask_iou(region.mask, m);
          if (iou > best_iou) {
            best_iou = iou;
            best = &region;
          }
        }
      }
      if (best) {
        const BoundingBox& b = best->bbox;
        spec.boxes[q.text][image->backend_uri()] = {{b.x, b.y, b.x + b.w, b.y + b.h}};
      }
    }
  }
  return spec;
}

Backends make_perfect_backends(const GroundTruth& gt, const GalleryIndex& index,
                               const std::map<std::string, std::vector<float>>& planted_queries) {
  return make_mock_backends(
      std::make_shared<const MockSpec>(make_perfect_spec(gt, index, planted_queries)));
}

// ---------------------------------------------------------------------------

MockServer::MockServer(MockSpec spec)
    : spec_(std::make_shared<const MockSpec>(std::move(spec))),
      server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [] { return new httplib::ThreadPool(32); };

  auto embedder = std::make_shared<MockEmbedder>(spec_);
  auto scorer = std::make_shared<MockScorer>(spec_);
  auto grounder = std::make_shared<MockGrounder>(spec_);

  auto reply = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  auto parse_request = [](const httplib::Request& req, BackendRequest& out) {
    json body = json::parse(req.body, nullptr, false);
    if (!body.is_object() || !body.contains("image_uri") || !body["image_uri"].is_string() ||
        !body.contains("object_text") || !body["object_text"].is_string()) {
      return false;
    }
    out = {body["image_uri"].get<std::string>(), body["object_text"].get<std::string>()};
    return true;
  };

  server_->Get("/", [reply](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, json{{"status", "ok"}});
  });
  server_->Post("/v1/embed_text", [embedder, reply](const httplib::Request& req,
                                                    httplib::Response& res) {
    json body = json::parse(req.body, nullptr, false);
    if (!body.is_object() || !body.contains("texts") || !body["texts"].is_array() ||
        body["texts"].empty()) {
      return reply(res, 400, json{{"error", "expected {\"texts\": [string, ...]}"}});
    }
    std::vector<std::string> texts;
    for (const auto& t : body["texts"]) {
      if (!t.is_string()) return reply(res, 400, json{{"error", "texts must be strings"}});
      texts.push_back(t.get<std::string>());
    }
    try {
      reply(res, 200, json{{"embeddings", embedder->embed_text(texts)}});
    } catch (const BackendCallError& e) {
      reply(res, 500, json{{"error", e.what()}});
    }
  });
  server_->Post("/v1/score", [scorer, reply, parse_request](const httplib::Request& req,
                                                            httplib::Response& res) {
    BackendRequest request;
    if (!parse_request(req, request)) {
      return reply(res, 400, json{{"error", "expected image_uri and object_text"}});
    }
    try {
      const LogitPair logits = scorer->score(request);
      reply(res, 200, json{{"z_true", logits.z_true}, {"z_false", logits.z_false}});
    } catch (const BackendCallError& e) {
      reply(res, 500, json{{"error", e.what()}});
    }
  });
  server_->Post("/v1/ground", [grounder, reply, parse_request](const httplib::Request& req,
                                                               httplib::Response& res) {
    BackendRequest request;
    if (!parse_request(req, request)) {
      return reply(res, 400, json{{"error", "expected image_uri and object_text"}});
    }
    try {
      json boxes = json::array();
      for (const auto& b : grounder->ground(request)) boxes.push_back({b[0], b[1], b[2], b[3]});
      reply(res, 200, json{{"boxes", std::move(boxes)}});
    } catch (const BackendCallError& e) {
      reply(res, 500, json{{"error", e.what()}});
    }
  });
}

MockServer::~MockServer() { stop(); }

int MockServer::start(const std::string& host, int port) {
  host_ = host;
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    port_ = server_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ < 0) throw Error(ErrorKind::kInvalidInput, "mock server cannot bind " + host);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void MockServer::run(const std::string& host, int port) {
  host_ = host;
  port_ = port;
  if (!server_->listen(host, port)) {
    throw Error(ErrorKind::kInvalidInput,
                "mock server cannot listen on " + host + ":" + std::to_string(port));
  }
}

void MockServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string MockServer::base_url() const {
  return "http://" + host_ + ":" + std::to_string(port_);
}

}  // namespace matir
