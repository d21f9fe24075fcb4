#include "matir/service.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "matir/error.hpp"
#include "matir/http_backends.hpp"

namespace matir {

using nlohmann::json;

namespace {

std::optional<std::string> optional_string(const json& value, const char* key) {
  if (!value.contains(key) || value[key].is_null()) return std::nullopt;
  if (!value[key].is_string()) {
    throw Error(ErrorKind::kInvalidInput, std::string("config '") + key + "' must be a string");
  }
  std::string s = value[key].get<std::string>();
  if (s.empty()) return std::nullopt;
  return s;
}

std::pair<std::string, int> split_listen(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw Error(ErrorKind::kInvalidInput, "listen_address must be host:port");
  }
  int port = 0;
  try {
    port = std::stoi(address.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorKind::kInvalidInput, "listen_address must be host:port");
  }
  if (port <= 0 || port > 65535) throw Error(ErrorKind::kInvalidInput, "listen port out of range");
  return {address.substr(0, colon), port};
}

}  // namespace

ServiceConfig ServiceConfig::from_json(const json& value) {
  static const std::set<std::string> kKeys = {
      "index_path", "text_embedder_url", "scorer_url", "grounder_url",
      "n_c", "n_k", "max_in_flight", "call_timeout_s", "retries", "listen_address",
      "degrade_on_scorer_outage", "search_threads"};
  if (!value.is_object()) throw Error(ErrorKind::kInvalidInput, "config must be a JSON object");
  for (const auto& [key, _] : value.items()) {
    if (!kKeys.contains(key)) throw Error(ErrorKind::kInvalidInput, "unknown config key '" + key + "'");
  }
  ServiceConfig c;
  try {
    c.index_path = value.value("index_path", c.index_path);
    c.text_embedder_url = optional_string(value, "text_embedder_url");
    c.scorer_url = optional_string(value, "scorer_url");
    c.grounder_url = optional_string(value, "grounder_url");
    c.n_c = value.value("n_c", c.n_c);
    c.n_k = value.value("n_k", c.n_k);
    c.max_in_flight = value.value("max_in_flight", c.max_in_flight);
    c.call_timeout_s = value.value("call_timeout_s", c.call_timeout_s);
    c.retries = value.value("retries", c.retries);
    c.listen_address = value.value("listen_address", c.listen_address);
    c.degrade_on_scorer_outage = value.value("degrade_on_scorer_outage", c.degrade_on_scorer_outage);
    c.search_threads = value.value("search_threads", c.search_threads);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("bad config value: ") + e.what());
  }
  return c;
}

ServiceConfig ServiceConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInvalidInput, "cannot open config " + path);
  json value = json::parse(in, nullptr, false);
  if (value.is_discarded()) throw Error(ErrorKind::kInvalidInput, "config " + path + " is not JSON");
  return from_json(value);
}

void ServiceConfig::apply_environment() {
  if (const char* index = std::getenv("MATIR_INDEX"); index && *index) index_path = index;
  if (const char* listen = std::getenv("MATIR_LISTEN"); listen && *listen) listen_address = listen;
}

void ServiceConfig::validate() const {
  SearchParams{n_c, n_k}.validate();
  if (max_in_flight == 0) throw Error(ErrorKind::kInvalidInput, "max_in_flight must be >= 1");
  if (!(call_timeout_s > 0.0) || !std::isfinite(call_timeout_s)) {
    throw Error(ErrorKind::kInvalidInput, "call_timeout_s must be positive");
  }
  if (retries < 0) throw Error(ErrorKind::kInvalidInput, "retries must be >= 0");
  for (const auto* url : {&text_embedder_url, &scorer_url, &grounder_url}) {
    if (*url) parse_endpoint_url(**url);
  }
  split_listen(listen_address);
}

PipelineConfig ServiceConfig::pipeline_config() const {
  PipelineConfig p;
  p.params = {n_c, n_k};
  p.policy.max_in_flight = max_in_flight;
  p.policy.timeout = std::chrono::milliseconds(static_cast<long>(std::llround(call_timeout_s * 1000)));
  p.policy.retries = retries;
  p.degrade_on_scorer_outage = degrade_on_scorer_outage;
  p.search_threads = search_threads == 0 ? 1 : search_threads;
  return p;
}

// ---------------------------------------------------------------------------

json search_response_json(const std::string& query_text, PipelineMode mode,
                          const PipelineResult& result) {
  json results = json::array();
  for (const auto& item : result.items) results.push_back(to_json(item));
  return json{{"query_text", query_text},
              {"mode", std::string(to_string(mode))},
              {"results", std::move(results)}};
}

SearchService::SearchService(ServiceConfig config, std::shared_ptr<const GalleryIndex> index,
                             Backends backends, BackendProbe probe)
    : config_(std::move(config)),
      index_(std::move(index)),
      backends_(std::move(backends)),
      probe_(std::move(probe)) {
  config_.validate();
  auto present = [](const auto& backend) -> std::function<bool()> {
    const bool configured = static_cast<bool>(backend);
    return [configured] { return configured; };
  };
  if (!probe_.embedder) probe_.embedder = present(backends_.embedder);
  if (!probe_.scorer) probe_.scorer = present(backends_.scorer);
  if (!probe_.grounder) probe_.grounder = present(backends_.grounder);
  if (index_) {
    pipeline_ = std::make_unique<Pipeline>(index_, backends_, config_.pipeline_config());
  }
}

std::unique_ptr<SearchService> SearchService::from_config(const ServiceConfig& config) {
  config.validate();
  std::shared_ptr<const GalleryIndex> index;
  if (!config.index_path.empty()) {
    try {
      index = std::make_shared<const GalleryIndex>(load_index(config.index_path));
      spdlog::info("loaded index {} ({} images, {} regions)", config.index_path,
                   index->image_count(), index->region_count());
    } catch (const Error& e) {
      spdlog::error("index unavailable: {}", e.what());
    }
  }
  const auto timeout = config.pipeline_config().policy.timeout;
  Backends backends;
  BackendProbe probe;
  if (config.text_embedder_url) {
    auto client = std::make_shared<HttpTextEmbedder>(*config.text_embedder_url, timeout);
    backends.embedder = client;
    probe.embedder = [client] { return client->reachable(); };
  }
  if (config.scorer_url) {
    auto client = std::make_shared<HttpRelevanceScorer>(*config.scorer_url, timeout);
    backends.scorer = client;
    probe.scorer = [client] { return client->reachable(); };
  }
  if (config.grounder_url) {
    auto client = std::make_shared<HttpGrounder>(*config.grounder_url, timeout);
    backends.grounder = client;
    probe.grounder = [client] { return client->reachable(); };
  }
  return std::make_unique<SearchService>(config, std::move(index), std::move(backends),
                                         std::move(probe));
}

namespace {

HttpReply error_reply(int status, const std::string& message) {
  return {status, json{{"error", message}}};
}

HttpReply reply_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kBackendUnavailable:
      return error_reply(503, e.what());
    case ErrorKind::kInvalidInput:
    case ErrorKind::kInvalidQuery:
    case ErrorKind::kDimensionMismatch:
      return error_reply(400, e.what());
    default:
      return error_reply(500, e.what());
  }
}

struct ParsedRequest {
  json body;
  std::optional<std::size_t> n_k;
  std::optional<PipelineMode> mode;
  std::optional<std::string> query_text;
};

std::optional<HttpReply> parse_common(const std::string& text, ParsedRequest& out) {
  out.body = json::parse(text, nullptr, false);
  if (out.body.is_discarded() || !out.body.is_object()) {
    return error_reply(400, "request body must be a JSON object");
  }
  const json& b = out.body;
  if (b.contains("n_k") && !b["n_k"].is_null()) {
    if (!b["n_k"].is_number_unsigned() || b["n_k"].get<std::size_t>() == 0) {
      return error_reply(400, "'n_k' must be a positive integer");
    }
    out.n_k = b["n_k"].get<std::size_t>();
  }
  if (b.contains("mode") && !b["mode"].is_null()) {
    if (!b["mode"].is_string()) return error_reply(400, "'mode' must be a string");
    try {
      out.mode = parse_mode(b["mode"].get<std::string>());
    } catch (const Error& e) {
      return error_reply(400, e.what());
    }
  }
  if (b.contains("query_text") && !b["query_text"].is_null()) {
    if (!b["query_text"].is_string()) return error_reply(400, "'query_text' must be a string");
    out.query_text = b["query_text"].get<std::string>();
  }
  return std::nullopt;
}

}  // namespace

HttpReply SearchService::run(const QueryEmbedding& query, const std::string& text,
                             PipelineMode mode, std::optional<std::size_t> n_k) const {
  if (n_k && *n_k > config_.n_c) {
    return error_reply(400, "n_k must not exceed n_c (" + std::to_string(config_.n_c) + ")");
  }
  const PipelineResult result = pipeline_->run(query, text, mode, n_k);
  return {200, search_response_json(text, mode, result)};
}

HttpReply SearchService::handle_search(const std::string& body) const {
  try {
    ParsedRequest req;
    if (auto bad = parse_common(body, req)) return *bad;
    if (!req.query_text || req.query_text->empty()) {
      return error_reply(400, "'query_text' is required");
    }
    if (!pipeline_) return error_reply(503, "index not loaded");
    QueryEmbedding query = [&] {
      try {
        return pipeline_->embed_query(*req.query_text);
      } catch (const Error& e) {
        // A reply of the wrong shape is the backend's fault, not the caller's.
        if (e.kind() == ErrorKind::kDimensionMismatch || e.kind() == ErrorKind::kInvalidQuery) {
          throw Error(ErrorKind::kBackendUnavailable, std::string("text embedder: ") + e.what());
        }
        throw;
      }
    }();
    return run(query, *req.query_text, req.mode.value_or(PipelineMode::kFull), req.n_k);
  } catch (const Error& e) {
    return reply_for(e);
  } catch (const std::exception& e) {
    return error_reply(500, e.what());
  }
}

HttpReply SearchService::handle_search_embedding(const std::string& body) const {
  try {
    ParsedRequest req;
    if (auto bad = parse_common(body, req)) return *bad;
    const json& b = req.body;
    if (!b.contains("embedding") || !b["embedding"].is_array() || b["embedding"].empty()) {
      return error_reply(400, "'embedding' must be a non-empty array of numbers");
    }
    std::vector<float> values;
    for (const json& x : b["embedding"]) {
      if (!x.is_number()) return error_reply(400, "'embedding' must contain only numbers");
      values.push_back(x.get<float>());
    }
    if (!pipeline_) return error_reply(503, "index not loaded");
    if (values.size() != pipeline_->index().dimension()) {
      return error_reply(400, "embedding dimension " + std::to_string(values.size()) +
                                  " != index dimension " +
                                  std::to_string(pipeline_->index().dimension()));
    }
    const std::vector<std::vector<float>> rows{std::move(values)};
    const QueryEmbedding query = ensemble_query(rows);
    const std::string text = req.query_text.value_or("");
    const PipelineMode mode =
        req.mode.value_or(text.empty() ? PipelineMode::kStage1 : PipelineMode::kFull);
    if (mode != PipelineMode::kStage1 && text.empty()) {
      return error_reply(400, "'query_text' is required for mode " + std::string(to_string(mode)));
    }
    return run(query, text, mode, req.n_k);
  } catch (const Error& e) {
    return reply_for(e);
  } catch (const std::exception& e) {
    return error_reply(500, e.what());
  }
}

HttpReply SearchService::handle_health() const {
  json backends{{"embedder", probe_.embedder()},
                {"scorer", probe_.scorer()},
                {"grounder", probe_.grounder()}};
  if (!index_) {
    return {503, json{{"status", "unavailable"}, {"index", nullptr}, {"backends", backends}}};
  }
  const IndexStats stats = index_stats(*index_);
  const bool all_up = backends["embedder"].get<bool>() && backends["scorer"].get<bool>() &&
                      backends["grounder"].get<bool>();
  return {200, json{{"status", all_up ? "ok" : "degraded"},
                    {"index",
                     {{"images", stats.image_count},
                      {"regions", stats.region_count},
                      {"dimension", stats.dimension},
                      {"min_regions", stats.min_regions},
                      {"mean_regions", stats.mean_regions},
                      {"max_regions", stats.max_regions}}},
                    {"backends", backends}}};
}

void SearchService::mount(httplib::Server& server) const {
  auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  server.Post("/v1/search", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_search(req.body));
  });
  server.Post("/v1/search_embedding",
              [this, send](const httplib::Request& req, httplib::Response& res) {
                send(res, handle_search_embedding(req.body));
              });
  server.Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, handle_health());
  });
}

void SearchService::serve() const {
  httplib::Server server;
  mount(server);
  const auto [host, port] = split_listen(config_.listen_address);
  spdlog::info("listening on {}:{}", host, port);
  if (!server.listen(host, port)) {
    throw Error(ErrorKind::kInvalidInput, "cannot listen on " + config_.listen_address);
  }
}

}  // namespace matir
