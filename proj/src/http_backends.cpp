#include "matir/http_backends.hpp"

#include <cmath>
#include <regex>

#include <httplib.h>

#include "matir/error.hpp"

namespace matir {

using nlohmann::json;

EndpointUrl parse_endpoint_url(const std::string& url) {
  static const std::regex kUrl(R"(^(https?://[^/\s:]+(:\d+)?)(/[^\s]*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, kUrl)) {
    throw Error(ErrorKind::kInvalidInput, "malformed backend URL '" + url + "'");
  }
  std::string prefix = m[3].matched ? m[3].str() : "";
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {m[1].str(), prefix};
}

JsonEndpoint::JsonEndpoint(const std::string& base_url, std::chrono::milliseconds timeout)
    : base_url_(base_url), url_(parse_endpoint_url(base_url)), timeout_(timeout) {}

namespace {

httplib::Client make_client(const EndpointUrl& url, std::chrono::milliseconds timeout) {
  httplib::Client client(url.scheme_host_port);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  client.set_keep_alive(false);
  return client;
}

}  // namespace

json JsonEndpoint::post(const std::string& path, const json& body) const {
  auto client = make_client(url_, timeout_);
  auto res = client.Post(url_.prefix + path, body.dump(), "application/json");
  if (!res) {
    throw BackendCallError("POST " + base_url_ + path + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw BackendCallError("POST " + base_url_ + path + ": HTTP " + std::to_string(res->status));
  }
  try {
    return json::parse(res->body);
  } catch (const json::exception&) {
    throw BackendCallError("POST " + base_url_ + path + ": reply is not JSON");
  }
}

bool JsonEndpoint::reachable() const {
  auto client = make_client(url_, std::min(timeout_, std::chrono::milliseconds(2000)));
  return static_cast<bool>(client.Get(url_.prefix + "/"));
}

std::vector<std::vector<float>> decode_embed_reply(const json& body) {
  if (!body.is_object() || !body.contains("embeddings") || !body["embeddings"].is_array()) {
    throw BackendCallError("embed reply lacks an 'embeddings' array");
  }
  std::vector<std::vector<float>> out;
  for (const json& row : body["embeddings"]) {
    if (!row.is_array()) throw BackendCallError("embedding rows must be arrays");
    std::vector<float> v;
    v.reserve(row.size());
    for (const json& x : row) {
      if (!x.is_number() || !std::isfinite(x.get<double>())) {
        throw BackendCallError("embedding values must be finite numbers");
      }
      v.push_back(x.get<float>());
    }
    out.push_back(std::move(v));
  }
  return out;
}

LogitPair decode_score_reply(const json& body) {
  if (!body.is_object() || !body.contains("z_true") || !body.contains("z_false") ||
      !body["z_true"].is_number() || !body["z_false"].is_number()) {
    throw BackendCallError("score reply needs numeric 'z_true' and 'z_false'");
  }
  return {body["z_true"].get<double>(), body["z_false"].get<double>()};
}

std::vector<PixelBox> decode_ground_reply(const json& body) {
  if (!body.is_object() || !body.contains("boxes") || !body["boxes"].is_array()) {
    throw BackendCallError("ground reply lacks a 'boxes' array");
  }
  std::vector<PixelBox> out;
  for (const json& b : body["boxes"]) {
    if (!b.is_array() || b.size() != 4) throw BackendCallError("boxes must be [x1, y1, x2, y2]");
    PixelBox box{};
    for (std::size_t i = 0; i < 4; ++i) {
      if (!b[i].is_number()) throw BackendCallError("box coordinates must be numbers");
      box[i] = b[i].get<double>();
    }
    out.push_back(box);
  }
  return out;
}

std::vector<std::vector<float>> HttpTextEmbedder::embed_text(const std::vector<std::string>& texts) {
  return decode_embed_reply(endpoint_.post("/v1/embed_text", json{{"texts", texts}}));
}

LogitPair HttpRelevanceScorer::score(const BackendRequest& request) {
  return decode_score_reply(endpoint_.post(
      "/v1/score", json{{"image_uri", request.image_uri}, {"object_text", request.object_text}}));
}

std::vector<PixelBox> HttpGrounder::ground(const BackendRequest& request) {
  return decode_ground_reply(endpoint_.post(
      "/v1/ground", json{{"image_uri", request.image_uri}, {"object_text", request.object_text}}));
}

}  // namespace matir
