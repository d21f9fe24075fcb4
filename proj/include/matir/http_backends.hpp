#pragma once

#include <chrono>
#include <string>

#include <json.hpp>

#include "matir/backend.hpp"

namespace matir {

// "http://host:port[/prefix]" split for httplib.
struct EndpointUrl {
  std::string scheme_host_port;
  std::string prefix;
};

// Throws Error(kInvalidInput) on anything that is not http(s)://host[:port][/path].
EndpointUrl parse_endpoint_url(const std::string& url);

// POSTs JSON to {base}{path}. The timeout bounds connect, read and write.
// Throws BackendCallError on transport errors, non-200 or non-JSON replies.
class JsonEndpoint {
 public:
  JsonEndpoint(const std::string& base_url, std::chrono::milliseconds timeout);

  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;
  // True when anything answers HTTP at the base address.
  bool reachable() const;
  const std::string& base_url() const { return base_url_; }

 private:
  std::string base_url_;
  EndpointUrl url_;
  std::chrono::milliseconds timeout_;
};

class HttpTextEmbedder : public TextEmbedder {
 public:
  HttpTextEmbedder(const std::string& base_url, std::chrono::milliseconds timeout)
      : endpoint_(base_url, timeout) {}
  std::vector<std::vector<float>> embed_text(const std::vector<std::string>& texts) override;
  bool reachable() const { return endpoint_.reachable(); }

 private:
  JsonEndpoint endpoint_;
};

class HttpRelevanceScorer : public RelevanceScorer {
 public:
  HttpRelevanceScorer(const std::string& base_url, std::chrono::milliseconds timeout)
      : endpoint_(base_url, timeout) {}
  LogitPair score(const BackendRequest& request) override;
  bool reachable() const { return endpoint_.reachable(); }

 private:
  JsonEndpoint endpoint_;
};

class HttpGrounder : public Grounder {
 public:
  HttpGrounder(const std::string& base_url, std::chrono::milliseconds timeout)
      : endpoint_(base_url, timeout) {}
  std::vector<PixelBox> ground(const BackendRequest& request) override;
  bool reachable() const { return endpoint_.reachable(); }

 private:
  JsonEndpoint endpoint_;
};

// Reply decoders shared by the clients and the mock conformance tests.
// Each throws BackendCallError when the body does not match the protocol.
std::vector<std::vector<float>> decode_embed_reply(const nlohmann::json& body);
LogitPair decode_score_reply(const nlohmann::json& body);
std::vector<PixelBox> decode_ground_reply(const nlohmann::json& body);

}  // namespace matir
