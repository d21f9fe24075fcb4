#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "matir/gallery_index.hpp"
#include "matir/pipeline.hpp"

namespace httplib {
class Server;
}

namespace matir {

struct ServiceConfig {
  std::string index_path;
  std::optional<std::string> text_embedder_url;
  std::optional<std::string> scorer_url;
  std::optional<std::string> grounder_url;
  std::size_t n_c = 100;
  std::size_t n_k = 50;
  std::size_t max_in_flight = 8;
  double call_timeout_s = 30.0;
  int retries = 2;
  std::string listen_address = "127.0.0.1:8080";
  bool degrade_on_scorer_outage = false;
  unsigned search_threads = 1;

  // Unknown keys are rejected. Throws Error(kInvalidInput).
  static ServiceConfig from_json(const nlohmann::json& value);
  static ServiceConfig load(const std::string& path);
  // MATIR_INDEX and MATIR_LISTEN override file values.
  void apply_environment();
  void validate() const;

  PipelineConfig pipeline_config() const;
};

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

// Health probe per backend; in-process backends report true.
struct BackendProbe {
  std::function<bool()> embedder;
  std::function<bool()> scorer;
  std::function<bool()> grounder;
};

// Request handlers over a shared immutable index. The index may be absent,
// in which case searches answer 503 and health reports "unavailable".
class SearchService {
 public:
  SearchService(ServiceConfig config, std::shared_ptr<const GalleryIndex> index,
                Backends backends, BackendProbe probe = {});

  // Loads the index (failure leaves it absent) and builds HTTP clients for
  // every configured backend URL.
  static std::unique_ptr<SearchService> from_config(const ServiceConfig& config);

  HttpReply handle_search(const std::string& body) const;
  HttpReply handle_search_embedding(const std::string& body) const;
  HttpReply handle_health() const;

  void mount(httplib::Server& server) const;
  // Blocks serving config.listen_address.
  void serve() const;

  const ServiceConfig& config() const { return config_; }
  const Pipeline* pipeline() const { return pipeline_.get(); }

 private:
  HttpReply run(const QueryEmbedding& query, const std::string& text, PipelineMode mode,
                std::optional<std::size_t> n_k) const;

  ServiceConfig config_;
  std::shared_ptr<const GalleryIndex> index_;
  Backends backends_;
  BackendProbe probe_;
  std::unique_ptr<Pipeline> pipeline_;
};

// Response body shared by the service and `matir search --json`.
nlohmann::json search_response_json(const std::string& query_text, PipelineMode mode,
                                    const PipelineResult& result);

}  // namespace matir
