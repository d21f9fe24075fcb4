#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "matir/backend.hpp"
#include "matir/gallery_index.hpp"
#include "matir/metrics.hpp"
#include "matir/pipeline.hpp"

namespace httplib {
class Server;
}

namespace matir {

struct FailureSpec {
  double error_rate = 0.0;  // fraction of requests answered with a failure
  std::chrono::milliseconds latency{0};
};

// Deterministic stand-ins for the three model backends. Scorer and grounder
// rules key on (object_text, image_uri).
struct MockSpec {
  std::uint64_t seed = 0;
  std::uint32_t dimension = kDefaultDimension;
  // object text -> per-prompt embeddings. Unknown texts get a seeded
  // pseudo-random unit vector.
  std::map<std::string, std::vector<std::vector<float>>> embeddings;
  // object text -> image uris judged relevant.
  std::map<std::string, std::set<std::string>> relevant;
  LogitPair relevant_logits{10.0, -10.0};
  LogitPair irrelevant_logits{-10.0, 10.0};
  bool invert_scorer = false;
  // object text -> image uri -> boxes (x1, y1, x2, y2). Missing -> no boxes.
  std::map<std::string, std::map<std::string, std::vector<PixelBox>>> boxes;
  bool grounder_always_empty = false;
  FailureSpec embed_failure;
  FailureSpec score_failure;
  FailureSpec ground_failure;

  nlohmann::json to_json() const;
  static MockSpec from_json(const nlohmann::json& value);
};

class MockEmbedder : public TextEmbedder {
 public:
  explicit MockEmbedder(std::shared_ptr<const MockSpec> spec) : spec_(std::move(spec)) {}
  std::vector<std::vector<float>> embed_text(const std::vector<std::string>& texts) override;

 private:
  std::shared_ptr<const MockSpec> spec_;
};

class MockScorer : public RelevanceScorer {
 public:
  explicit MockScorer(std::shared_ptr<const MockSpec> spec) : spec_(std::move(spec)) {}
  LogitPair score(const BackendRequest& request) override;

 private:
  std::shared_ptr<const MockSpec> spec_;
};

class MockGrounder : public Grounder {
 public:
  explicit MockGrounder(std::shared_ptr<const MockSpec> spec) : spec_(std::move(spec)) {}
  std::vector<PixelBox> ground(const BackendRequest& request) override;

 private:
  std::shared_ptr<const MockSpec> spec_;
};

// In-process trio sharing one spec.
Backends make_mock_backends(std::shared_ptr<const MockSpec> spec);

// Spec under which the full pipeline is ideal for `gt`: the embedder returns
// each query's planted vector, the scorer separates relevant images by
// (10, -10) / (-10, 10) and the grounder returns the box of the indexed
// region that best overlaps a GT mask.
MockSpec make_perfect_spec(const GroundTruth& gt, const GalleryIndex& index,
                           const std::map<std::string, std::vector<float>>& planted_queries);

Backends make_perfect_backends(const GroundTruth& gt, const GalleryIndex& index,
                               const std::map<std::string, std::vector<float>>& planted_queries);

// Serves /v1/embed_text, /v1/score and /v1/ground over HTTP. Injected
// failures answer HTTP 500; injected latency delays the reply.
class MockServer {
 public:
  explicit MockServer(MockSpec spec);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  // Binds (port 0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();
  int port() const { return port_; }
  std::string base_url() const;

 private:
  std::shared_ptr<const MockSpec> spec_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = -1;
};

}  // namespace matir
