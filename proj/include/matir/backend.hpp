#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <functional>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

namespace matir {

// What the engine sends to the scorer and grounder for one image.
struct BackendRequest {
  std::string image_uri;
  std::string object_text;
};

// Raw next-token logits for the "True" and "False" answers.
struct LogitPair {
  double z_true = 0.0;
  double z_false = 0.0;
};

// Absolute pixel corners (x1, y1, x2, y2) as emitted by grounders.
using PixelBox = std::array<double, 4>;

// A single backend call failed (transport error, timeout, non-200 status or
// malformed body). Retried by the fan-out layer.
class BackendCallError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::vector<std::vector<float>> embed_text(const std::vector<std::string>& texts) = 0;
};

class RelevanceScorer {
 public:
  virtual ~RelevanceScorer() = default;
  virtual LogitPair score(const BackendRequest& request) = 0;
};

class Grounder {
 public:
  virtual ~Grounder() = default;
  virtual std::vector<PixelBox> ground(const BackendRequest& request) = 0;
};

struct CallPolicy {
  std::size_t max_in_flight = 8;
  std::chrono::milliseconds timeout{30000};
  int retries = 2;
};

// Caps concurrent backend calls across every request sharing it.
class CallLimiter {
 public:
  explicit CallLimiter(std::size_t max_in_flight)
      : slots_(static_cast<std::ptrdiff_t>(max_in_flight == 0 ? 1 : max_in_flight)) {}

  class Slot {
   public:
    explicit Slot(CallLimiter* limiter) : limiter_(limiter) {
      if (limiter_) limiter_->slots_.acquire();
    }
    ~Slot() {
      if (limiter_) limiter_->slots_.release();
    }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    CallLimiter* limiter_;
  };

 private:
  std::counting_semaphore<1 << 20> slots_;
};

// Runs call(i) for i in [0, n) with at most policy.max_in_flight concurrent
// calls, retrying BackendCallError up to policy.retries times. Slot i of the
// result is empty when every attempt failed. Results are placed by index, so
// completion order never shows in the output.
template <typename T>
std::vector<std::optional<T>> fan_out(std::size_t n, const CallPolicy& policy,
                                      CallLimiter* limiter, std::string_view what,
                                      const std::function<T(std::size_t)>& call,
                                      const std::function<std::string(std::size_t)>& label) {
  std::vector<std::optional<T>> results(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      for (int attempt = 0; attempt <= policy.retries; ++attempt) {
        try {
          CallLimiter::Slot slot(limiter);
          results[i] = call(i);
          break;
        } catch (const std::exception& e) {
          if (attempt < policy.retries) {
            spdlog::warn("{} call for {} failed (attempt {}/{}): {}; retrying", what, label(i),
                         attempt + 1, policy.retries + 1, e.what());
          } else {
            spdlog::error("{} call for {} failed after {} attempts: {}; falling back", what,
                          label(i), policy.retries + 1, e.what());
          }
        }
      }
    }
  };
  const std::size_t workers = std::min(n, policy.max_in_flight == 0 ? 1 : policy.max_in_flight);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  return results;
}

}  // namespace matir
