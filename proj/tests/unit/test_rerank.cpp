#include <doctest.h>

#include <atomic>
#include <cmath>
#include <functional>
#include <set>

#include "fixtures.hpp"
#include "matir/error.hpp"
#include "matir/rerank.hpp"

using namespace matir;
using namespace matir::testing;

namespace {

class FnScorer : public RelevanceScorer {
 public:
  explicit FnScorer(std::function<LogitPair(const BackendRequest&)> fn) : fn_(std::move(fn)) {}
  LogitPair score(const BackendRequest& request) override {
    ++calls;
    return fn_(request);
  }
  std::atomic<int> calls{0};

 private:
  std::function<LogitPair(const BackendRequest&)> fn_;
};

GalleryIndex gallery_of(int n) {
  std::vector<ImageSpec> specs;
  Rng rng(n);
  for (int i = 0; i < n; ++i) {
    specs.push_back({"im" + std::to_string(100 + i), 4, 4, "uri:" + std::to_string(i),
                     {{0, rect_mask(4, 4, 0, 0, 1, 1), random_unit(rng, 8)}}});
  }
  return build_from_specs(specs, 8);
}

std::vector<RankedResult> stage1(const GalleryIndex& index, std::uint64_t seed) {
  Rng rng(seed);
  return search(QueryEmbedding::from_unit(random_unit(rng, 8)), index, 100);
}

}  // namespace

TEST_SUITE("rerank") {
  TEST_CASE("relevance_from_logits") {
    CHECK(relevance_from_logits({3.5, 3.5}) == 0.5);
    CHECK(relevance_from_logits({2, 0}) == doctest::Approx(0.8807970779778823).epsilon(1e-12));
    const double tiny = relevance_from_logits({0, 50});
    CHECK(tiny > 0.0);
    CHECK(tiny < 1e-20);
    CHECK(std::isfinite(relevance_from_logits({1e4, -1e4})));
    CHECK(relevance_from_logits({-1e4, 1e4}) >= 0.0);
    CHECK_THROWS_AS(relevance_from_logits({NAN, 0}), Error);
    CHECK_THROWS_AS(relevance_from_logits({0, INFINITY}), Error);
    // Equals the direct two-term softmax where that is representable.
    for (double a = -30; a <= 30; a += 2.5) {
      for (double b = -30; b <= 30; b += 3.5) {
        const double direct = std::exp(a) / (std::exp(a) + std::exp(b));
        CHECK(std::abs(relevance_from_logits({a, b}) - direct) <= 1e-12);
      }
    }
  }

  TEST_CASE("perfect scorer puts relevant images first") {
    const GalleryIndex index = gallery_of(30);
    const auto candidates = stage1(index, 1);
    std::set<std::string> relevant{"uri:3", "uri:17", "uri:29", "uri:8"};
    FnScorer scorer([&](const BackendRequest& r) {
      return relevant.contains(r.image_uri) ? LogitPair{10, -10} : LogitPair{-10, 10};
    });
    RerankOptions opts;
    opts.n_k = 30;
    const auto out = rerank(candidates, scorer, "thing", index, opts);
    CHECK(scorer.calls == 30);
    REQUIRE(out.size() == 30);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const bool rel = relevant.contains(index.find_image(out[i].image_id)->backend_uri());
      CHECK(rel == (i < relevant.size()));
    }
  }

  TEST_CASE("constant scorer keeps stage-1 order") {
    const GalleryIndex index = gallery_of(20);
    const auto candidates = stage1(index, 2);
    FnScorer scorer([](const BackendRequest&) { return LogitPair{0, 0}; });
    RerankOptions opts;
    opts.n_k = 7;
    const auto out = rerank(candidates, scorer, "thing", index, opts);
    REQUIRE(out.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(out[i].image_id == candidates[i].image_id);
      CHECK(out[i].relevance == 0.5);
      CHECK(out[i].best_region == candidates[i].best_region);
    }
  }

  TEST_CASE("permutation when n_k covers every candidate") {
    const GalleryIndex index = gallery_of(15);
    const auto candidates = stage1(index, 3);
    FnScorer scorer([](const BackendRequest& r) {
      return LogitPair{double(std::hash<std::string>{}(r.image_uri) % 97), 0};
    });
    RerankOptions opts;
    opts.n_k = 15;
    const auto out = rerank(candidates, scorer, "thing", index, opts);
    std::multiset<std::string> in_ids, out_ids;
    for (const auto& c : candidates) in_ids.insert(c.image_id);
    for (const auto& o : out) out_ids.insert(o.image_id);
    CHECK(in_ids == out_ids);
    CHECK(std::is_sorted(out.begin(), out.end(), reranks_before));
  }

  TEST_CASE("raising one margin never lowers its rank") {
    const GalleryIndex index = gallery_of(12);
    const auto candidates = stage1(index, 4);
    const std::string target = "uri:5";
    std::size_t prev_rank = 1000;
    for (double boost = -20; boost <= 20; boost += 1.0) {
      FnScorer scorer([&](const BackendRequest& r) {
        if (r.image_uri == target) return LogitPair{boost, 0};
        return LogitPair{double(r.image_uri.size() % 5) - 2.0, 0};
      });
      RerankOptions opts;
      opts.n_k = 12;
      const auto out = rerank(candidates, scorer, "t", index, opts);
      std::size_t rank = 0;
      while (index.find_image(out[rank].image_id)->backend_uri() != target) ++rank;
      CHECK(rank <= prev_rank);
      prev_rank = rank;
    }
  }

  TEST_CASE("failed calls degrade to zero relevance and are flagged") {
    const GalleryIndex index = gallery_of(10);
    const auto candidates = stage1(index, 5);
    FnScorer scorer([](const BackendRequest& r) -> LogitPair {
      if (r.image_uri == "uri:2") throw BackendCallError("boom");
      return {-5, 5};
    });
    RerankOptions opts;
    opts.n_k = 10;
    opts.policy.retries = 2;
    const auto out = rerank(candidates, scorer, "t", index, opts);
    CHECK(scorer.calls == 9 + 3);
    const auto& last = out.back();
    CHECK(last.image_id == "im102");
    CHECK(last.relevance == 0.0);
    CHECK(last.scorer_failed);
    CHECK(std::count_if(out.begin(), out.end(), [](auto& r) { return r.scorer_failed; }) == 1);
  }

  TEST_CASE("total outage") {
    const GalleryIndex index = gallery_of(6);
    const auto candidates = stage1(index, 6);
    FnScorer scorer([](const BackendRequest&) -> LogitPair { throw BackendCallError("down"); });
    RerankOptions opts;
    opts.n_k = 4;
    opts.policy.retries = 0;
    try {
      rerank(candidates, scorer, "t", index, opts);
      FAIL("expected backend-unavailable");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kBackendUnavailable);
    }
    opts.degrade_on_outage = true;
    const auto out = rerank(candidates, scorer, "t", index, opts);
    REQUIRE(out.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(out[i].image_id == candidates[i].image_id);
      CHECK(out[i].scorer_failed);
      CHECK(out[i].relevance == 0.0);
    }
  }

  TEST_CASE("non-finite logits count as a failed call") {
    const GalleryIndex index = gallery_of(3);
    const auto candidates = stage1(index, 7);
    FnScorer scorer([](const BackendRequest& r) {
      return r.image_uri == "uri:0" ? LogitPair{NAN, 0} : LogitPair{1, 0};
    });
    RerankOptions opts;
    opts.n_k = 3;
    const auto out = rerank(candidates, scorer, "t", index, opts);
    CHECK(out.back().image_id == "im100");
    CHECK(out.back().scorer_failed);
  }

  TEST_CASE("output independent of fan-out width") {
    const GalleryIndex index = gallery_of(40);
    const auto candidates = stage1(index, 8);
    auto fn = [](const BackendRequest& r) {
      return LogitPair{double(std::hash<std::string>{}(r.image_uri) % 7), 0};
    };
    std::vector<RerankedResult> reference;
    for (std::size_t width : {1u, 2u, 8u, 32u}) {
      FnScorer scorer(fn);
      RerankOptions opts;
      opts.n_k = 25;
      opts.policy.max_in_flight = width;
      CallLimiter limiter(3);
      opts.limiter = &limiter;
      const auto out = rerank(candidates, scorer, "t", index, opts);
      if (reference.empty()) reference = out;
      CHECK(out == reference);
    }
  }
}
