#include "matir/pipeline.hpp"

#include <algorithm>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "matir/error.hpp"
#include "matir/json_io.hpp"
#include "matir/rerank.hpp"

namespace matir {

using nlohmann::json;

std::string_view to_string(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::kFull: return "full";
    case PipelineMode::kStage1: return "stage1";
    case PipelineMode::kRerankOnly: return "rerank-only";
  }
  return "unknown";
}

PipelineMode parse_mode(std::string_view text) {
  if (text == "full") return PipelineMode::kFull;
  if (text == "stage1") return PipelineMode::kStage1;
  if (text == "rerank-only") return PipelineMode::kRerankOnly;
  throw Error(ErrorKind::kInvalidInput,
              "unknown mode '" + std::string(text) + "' (expected full, stage1 or rerank-only)");
}

json to_json(const PipelineItem& item) {
  json out{{"image_id", item.image_id},
           {"relevance", item.relevance ? json(*item.relevance) : json(nullptr)},
           {"stage1_score", item.stage1_score},
           {"mask_id", item.mask_id ? json(*item.mask_id) : json(nullptr)},
           {"mask", item.mask ? mask_to_json(*item.mask) : json(nullptr)},
           {"matched_iou", item.matched_iou ? json(*item.matched_iou) : json(nullptr)},
           {"source", item.source}};
  if (item.scorer_failed) out["scorer_failed"] = true;
  if (item.grounder_failed) out["grounder_failed"] = true;
  return out;
}

std::vector<std::vector<float>> embed_text_client(TextEmbedder& embedder,
                                                  const std::vector<std::string>& texts,
                                                  std::uint32_t dimension,
                                                  const CallPolicy& policy) {
  if (texts.empty()) throw Error(ErrorKind::kInvalidInput, "no texts to embed");
  CallPolicy single = policy;
  single.max_in_flight = 1;
  auto reply = fan_out<std::vector<std::vector<float>>>(
      1, single, nullptr, "embedder", [&](std::size_t) { return embedder.embed_text(texts); },
      [&](std::size_t) { return "'" + texts.front() + "'"; });
  if (!reply.front()) {
    throw Error(ErrorKind::kBackendUnavailable, "text embedder is unavailable");
  }
  auto& embeddings = *reply.front();
  if (embeddings.empty()) {
    throw Error(ErrorKind::kBackendUnavailable, "text embedder returned no embeddings");
  }
  for (const auto& e : embeddings) {
    if (e.size() != dimension) {
      throw Error(ErrorKind::kDimensionMismatch,
                  "embedder returned dimension " + std::to_string(e.size()) + ", index uses " +
                      std::to_string(dimension));
    }
  }
  return std::move(embeddings);
}

Pipeline::Pipeline(std::shared_ptr<const GalleryIndex> index, Backends backends,
                   PipelineConfig config)
    : index_(std::move(index)),
      backends_(std::move(backends)),
      config_(config),
      limiter_(std::make_unique<CallLimiter>(config.policy.max_in_flight)) {
  if (!index_) throw Error(ErrorKind::kInvalidInput, "pipeline needs an index");
  config_.params.validate();
}

QueryEmbedding Pipeline::embed_query(const std::string& text) const {
  if (!backends_.embedder) {
    throw Error(ErrorKind::kBackendUnavailable, "no text embedder configured");
  }
  const auto per_prompt =
      embed_text_client(*backends_.embedder, {text}, index_->dimension(), config_.policy);
  return ensemble_query(per_prompt);
}

namespace {

PipelineItem stage1_item(const RankedResult& r, const GalleryIndex& index) {
  PipelineItem item;
  item.image_id = r.image_id;
  item.stage1_score = r.stage1_score;
  item.mask_id = r.best_region;
  if (r.best_region) {
    item.mask = index.find_image(r.image_id)->find_region(*r.best_region)->mask;
  }
  item.source = "stage1";
  return item;
}

}  // namespace

PipelineResult Pipeline::run(const QueryEmbedding& query, const std::string& query_text,
                             PipelineMode mode, std::optional<std::size_t> n_k) const {
  SearchParams params = config_.params;
  if (n_k) params.n_k = *n_k;
  params.validate();

  if (mode != PipelineMode::kStage1 && !backends_.scorer) {
    throw Error(ErrorKind::kBackendUnavailable, "no relevance scorer configured");
  }
  if (mode == PipelineMode::kFull && !backends_.grounder) {
    throw Error(ErrorKind::kBackendUnavailable, "no grounder configured");
  }

  PipelineResult result;
  result.candidates = search(query, *index_, params.n_c, config_.search_threads);

  if (mode == PipelineMode::kStage1) {
    const std::size_t keep = std::min(params.n_k, result.candidates.size());
    for (std::size_t i = 0; i < keep; ++i) {
      result.items.push_back(stage1_item(result.candidates[i], *index_));
    }
    return result;
  }

  RerankOptions rerank_options{params.n_k, config_.policy, limiter_.get(),
                               config_.degrade_on_scorer_outage};
  const auto reranked =
      rerank(result.candidates, *backends_.scorer, query_text, *index_, rerank_options);

  if (mode == PipelineMode::kRerankOnly) {
    for (const auto& r : reranked) {
      PipelineItem item =
          stage1_item(RankedResult{r.image_id, r.stage1_score, r.best_region}, *index_);
      item.relevance = r.relevance;
      item.scorer_failed = r.scorer_failed;
      result.items.push_back(std::move(item));
    }
    return result;
  }

  const auto grounded = ground(query_text, reranked, *backends_.grounder, *index_,
                               GroundOptions{config_.policy, limiter_.get()});
  for (const auto& g : grounded) {
    PipelineItem item;
    item.image_id = g.image_id;
    item.relevance = g.relevance;
    item.stage1_score = g.stage1_score;
    item.mask_id = g.mask_id;
    item.mask = g.mask;
    item.matched_iou = g.matched_iou;
    item.source = std::string(to_string(g.source));
    item.scorer_failed = g.scorer_failed;
    item.grounder_failed = g.grounder_failed;
    result.items.push_back(std::move(item));
  }
  return result;
}

EvalRun run_evaluation(const Pipeline& pipeline, const std::vector<EvalQuery>& queries,
                       PipelineMode mode, std::size_t query_workers) {
  struct Outcome {
    QueryRanking ranking;
    std::size_t fallback = 0;
    std::size_t failed = 0;
  };
  std::vector<Outcome> outcomes(queries.size());
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < queries.size(); i = next++) {
      try {
        const EvalQuery& q = queries[i];
        const QueryEmbedding embedding = q.embedding ? ensemble_query(std::span(&*q.embedding, 1))
                                                     : pipeline.embed_query(q.text);
        const PipelineResult run = pipeline.run(embedding, q.text, mode);
        Outcome& out = outcomes[i];
        out.ranking.query_id = q.query_id;
        std::set<std::string> listed;
        for (const auto& item : run.items) {
          listed.insert(item.image_id);
          out.ranking.ranking.push_back(
              {item.image_id, item.mask, item.relevance.value_or(item.stage1_score)});
          if (item.source == "stage1-fallback") ++out.fallback;
          if (item.scorer_failed) ++out.failed;
        }
        for (const auto& c : run.candidates) {
          if (out.ranking.ranking.size() >= kMapCutoff) break;
          if (listed.contains(c.image_id)) continue;
          std::optional<RegionMask> mask;
          if (c.best_region) {
            mask = pipeline.index().find_image(c.image_id)->find_region(*c.best_region)->mask;
          }
          out.ranking.ranking.push_back({c.image_id, std::move(mask), c.stage1_score});
        }
        spdlog::info("query {}: {} results", q.query_id, out.ranking.ranking.size());
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(query_workers, 1, std::max<std::size_t>(queries.size(), 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  EvalRun run;
  for (auto& o : outcomes) {
    run.fallback_grounded += o.fallback;
    run.failed_scored += o.failed;
    run.rankings.push_back(std::move(o.ranking));
  }
  return run;
}

}  // namespace matir
