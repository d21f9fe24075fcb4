// matir: offline indexing, ad-hoc search, evaluation and serving.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "matir/error.hpp"
#include "matir/gallery_index.hpp"
#include "matir/http_backends.hpp"
#include "matir/mask.hpp"
#include "matir/metrics.hpp"
#include "matir/pipeline.hpp"
#include "matir/service.hpp"

namespace {

using nlohmann::json;
using namespace matir;

constexpr int kExitUser = 2;
constexpr int kExitBackend = 3;

struct BackendFlags {
  std::string embedder;
  std::string scorer;
  std::string grounder;
  std::size_t max_in_flight = 8;
  double timeout_s = 30.0;
  int retries = 2;
  bool degrade = false;

  void add_to(CLI::App* cmd, bool with_embedder) {
    if (with_embedder) cmd->add_option("--embedder", embedder, "Text embedder base URL");
    cmd->add_option("--scorer", scorer, "Relevance scorer base URL");
    cmd->add_option("--grounder", grounder, "Grounder base URL");
    cmd->add_option("--max-in-flight", max_in_flight, "Concurrent backend calls")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--timeout", timeout_s, "Per-call timeout in seconds")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--retries", retries, "Retries per backend call")->check(CLI::NonNegativeNumber);
    cmd->add_flag("--degrade-on-scorer-outage", degrade,
                  "Answer with zero relevance instead of failing when the scorer is down");
  }

  Backends make() const {
    const auto timeout = std::chrono::milliseconds(static_cast<long>(timeout_s * 1000));
    Backends b;
    if (!embedder.empty()) b.embedder = std::make_shared<HttpTextEmbedder>(embedder, timeout);
    if (!scorer.empty()) b.scorer = std::make_shared<HttpRelevanceScorer>(scorer, timeout);
    if (!grounder.empty()) b.grounder = std::make_shared<HttpGrounder>(grounder, timeout);
    return b;
  }

  PipelineMode mode() const {
    if (scorer.empty()) return PipelineMode::kStage1;
    return grounder.empty() ? PipelineMode::kRerankOnly : PipelineMode::kFull;
  }

  PipelineConfig config(std::size_t n_c, std::size_t n_k, unsigned threads) const {
    PipelineConfig c;
    c.params = {n_c, n_k};
    c.policy.max_in_flight = max_in_flight;
    c.policy.timeout = std::chrono::milliseconds(static_cast<long>(timeout_s * 1000));
    c.policy.retries = retries;
    c.degrade_on_scorer_outage = degrade;
    c.search_threads = threads;
    return c;
  }
};

void print_stats(const IndexStats& s, bool as_json) {
  if (as_json) {
    std::cout << json{{"images", s.image_count},
                      {"regions", s.region_count},
                      {"min_regions", s.min_regions},
                      {"mean_regions", s.mean_regions},
                      {"max_regions", s.max_regions},
                      {"dimension", s.dimension}}
                     .dump()
              << '\n';
    return;
  }
  fmt::print("images       {}\n", s.image_count);
  fmt::print("regions      {}\n", s.region_count);
  fmt::print("regions/img  min {} mean {:.3f} max {}\n", s.min_regions, s.mean_regions,
             s.max_regions);
  fmt::print("dimension    {}\n", s.dimension);
}

std::vector<std::vector<float>> read_query_embeddings(const std::string& path,
                                                      std::uint32_t dimension) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kInvalidInput, "cannot open query embedding " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t row_bytes = static_cast<std::size_t>(dimension) * sizeof(float);
  if (bytes.empty() || bytes.size() % row_bytes != 0) {
    throw Error(ErrorKind::kDimensionMismatch,
                fmt::format("query embedding file has {} bytes, not a multiple of {} (dim {})",
                            bytes.size(), row_bytes, dimension));
  }
  std::vector<std::vector<float>> rows(bytes.size() / row_bytes, std::vector<float>(dimension));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::uint32_t i = 0; i < dimension; ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) {
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[r * row_bytes + i * 4 + b]))
             << (8 * b);
      }
      rows[r][i] = std::bit_cast<float>(u);
    }
  }
  return rows;
}

void print_results_table(const PipelineResult& result) {
  fmt::print("{:>4}  {:<24} {:>10} {:>10} {:>8} {:>8}  {}\n", "rank", "image_id", "stage1",
             "relevance", "mask_id", "iou", "source");
  std::size_t rank = 0;
  for (const auto& item : result.items) {
    fmt::print("{:>4}  {:<24} {:>10.6f} {:>10} {:>8} {:>8}  {}{}\n", ++rank, item.image_id,
               item.stage1_score,
               item.relevance ? fmt::format("{:.6f}", *item.relevance) : std::string("-"),
               item.mask_id ? std::to_string(*item.mask_id) : std::string("-"),
               item.matched_iou ? fmt::format("{:.4f}", *item.matched_iou) : std::string("-"),
               item.source, item.scorer_failed ? " (scorer failed)" : "");
  }
}

std::vector<EvalQuery> read_queries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInvalidInput, "cannot open queries " + path);
  std::vector<EvalQuery> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj = json::parse(text, nullptr, false);
    if (!obj.is_object() || !obj.contains("query_id") || !obj["query_id"].is_string() ||
        !obj.contains("text") || !obj["text"].is_string()) {
      throw Error(ErrorKind::kValidation,
                  fmt::format("queries line {}: need string 'query_id' and 'text'", line));
    }
    EvalQuery q{obj["query_id"].get<std::string>(), obj["text"].get<std::string>(), std::nullopt};
    if (obj.contains("embedding") && !obj["embedding"].is_null()) {
      try {
        q.embedding = obj["embedding"].get<std::vector<float>>();
      } catch (const json::exception&) {
        throw Error(ErrorKind::kValidation,
                    fmt::format("queries line {}: 'embedding' must be an array of numbers", line));
      }
    }
    out.push_back(std::move(q));
  }
  return out;
}

int run_build_index(const std::string& manifest, const std::string& blob, std::uint32_t dim,
                    const std::string& out, bool as_json) {
  const GalleryIndex index = build_index(std::filesystem::path(manifest),
                                         std::filesystem::path(blob), dim);
  save_index(index, std::filesystem::path(out));
  print_stats(index_stats(index), as_json);
  return 0;
}

int run_inspect(const std::string& index_path, const std::string& image_id, bool as_json) {
  const GalleryIndex index = load_index(std::filesystem::path(index_path));
  if (image_id.empty()) {
    print_stats(index_stats(index), as_json);
    return 0;
  }
  const ImageEntry* image = index.find_image(image_id);
  if (!image) {
    std::cerr << "error: unknown image id '" << image_id << "'\n";
    return kExitUser;
  }
  if (as_json) {
    json regions = json::array();
    for (const auto& r : image->regions) {
      regions.push_back({{"mask_id", r.mask_id},
                         {"bbox", {r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h}},
                         {"area", mask_area(r.mask)},
                         {"embedding_row", r.embedding_row}});
    }
    std::cout << json{{"image_id", image->image_id},
                      {"width", image->width},
                      {"height", image->height},
                      {"uri", image->uri ? json(*image->uri) : json(nullptr)},
                      {"regions", regions}}
                     .dump()
              << '\n';
    return 0;
  }
  fmt::print("image {} ({}x{}){}\n", image->image_id, image->width, image->height,
             image->uri ? " uri " + *image->uri : "");
  fmt::print("{:>8}  {:>8} {:>8} {:>8} {:>8}  {:>10}\n", "mask_id", "x", "y", "w", "h", "area");
  for (const auto& r : image->regions) {
    fmt::print("{:>8}  {:>8} {:>8} {:>8} {:>8}  {:>10}\n", r.mask_id, r.bbox.x, r.bbox.y, r.bbox.w,
               r.bbox.h, mask_area(r.mask));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_pattern("[%l] %v");
  CLI::App app{"Mask-aware text-to-image retrieval engine"};
  app.require_subcommand(1);

  // build-index
  auto* build = app.add_subcommand("build-index", "Build an index from a manifest and embedding blob");
  std::string manifest, blob, out_path;
  std::uint32_t dim = kDefaultDimension;
  bool json_out = false;
  build->add_option("--manifest", manifest, "Region manifest (JSON Lines)")->required();
  build->add_option("--embeddings", blob, "Raw little-endian float32 embeddings")->required();
  build->add_option("--dim", dim, "Embedding dimension")->check(CLI::PositiveNumber);
  build->add_option("--out", out_path, "Index file to write")->required();
  build->add_flag("--json", json_out, "Print stats as JSON");

  // search
  auto* search_cmd = app.add_subcommand("search", "Search an index with a query embedding");
  std::string index_path, query_path, query_text;
  std::size_t n_c = 100, n_k = 50;
  unsigned threads = 1;
  BackendFlags search_backends;
  search_cmd->add_option("--index", index_path, "Index file")->required();
  search_cmd->add_option("--query-embedding", query_path,
                         "float32 query embedding(s); multiple rows are ensembled")
      ->required();
  search_cmd->add_option("--text", query_text, "Object description sent to scorer/grounder");
  search_cmd->add_option("--nc", n_c, "Stage-1 candidates")->check(CLI::PositiveNumber);
  search_cmd->add_option("--nk", n_k, "Results kept after reranking")->check(CLI::PositiveNumber);
  search_cmd->add_option("--threads", threads, "Stage-1 scan threads")->check(CLI::PositiveNumber);
  search_cmd->add_flag("--json", json_out, "Print the response as JSON");
  search_backends.add_to(search_cmd, false);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Compute mAP@50 and mAP@50@50");
  std::string gt_path, queries_path, results_path, dump_path, report_path;
  std::size_t query_workers = 1;
  BackendFlags eval_backends;
  eval->add_option("--index", index_path, "Index file");
  eval->add_option("--gt", gt_path, "Ground truth (JSON Lines)")->required();
  eval->add_option("--queries", queries_path,
                   "Queries (JSON Lines: query_id, text, optional embedding); defaults to GT");
  eval->add_option("--results", results_path, "Score a pre-dumped results file instead of searching");
  eval->add_option("--dump-results", dump_path, "Write the rankings that were scored");
  eval->add_option("--out", report_path, "Report JSON to write")->required();
  eval->add_option("--nc", n_c, "Stage-1 candidates")->check(CLI::PositiveNumber);
  eval->add_option("--nk", n_k, "Results kept after reranking")->check(CLI::PositiveNumber);
  eval->add_option("--threads", threads, "Stage-1 scan threads")->check(CLI::PositiveNumber);
  eval->add_option("--query-workers", query_workers, "Queries evaluated concurrently")
      ->check(CLI::PositiveNumber);
  eval_backends.add_to(eval, true);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP search service");
  std::string config_path, listen;
  serve->add_option("--config", config_path, "Service config JSON");
  serve->add_option("--index", index_path, "Index file (overrides config)");
  serve->add_option("--listen", listen, "host:port (overrides config)");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Print index stats or one image's regions");
  std::string image_id;
  inspect->add_option("--index", index_path, "Index file")->required();
  inspect->add_option("--image", image_id, "Image id");
  inspect->add_flag("--json", json_out, "Print as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUser;
  }

  try {
    if (*build) return run_build_index(manifest, blob, dim, out_path, json_out);
    if (*inspect) return run_inspect(index_path, image_id, json_out);

    if (*search_cmd) {
      SearchParams{n_c, n_k}.validate();
      const PipelineMode mode = search_backends.mode();
      if (mode != PipelineMode::kStage1 && query_text.empty()) {
        throw Error(ErrorKind::kInvalidInput, "--text is required when backends are given");
      }
      auto index = std::make_shared<const GalleryIndex>(load_index(std::filesystem::path(index_path)));
      const auto rows = read_query_embeddings(query_path, index->dimension());
      const QueryEmbedding query = ensemble_query(rows);
      Pipeline pipeline(index, search_backends.make(), search_backends.config(n_c, n_k, threads));
      const PipelineResult result = pipeline.run(query, query_text, mode);
      if (json_out) {
        std::cout << search_response_json(query_text, mode, result).dump() << '\n';
      } else {
        print_results_table(result);
      }
      return 0;
    }

    if (*eval) {
      const GroundTruth gt = load_ground_truth(gt_path);
      EvalReport report;
      std::vector<QueryRanking> rankings;
      EvalRun run;
      if (!results_path.empty()) {
        std::ifstream in(results_path);
        if (!in) throw Error(ErrorKind::kInvalidInput, "cannot open results " + results_path);
        rankings = parse_results(in);
      } else {
        if (index_path.empty()) {
          throw Error(ErrorKind::kInvalidInput, "--index is required unless --results is given");
        }
        SearchParams{n_c, n_k}.validate();
        auto index =
            std::make_shared<const GalleryIndex>(load_index(std::filesystem::path(index_path)));
        check_ground_truth(gt, *index);
        std::vector<EvalQuery> queries;
        if (!queries_path.empty()) {
          queries = read_queries(queries_path);
        } else {
          for (const auto& q : gt) queries.push_back({q.query_id, q.text, std::nullopt});
        }
        Pipeline pipeline(index, eval_backends.make(), eval_backends.config(n_c, n_k, threads));
        run = run_evaluation(pipeline, queries, eval_backends.mode(), query_workers);
        rankings = std::move(run.rankings);
      }
      report = evaluate(rankings, gt);
      report.fallback_grounded = run.fallback_grounded;
      report.failed_scored = run.failed_scored;
      if (!dump_path.empty()) {
        std::ofstream dump(dump_path);
        write_results(rankings, dump);
      }
      std::ofstream out(report_path);
      if (!out) throw Error(ErrorKind::kInvalidInput, "cannot write " + report_path);
      out << report.to_json().dump(2) << '\n';
      fmt::print("queries evaluated  {}\n", report.per_query.size());
      fmt::print("queries excluded   {}\n", report.excluded.size());
      fmt::print("mAP@50             {:.4f}\n", report.map_50);
      fmt::print("mAP@50@50          {:.4f}\n", report.map_50_50);
      return 0;
    }

    if (*serve) {
      ServiceConfig config;
      if (!config_path.empty()) config = ServiceConfig::load(config_path);
      config.apply_environment();
      if (!index_path.empty()) config.index_path = index_path;
      if (!listen.empty()) config.listen_address = listen;
      auto service = SearchService::from_config(config);
      service->serve();
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::kBackendUnavailable ? kExitBackend : kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
