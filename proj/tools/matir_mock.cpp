// matir-mock: standalone deterministic embedder/scorer/grounder server.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "matir/error.hpp"
#include "matir/mock_backends.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Mock model backends for the retrieval engine"};
  std::string spec_path, host = "127.0.0.1";
  int port = 9000;
  app.add_option("--spec", spec_path, "Mock spec JSON")->required();
  app.add_option("--host", host, "Bind address");
  app.add_option("--port", port, "Port")->check(CLI::Range(1, 65535));
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    std::ifstream in(spec_path);
    if (!in) throw matir::Error(matir::ErrorKind::kInvalidInput, "cannot open " + spec_path);
    matir::MockServer server(matir::MockSpec::from_json(nlohmann::json::parse(in)));
    spdlog::info("mock backends on {}:{}", host, port);
    server.run(host, port);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
