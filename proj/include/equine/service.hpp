#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>

#include "equine/dataset.hpp"
#include "equine/registry.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace equine {

struct Response {
  int status = 200;
  nlohmann::json body;
};

/// Error body {"code", "message"}.
Response error_response(int status, std::string code, std::string message);

struct ServiceConfig {
  std::filesystem::path manifest;
  std::size_t max_upload_bytes = 10 * 1024 * 1024;
};

/// Request handlers behind the /v1 endpoints, independent of the transport.
/// Handlers are safe to call concurrently; annotation writes are serialised
/// and each one atomically replaces the manifest file.
class Service {
 public:
  /// Loads the manifest if the file exists, otherwise starts empty.
  Service(ServiceConfig config, std::shared_ptr<ModelRegistry> registry);

  /// Decodes the upload to RGB and runs the pipeline on the active pair.
  Response predict(std::string_view image_bytes) const;
  Response health() const;

  Response list_annotations() const;
  Response create_annotation(const nlohmann::json& body);
  Response update_annotation(const std::string& image_id, const nlohmann::json& body);

  Response list_models() const;
  /// {kind, version, path?}. A path registers the artifact first.
  Response activate_model(const nlohmann::json& body);

  Response ethogram() const;

  const ServiceConfig& config() const noexcept { return config_; }
  std::shared_ptr<const DatasetManifest> manifest() const;
  ModelRegistry& registry() noexcept { return *registry_; }

 private:
  Response write_annotation(const std::string& image_id, const nlohmann::json& body, bool create);

  ServiceConfig config_;
  std::shared_ptr<ModelRegistry> registry_;
  mutable std::mutex read_mutex_;
  std::mutex write_mutex_;
  std::shared_ptr<const DatasetManifest> manifest_;
};

/// HTTP front end. Routes: POST /v1/predict, GET /v1/health,
/// GET|POST /v1/annotations, PUT /v1/annotations/{image_id},
/// GET|POST /v1/models, GET /v1/ethogram.
class HttpServer {
 public:
  HttpServer(Service& service, std::string host = "127.0.0.1", int port = 0);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Bound port; the constructor binds, so port 0 picks a free one.
  int port() const noexcept { return port_; }
  /// Serves on a background thread until stop().
  void start();
  /// Serves on the calling thread.
  void run();
  void stop();

 private:
  Service& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace equine
