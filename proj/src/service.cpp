#include "equine/service.hpp"

#include <fstream>

#include "equine/error.hpp"
#include "equine/image_io.hpp"
#include "equine/pipeline.hpp"
#include "equine/serialization.hpp"
#include "httplib.h"

namespace equine {

namespace {

nlohmann::json entry_json(const ModelRegistryEntry& e) {
  return {{"kind", to_string(e.kind)},
          {"version", e.version},
          {"path", e.path.string()},
          {"loaded", e.loaded},
          {"checksum", e.checksum}};
}

Response bad_request(const std::string& message) { return error_response(400, "invalid_request", message); }

}  // namespace

Response error_response(int status, std::string code, std::string message) {
  return {status, {{"code", std::move(code)}, {"message", std::move(message)}}};
}

Service::Service(ServiceConfig config, std::shared_ptr<ModelRegistry> registry)
    : config_(std::move(config)), registry_(std::move(registry)) {
  if (!registry_) registry_ = std::make_shared<ModelRegistry>();
  manifest_ = std::make_shared<const DatasetManifest>(
      std::filesystem::exists(config_.manifest) ? load_manifest(config_.manifest) : DatasetManifest{});
}

std::shared_ptr<const DatasetManifest> Service::manifest() const {
  std::lock_guard lock(read_mutex_);
  return manifest_;
}

Response Service::predict(std::string_view image_bytes) const {
  const auto models = registry_->active();
  if (!models->ready()) return error_response(503, "no_active_models", "no active detector and classifier");
  if (image_bytes.size() > config_.max_upload_bytes) {
    return error_response(413, "payload_too_large", "upload exceeds " + std::to_string(config_.max_upload_bytes) + " bytes");
  }
  Image image;
  try {
    image = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(image_bytes.data()), image_bytes.size()));
  } catch (const Error& e) {
    return error_response(400, "undecodable_image", e.what());
  }
  try {
    const PipelineResult result = infer(*models->detector, *models->classifier, image);
    nlohmann::json body = prediction_body(result);
    body["model_versions"] = {{"detector", models->detector->version_tag()},
                              {"classifier", models->classifier->version_tag()}};
    return {200, std::move(body)};
  } catch (const NoRoiError& e) {
    return error_response(422, "no_roi", e.what());
  } catch (const ModelError& e) {
    return error_response(503, "model_error", e.what());
  } catch (const DataError& e) {
    return error_response(400, "invalid_image", e.what());
  }
}

Response Service::health() const {
  const auto models = registry_->active();
  nlohmann::json versions = nlohmann::json::object();
  if (models->detector) versions["detector"] = models->detector->version_tag();
  if (models->classifier) versions["classifier"] = models->classifier->version_tag();
  std::string status = "ok";
  if (!models->detector && !models->classifier) {
    status = "degraded: no active models";
  } else if (!models->ready()) {
    status = models->detector ? "degraded: no active classifier" : "degraded: no active detector";
  }
  return {200, {{"status", status}, {"ready", models->ready()}, {"models", versions}}};
}

Response Service::list_annotations() const {
  const auto m = manifest();
  return {200, {{"annotations", m->annotations}}};
}

Response Service::create_annotation(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("image_id") || !body.at("image_id").is_string()) {
    return bad_request("missing image_id");
  }
  return write_annotation(body.at("image_id").get<std::string>(), body, true);
}

Response Service::update_annotation(const std::string& image_id, const nlohmann::json& body) {
  if (!body.is_object()) return bad_request("expected an object");
  if (body.contains("image_id") && body.at("image_id") != image_id) return bad_request("image_id does not match path");
  return write_annotation(image_id, body, false);
}

Response Service::write_annotation(const std::string& image_id, const nlohmann::json& body, bool create) {
  std::lock_guard writer(write_mutex_);
  const auto current = manifest();
  const ImageRecord* record = current->find_record(image_id);
  if (!record) return error_response(404, "unknown_image", "unknown image '" + image_id + "'");
  const Annotation* existing = current->find_annotation(image_id);
  if (create && existing) return error_response(409, "exists", "image '" + image_id + "' is already annotated");
  if (!create && !existing) return error_response(404, "not_annotated", "image '" + image_id + "' has no annotation");

  Annotation a;
  try {
    nlohmann::json j = body;
    j["image_id"] = image_id;
    j.erase("override");
    a = j.get<Annotation>();
  } catch (const Error& e) {
    return bad_request(e.what());
  } catch (const nlohmann::json::exception& e) {
    return bad_request(e.what());
  }
  if (a.box.right() > record->width || a.box.bottom() > record->height) {
    return bad_request("box outside image");
  }
  std::optional<std::string> warning;
  if (a.cues && a.label && classify_cues(*a.cues).best != *a.label) {
    a.override_mismatch = true;
    warning = "cue/label mismatch";
  }

  auto next = std::make_shared<DatasetManifest>(*current);
  if (create) {
    next->annotations.push_back(a);
  } else {
    *next->find_annotation(image_id) = a;
  }
  try {
    save_manifest(*next, config_.manifest);
  } catch (const DataError& e) {
    return bad_request(e.what());
  }
  {
    std::lock_guard lock(read_mutex_);
    manifest_ = std::move(next);
  }
  nlohmann::json out = {{"annotation", a}};
  if (warning) out["warning"] = *warning;
  return {create ? 201 : 200, std::move(out)};
}

Response Service::list_models() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : registry_->entries()) entries.push_back(entry_json(e));
  return {200, {{"models", entries}}};
}

Response Service::activate_model(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("kind") || !body.contains("version") || !body.at("kind").is_string() ||
      !body.at("version").is_string()) {
    return bad_request("expected {kind, version}");
  }
  const auto kind = parse_model_kind(body.at("kind").get<std::string>());
  if (!kind) return bad_request("kind must be detector or classifier");
  const std::string version = body.at("version").get<std::string>();
  try {
    if (body.contains("path")) {
      const auto entry = registry_->register_artifact(body.at("path").get<std::string>());
      if (entry.kind != *kind || entry.version != version) {
        return error_response(409, "artifact_mismatch", "artifact holds " + std::string(to_string(entry.kind)) + " " +
                                                            entry.version);
      }
    }
    registry_->activate(*kind, version);
  } catch (const ModelError& e) {
    return error_response(409, "activation_failed", e.what());
  } catch (const Error& e) {
    return error_response(409, "activation_failed", e.what());
  }
  return {200, {{"active", {{"kind", to_string(*kind)}, {"version", version}}}}};
}

Response Service::ethogram() const { return {200, profile_table_json(CueProfileTable::canonical())}; }

HttpServer::HttpServer(Service& service, std::string host, int port)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  srv.set_payload_max_length(service_.config().max_upload_bytes + 64 * 1024);

  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto parse_body = [](const httplib::Request& req) -> std::optional<nlohmann::json> {
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;
    }
  };

  srv.Post("/v1/predict", [this, reply](const httplib::Request& req, httplib::Response& res) {
    if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) return reply(res, bad_request("multipart field 'image' missing"));
      return reply(res, service_.predict(req.get_file_value("image").content));
    }
    reply(res, service_.predict(req.body));
  });
  srv.Get("/v1/health", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, service_.health()); });
  srv.Get("/v1/annotations",
          [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, service_.list_annotations()); });
  srv.Post("/v1/annotations", [this, reply, parse_body](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    reply(res, body ? service_.create_annotation(*body) : bad_request("malformed JSON"));
  });
  srv.Put(R"(/v1/annotations/([^/]+))", [this, reply, parse_body](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    reply(res, body ? service_.update_annotation(req.matches[1], *body) : bad_request("malformed JSON"));
  });
  srv.Get("/v1/models", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, service_.list_models()); });
  srv.Post("/v1/models", [this, reply, parse_body](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    reply(res, body ? service_.activate_model(*body) : bad_request("malformed JSON"));
  });
  srv.Get("/v1/ethogram", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, service_.ethogram()); });
  srv.set_exception_handler([reply](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      reply(res, error_response(500, "internal", e.what()));
    }
  });
  srv.set_error_handler([reply](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 413) return reply(res, error_response(413, "payload_too_large", "upload too large"));
    if (res.status == 404) return reply(res, error_response(404, "not_found", "no such endpoint"));
  });

  port_ = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw UsageError("cannot bind " + host + ":" + std::to_string(port));
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::start() {
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void HttpServer::run() { server_->listen_after_bind(); }

void HttpServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace equine
