#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lostgan/training.hpp"

namespace lostgan {

// 32-bit IEEE values, 8 lowercase hex digits each (big-endian bit pattern).
std::string encode_f32_hex(const std::vector<double>& values);
std::vector<double> decode_f32_hex(const std::string& text);
// Rounds every code to the nearest float so that the hex echo is exact.
StyleState round_style_to_f32(StyleState style);

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
  std::map<std::string, std::string> headers;
};

struct ServiceOptions {
  LayoutLimits limits{1, 8};
  int max_interpolation_steps = 64;
};

// JSON in, (status, JSON) out. Handlers never mutate the model.
class Service {
 public:
  explicit Service(ServiceOptions options = {});
  Service(LoadedModel model, ServiceOptions options = {});

  void load(const std::filesystem::path& checkpoint);
  bool loaded() const noexcept { return static_cast<bool>(model_.generator); }

  ServiceResponse generate(const nlohmann::json& request);
  ServiceResponse restyle(const nlohmann::json& request);
  ServiceResponse interpolate(const nlohmann::json& request);
  ServiceResponse affine_maps(const nlohmann::json& request);
  ServiceResponse categories() const;
  ServiceResponse model_info() const;
  ServiceResponse health() const;

  // Routes a raw request; unknown routes give 404, unparsable bodies 400.
  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body);

 private:
  struct Resolved {
    Layout layout;
    StyleState style;
  };
  Resolved resolve(const nlohmann::json& request, bool allow_fresh_seed) const;
  nlohmann::json render(const Resolved& r, bool mask_map, double* latency_ms);

  LoadedModel model_;
  ServiceOptions options_;
  std::mutex generate_mutex_;
};

// HTTP front end exposing the /v1 routes and /healthz.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds without serving; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Serves until stop() is called.
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Binds and serves on host:port until the process ends.
void run_http_server(Service& service, const std::string& host, int port);
// "host:port" (host defaults to 0.0.0.0).
std::pair<std::string, int> parse_bind_address(const std::string& text);

}  // namespace lostgan
