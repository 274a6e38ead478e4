#include "lostgan/service.hpp"

#include <httplib.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <random>

#include "lostgan/error.hpp"
#include "lostgan/layout_json.hpp"

namespace lostgan {

using nlohmann::json;

std::string encode_f32_hex(const std::vector<double>& values) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(values.size() * 8);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int shift = 28; shift >= 0; shift -= 4) out += kDigits[(bits >> shift) & 0xf];
  }
  return out;
}

std::vector<double> decode_f32_hex(const std::string& text) {
  if (text.size() % 8 != 0) throw Error(ErrorCode::kMalformedDocument, "hex float string length must be a multiple of 8");
  std::vector<double> out;
  out.reserve(text.size() / 8);
  for (std::size_t i = 0; i < text.size(); i += 8) {
    std::uint32_t bits = 0;
    for (std::size_t j = i; j < i + 8; ++j) {
      const char c = text[j];
      int d = -1;
      if (c >= '0' && c <= '9') d = c - '0';
      if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
      if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
      if (d < 0) throw Error(ErrorCode::kMalformedDocument, "invalid hex digit in style vector");
      bits = (bits << 4) | static_cast<std::uint32_t>(d);
    }
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) throw Error(ErrorCode::kStyleMismatch, "non-finite style value");
    out.push_back(f);
  }
  return out;
}

StyleState round_style_to_f32(StyleState style) {
  auto round = [](std::vector<double>& v) {
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  };
  round(style.z_img);
  for (auto& row : style.z_obj) round(row);
  return style;
}

namespace {

ServiceResponse error_response(int status, std::string_view code, const std::string& message) {
  return {status, {{"error", {{"code", code}, {"message", message}}}}, {}};
}

ServiceResponse from_error(const Error& e) {
  int status = 400;
  switch (e.code()) {
    case ErrorCode::kCheckpointIOError:
    case ErrorCode::kNonFiniteLoss:
      status = 500;
      break;
    default:
      break;
  }
  return error_response(status, e.name(), e.what());
}

ServiceResponse not_loaded() { return error_response(409, "ModelNotLoaded", "no checkpoint is loaded"); }

json style_echo(const StyleState& style) {
  json rows = json::array();
  for (const auto& row : style.z_obj) rows.push_back(encode_f32_hex(row));
  json echo = {{"z_img_hex", encode_f32_hex(style.z_img)}, {"z_obj_hex", rows}};
  echo["seed"] = style.seed ? json(*style.seed) : json(nullptr);
  return echo;
}

std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

std::vector<double> hex_or_array(const json& doc, const std::string& hex_key, const std::string& array_key) {
  if (doc.contains(hex_key)) return decode_f32_hex(doc.at(hex_key).get<std::string>());
  if (doc.contains(array_key)) return doc.at(array_key).get<std::vector<double>>();
  throw Error(ErrorCode::kMalformedDocument, "missing '" + hex_key + "'");
}

std::string png_base64(const Image& image) { return base64_encode(encode_png(image)); }

json image_json(const Image& image) {
  return {{"format", "png"}, {"encoding", "base64"}, {"width", image.width}, {"height", image.height},
          {"data", png_base64(image)}};
}

std::string tensor_base64(const Tensor& t) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(t.numel()) * sizeof(double));
  std::memcpy(bytes.data(), t.data(), bytes.size());
  return base64_encode(bytes);
}

}  // namespace

Service::Service(ServiceOptions options) : options_(options) {}

Service::Service(LoadedModel model, ServiceOptions options) : model_(std::move(model)), options_(options) {}

void Service::load(const std::filesystem::path& checkpoint) { model_ = load_model(checkpoint); }

Service::Resolved Service::resolve(const json& request, bool allow_fresh_seed) const {
  if (!request.is_object() || !request.contains("layout")) throw Error(ErrorCode::kMalformedDocument, "request needs a 'layout'");
  const auto& g = model_.generator->config();
  ParsedLayout parsed = layout_from_json(request.at("layout"), model_.cats);
  validate_layout(parsed.layout, model_.cats, options_.limits);
  const int m = parsed.layout.size();

  Resolved r{std::move(parsed.layout), {}};
  const json style_doc = request.value("style", json(nullptr));
  if (style_doc.is_object() && (style_doc.contains("z_img_hex") || style_doc.contains("z_img"))) {
    r.style.z_img = hex_or_array(style_doc, "z_img_hex", "z_img");
    const json rows = style_doc.contains("z_obj_hex") ? style_doc.at("z_obj_hex") : style_doc.value("z_obj", json::array());
    if (!rows.is_array()) throw Error(ErrorCode::kMalformedDocument, "z_obj must be an array");
    for (const auto& row : rows) r.style.z_obj.push_back(row.is_string() ? decode_f32_hex(row.get<std::string>()) : row.get<std::vector<double>>());
    if (style_doc.contains("seed") && !style_doc.at("seed").is_null()) r.style.seed = style_doc.at("seed").get<std::uint64_t>();
  } else if (style_doc.is_object() && style_doc.contains("seed")) {
    r.style = sample_style(m, g.d_noise, g.d_obj_noise, style_doc.at("seed").get<std::uint64_t>());
  } else if (parsed.style) {
    r.style = *parsed.style;
  } else if (allow_fresh_seed) {
    r.style = sample_style(m, g.d_noise, g.d_obj_noise, fresh_seed());
  } else {
    throw Error(ErrorCode::kStyleMismatch, "request needs a style");
  }
  r.style = round_style_to_f32(std::move(r.style));
  validate_style(r.style, m, -1);
  if (static_cast<int>(r.style.z_img.size()) != g.d_noise) {
    throw Error(ErrorCode::kStyleMismatch, "z_img has " + std::to_string(r.style.z_img.size()) + " values, model expects " +
                                               std::to_string(g.d_noise));
  }
  for (const auto& row : r.style.z_obj) {
    if (static_cast<int>(row.size()) != g.d_obj_noise) {
      throw Error(ErrorCode::kStyleMismatch, "z_obj row has " + std::to_string(row.size()) + " values, model expects " +
                                                 std::to_string(g.d_obj_noise));
    }
  }
  const json options = request.value("options", json::object());
  if (options.contains("resolution") && options.at("resolution").get<int>() != g.output_side()) {
    throw Error(ErrorCode::kInvalidArgument, "this model renders at " + std::to_string(g.output_side()) + " only");
  }
  return r;
}

json Service::render(const Resolved& r, bool mask_map, double* latency_ms) {
  const auto started = std::chrono::steady_clock::now();
  GeneratorOutput out;
  {
    std::lock_guard lock(generate_mutex_);
    ag::NoGradGuard no_grad;
    out = model_.generator->generate({r.layout}, {r.style}, false);
  }
  json body = {{"image", image_json(tensor_to_image(out.image.value(), 0))}, {"style", style_echo(r.style)}};
  if (mask_map) {
    const int side = model_.generator->config().output_side();
    const auto labels = isla::semantic_map(out.masks.value(), r.layout, side, side);
    std::vector<std::uint8_t> indexed(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) indexed[i] = labels[i] < 0 ? 255 : static_cast<std::uint8_t>(labels[i]);
    json palette = json::array();
    for (int c = 0; c < model_.cats.size(); ++c) {
      const auto& col = static_cast<std::size_t>(c) < model_.palette.size() ? model_.palette[static_cast<std::size_t>(c)] : Rgb{0, 0, 0};
      palette.push_back({{"label", c}, {"name", model_.cats.name(c)}, {"color", {col[0], col[1], col[2]}}});
    }
    body["semantic_map"] = {{"width", side}, {"height", side}, {"encoding", "base64-u8"}, {"background", 255},
                            {"data", base64_encode(indexed)}, {"palette", palette}};
  }
  if (latency_ms) *latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return body;
}

ServiceResponse Service::generate(const json& request) {
  if (!loaded()) return not_loaded();
  try {
    const Resolved r = resolve(request, true);
    const bool mask_map = request.value("options", json::object()).value("return_mask_map", false);
    double latency = 0.0;
    ServiceResponse resp{200, render(r, mask_map, &latency), {}};
    resp.headers["X-Generation-Latency-Ms"] = std::to_string(latency);
    return resp;
  } catch (const Error& e) {
    return from_error(e);
  } catch (const json::exception& e) {
    return error_response(400, "MalformedDocument", e.what());
  }
}

ServiceResponse Service::restyle(const json& request) {
  if (!loaded()) return not_loaded();
  try {
    Resolved r = resolve(request, false);
    const auto indices = request.value("resample", std::vector<std::int64_t>{});
    const std::uint64_t seed = request.contains("seed") ? request.at("seed").get<std::uint64_t>() : fresh_seed();
    const int d_obj = model_.generator->config().d_obj_noise;
    for (auto i : indices) {
      if (i < 0 || i >= r.layout.size()) {
        throw Error(ErrorCode::kIndexOutOfRange, "object index " + std::to_string(i) + " of " + std::to_string(r.layout.size()));
      }
      r.style.z_obj[static_cast<std::size_t>(i)] = normal_vector(seed, static_cast<std::uint64_t>(i) + 1, static_cast<std::size_t>(d_obj));
    }
    if (!indices.empty()) r.style.seed.reset();
    r.style = round_style_to_f32(std::move(r.style));
    const bool mask_map = request.value("options", json::object()).value("return_mask_map", false);
    double latency = 0.0;
    ServiceResponse resp{200, render(r, mask_map, &latency), {}};
    resp.body["resample"] = {{"indices", indices}, {"seed", seed}};
    resp.headers["X-Generation-Latency-Ms"] = std::to_string(latency);
    return resp;
  } catch (const Error& e) {
    return from_error(e);
  } catch (const json::exception& e) {
    return error_response(400, "MalformedDocument", e.what());
  }
}

ServiceResponse Service::interpolate(const json& request) {
  if (!loaded()) return not_loaded();
  try {
    const Resolved r = resolve(request, false);
    const int object = request.at("object").get<int>();
    const int steps = request.at("steps").get<int>();
    if (steps < 2 || steps > options_.max_interpolation_steps) {
      throw Error(ErrorCode::kInvalidArgument, "steps must lie in [2, " + std::to_string(options_.max_interpolation_steps) + "]");
    }
    auto endpoint = [&](const char* name) {
      const std::string hex_key = std::string(name) + "_hex";
      auto v = hex_or_array(request, hex_key, name);
      for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
      return v;
    };
    const auto z_a = endpoint("z_a");
    const auto z_b = endpoint("z_b");
    std::vector<GeneratorOutput> frames;
    {
      std::lock_guard lock(generate_mutex_);
      ag::NoGradGuard no_grad;
      frames = model_.generator->interpolate_object_style(r.layout, r.style, object, z_a, z_b, steps);
    }
    json out = json::array();
    json ts = json::array();
    for (int s = 0; s < steps; ++s) {
      const double t = static_cast<double>(s) / (steps - 1);
      ts.push_back(t);
      out.push_back({{"t", t}, {"image", image_json(tensor_to_image(frames[static_cast<std::size_t>(s)].image.value(), 0))}});
    }
    return {200, {{"frames", out}, {"t", ts}, {"object", object}, {"style", style_echo(r.style)}}, {}};
  } catch (const Error& e) {
    return from_error(e);
  } catch (const json::exception& e) {
    return error_response(400, "MalformedDocument", e.what());
  }
}

ServiceResponse Service::affine_maps(const json& request) {
  if (!loaded()) return not_loaded();
  try {
    const Resolved r = resolve(request, false);
    GeneratorOutput out;
    {
      std::lock_guard lock(generate_mutex_);
      ag::NoGradGuard no_grad;
      out = model_.generator->generate({r.layout}, {r.style}, false, true);
    }
    json sites = json::array();
    for (const auto& site : out.maps) {
      sites.push_back({{"height", site.height},
                       {"width", site.width},
                       {"channels", site.gamma.shape().back()},
                       {"encoding", "base64-f64le"},
                       {"gamma", tensor_base64(site.gamma)},
                       {"beta", tensor_base64(site.beta)},
                       {"coverage", site.coverage}});
    }
    return {200, {{"sites", sites}, {"style", style_echo(r.style)}}, {}};
  } catch (const Error& e) {
    return from_error(e);
  } catch (const json::exception& e) {
    return error_response(400, "MalformedDocument", e.what());
  }
}

ServiceResponse Service::categories() const {
  if (!loaded()) return not_loaded();
  json cats = json::array();
  for (int c = 0; c < model_.cats.size(); ++c) {
    json entry = {{"label", c}, {"name", model_.cats.name(c)}};
    if (static_cast<std::size_t>(c) < model_.palette.size()) {
      const auto& col = model_.palette[static_cast<std::size_t>(c)];
      entry["color"] = {col[0], col[1], col[2]};
    }
    cats.push_back(entry);
  }
  return {200, {{"count", model_.cats.size()}, {"categories", cats}}, {}};
}

ServiceResponse Service::model_info() const {
  if (!loaded()) return not_loaded();
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(model_.hash));
  const auto& g = model_.generator->config();
  return {200,
          {{"resolution", g.output_side()},
           {"checkpoint_hash", hash},
           {"step", model_.step},
           {"d_noise", g.d_noise},
           {"d_obj_noise", g.d_obj_noise},
           {"num_categories", model_.cats.size()},
           {"limits", {{"min_objects", options_.limits.min_objects}, {"max_objects", options_.limits.max_objects}}},
           {"config", model_.config.to_json()}},
          {}};
}

ServiceResponse Service::health() const { return {200, {{"status", "ok"}, {"model_loaded", loaded()}}, {}}; }

ServiceResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  if (method == "GET") {
    if (path == "/healthz") return health();
    if (path == "/v1/categories") return categories();
    if (path == "/v1/model") return model_info();
  } else if (method == "POST") {
    using Handler = ServiceResponse (Service::*)(const json&);
    static const std::map<std::string, Handler> routes = {{"/v1/generate", &Service::generate},
                                                          {"/v1/restyle", &Service::restyle},
                                                          {"/v1/interpolate", &Service::interpolate},
                                                          {"/v1/debug/affine_maps", &Service::affine_maps}};
    if (auto it = routes.find(path); it != routes.end()) {
      json request;
      try {
        request = json::parse(body);
      } catch (const json::parse_error& e) {
        return error_response(400, "MalformedDocument", e.what());
      }
      return (this->*(it->second))(request);
    }
  }
  return error_response(404, "NotFound", method + " " + path);
}

std::pair<std::string, int> parse_bind_address(const std::string& text) {
  const auto colon = text.rfind(':');
  std::string host = colon == std::string::npos ? text : text.substr(0, colon);
  const std::string port = colon == std::string::npos ? "8080" : text.substr(colon + 1);
  if (host.empty()) host = "0.0.0.0";
  try {
    std::size_t used = 0;
    const int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::invalid_argument(port);
    return {host, p};
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "bad bind address '" + text + "'");
  }
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>()) {
  auto dispatch = [&service](const httplib::Request& req, httplib::Response& res) {
    const ServiceResponse out = service.handle(req.method, req.path, req.body);
    res.status = out.status;
    for (const auto& [k, v] : out.headers) res.set_header(k, v);
    res.set_content(out.body.dump(), "application/json");
  };
  impl_->server.Get(R"(/.*)", dispatch);
  impl_->server.Post(R"(/.*)", dispatch);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::kInvalidArgument, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::serve() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void run_http_server(Service& service, const std::string& host, int port) {
  HttpServer server(service);
  server.bind(host, port);
  server.serve();
}

}  // namespace lostgan
