#pragma once

// HTTP front door: POST /v1/classify, GET /healthz, GET /metrics.
//
// Handlers are plain member functions returning {status, body} so tests can
// drive them without sockets; listen() wires them into cpp-httplib.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <httplib.h>
#include <json.hpp>

#include "guardgate/error.hpp"
#include "guardgate/lexicon.hpp"
#include "guardgate/metrics.hpp"
#include "guardgate/scheduler.hpp"
#include "guardgate/simulator.hpp"
#include "guardgate/verdict.hpp"
#include "guardgate/eval.hpp"

namespace gg {

struct ServiceConfig {
  std::string profile = "mistral7b-a100";
  std::string profiles_dir;  // optional extra *.json profiles
  std::string lexicon = "config/lexicon.csv";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_body_bytes = 1 << 20;
  double metrics_window_s = 60.0;
  double time_scale = 0.0;  // 0: no sleeping, latencies are simulated only
  double threshold = 0.5;
  std::optional<double> jitter_cv;
  double short_corruption = 0.0;
  double long_corruption = 0.0;
  SchedulerConfig scheduler;

  static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    ServiceConfig c;
    auto resolve = [&](const std::string& p) {
      if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
      return (base_dir / p).lexically_normal().string();
    };
    try {
      c.profile = j.value("profile", c.profile);
      c.profiles_dir = resolve(j.value("profiles_dir", c.profiles_dir));
      c.lexicon = resolve(j.value("lexicon", c.lexicon));
      c.host = j.value("host", c.host);
      c.port = j.value("port", c.port);
      c.max_body_bytes = j.value("max_body_bytes", c.max_body_bytes);
      c.metrics_window_s = j.value("metrics_window_s", c.metrics_window_s);
      c.time_scale = j.value("time_scale", c.time_scale);
      c.threshold = j.value("threshold", c.threshold);
      if (j.contains("jitter_cv") && !j["jitter_cv"].is_null()) c.jitter_cv = j["jitter_cv"].get<double>();
      if (j.contains("corruption")) {
        const auto& k = j["corruption"];
        c.short_corruption = k.value("short", c.short_corruption);
        c.long_corruption = k.value("long", c.long_corruption);
      }
      if (j.contains("scheduler")) {
        const auto& s = j["scheduler"];
        auto& sc = c.scheduler;
        sc.max_batch = s.value("max_batch", sc.max_batch);
        sc.batch_window_ms = s.value("batch_window_ms", sc.batch_window_ms);
        sc.short_decode_len = s.value("short_decode_len", sc.short_decode_len);
        sc.long_decode_len = s.value("long_decode_len", sc.long_decode_len);
        sc.short_prompt_tokens = s.value("short_prompt_tokens", sc.short_prompt_tokens);
        sc.long_prompt_tokens = s.value("long_prompt_tokens", sc.long_prompt_tokens);
        sc.max_fallback_attempts = s.value("max_fallback_attempts", sc.max_fallback_attempts);
        sc.queue_capacity = s.value("queue_capacity", sc.queue_capacity);
        sc.tokenizer.max_tokens = s.value("max_tokens", sc.tokenizer.max_tokens);
        sc.seed = s.value("seed", sc.seed);
      }
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(std::string("service config: ") + e.what());
    }
    return c;
  }

  static ServiceConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidInput("config " + path + ": " + e.what());
    }
    return from_json(j, std::filesystem::path(path).parent_path());
  }

  // GG_CONFIG names the file when none is given; GG_PORT and GG_PROFILE
  // override the file.
  static ServiceConfig from_environment(std::optional<std::string> path = std::nullopt) {
    if (!path) {
      if (const char* env = std::getenv("GG_CONFIG"); env && *env) path = env;
    }
    ServiceConfig c = path ? load(*path) : ServiceConfig{};
    if (const char* env = std::getenv("GG_PORT"); env && *env) {
      try {
        c.port = std::stoi(env);
      } catch (const std::exception&) {
        throw InvalidInput(std::string("GG_PORT is not a number: ") + env);
      }
    }
    if (const char* env = std::getenv("GG_PROFILE"); env && *env) c.profile = env;
    return c;
  }

  void validate() const {
    if (port < 0 || port > 65535) throw InvalidInput("port out of range");
    if (max_body_bytes < 1) throw InvalidInput("max_body_bytes must be >= 1");
    if (!(metrics_window_s > 0)) throw InvalidInput("metrics_window_s must be > 0");
    if (time_scale < 0) throw InvalidInput("time_scale must be >= 0");
    scheduler.validate();
  }
};

struct HttpReply {
  int status = 200;
  std::string body;
};

inline nlohmann::ordered_json verdict_to_json(const Verdict& v) {
  return {{"verdict", std::string(to_string(v.flag))},
          {"scores", scores_to_json(v.scores)},
          {"coded", encode_verdict(v).text}};
}

inline nlohmann::ordered_json outcome_to_json(const ClassifyOutcome& o) {
  auto j = verdict_to_json(*o.verdict);
  nlohmann::ordered_json chunks = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < o.chunk_verdicts.size(); ++i) {
    nlohmann::ordered_json c{{"index", i}};
    c.update(verdict_to_json(o.chunk_verdicts[i]));
    chunks.push_back(std::move(c));
  }
  j["chunks"] = std::move(chunks);
  j["attempts"] = o.attempts;
  j["used_fallback"] = o.used_fallback;
  j["latency_ms"] = o.latency_ms;
  return j;
}

class GuardrailService {
 public:
  explicit GuardrailService(ServiceConfig cfg) : cfg_(std::move(cfg)), metrics_() {
    cfg_.validate();
    ProfileRegistry registry;
    if (!cfg_.profiles_dir.empty()) registry.load_dir(cfg_.profiles_dir);
    DeploymentProfile profile = registry.get(cfg_.profile);
    if (cfg_.jitter_cv) profile = profile.with_jitter(*cfg_.jitter_cv);
    auto lexicon = std::make_shared<const Lexicon>(Lexicon::load(cfg_.lexicon));
    auto backend = std::make_shared<const SimulatedBackend>(
        profile, lexicon, SimulatedBackend::Options{cfg_.short_corruption, cfg_.long_corruption, cfg_.threshold});
    scheduler_ = std::make_unique<Scheduler>(cfg_.scheduler, backend, cfg_.time_scale);
    scheduler_->start();
  }

  ~GuardrailService() { stop(); }

  GuardrailService(const GuardrailService&) = delete;
  GuardrailService& operator=(const GuardrailService&) = delete;

  HttpReply classify(std::string_view body) {
    if (body.size() > cfg_.max_body_bytes) return reject(413, "body exceeds " + std::to_string(cfg_.max_body_bytes) + " bytes");
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
      return reject(400, "body is not valid JSON");
    }
    if (!req.is_object() || !req.contains("text") || !req["text"].is_string()) return reject(400, "\"text\" must be a string");
    ModeHint hint = ModeHint::kAuto;
    if (req.contains("mode")) {
      const auto m = req["mode"].is_string() ? mode_hint_from_string(req["mode"].get<std::string>()) : std::nullopt;
      if (!m) return reject(400, "\"mode\" must be auto, short or long");
      hint = *m;
    }

    std::future<ClassifyOutcome> fut;
    try {
      fut = scheduler_->submit(req["text"].get<std::string>(), hint);
    } catch (const InvalidInput& e) {
      return reject(400, e.what());
    } catch (const QueueFull& e) {
      metrics_.record({RequestResult::kRejected});
      return error_reply(429, e.what());
    } catch (const BackendError& e) {
      metrics_.record({RequestResult::kRejected});
      return error_reply(503, e.what());
    }
    const ClassifyOutcome out = fut.get();
    if (!out.ok()) {
      metrics_.record({RequestResult::kError, out.latency_ms, out.used_fallback});
      return error_reply(500, out.error_message);
    }
    metrics_.record({RequestResult::kSuccess, out.latency_ms, out.used_fallback});
    return {200, outcome_to_json(out).dump()};
  }

  HttpReply healthz() const {
    if (scheduler_ && scheduler_->running()) return {200, R"({"status":"ok"})"};
    return {503, R"({"status":"unavailable"})"};
  }

  HttpReply metrics() const { return {200, metrics_to_json(metrics_.snapshot(cfg_.metrics_window_s)).dump()}; }

  MetricsRegistry& metrics_registry() noexcept { return metrics_; }
  Scheduler& scheduler() noexcept { return *scheduler_; }
  const ServiceConfig& config() const noexcept { return cfg_; }

  // Binds (port 0 picks a free port) and returns the bound port.
  int bind() {
    install_routes();
    if (cfg_.port == 0) {
      bound_port_ = server_.bind_to_any_port(cfg_.host);
      if (bound_port_ < 0) throw IoError("cannot bind " + cfg_.host);
    } else {
      if (!server_.bind_to_port(cfg_.host, cfg_.port)) throw IoError("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
      bound_port_ = cfg_.port;
    }
    return bound_port_;
  }

  // Blocks until stop().
  void serve() {
    if (bound_port_ < 0) bind();
    server_.listen_after_bind();
  }

  void wait_until_ready() const { server_.wait_until_ready(); }

  void stop() {
    server_.stop();
    if (scheduler_) scheduler_->stop();
  }

 private:
  HttpReply reject(int status, const std::string& why) {
    metrics_.record({RequestResult::kInvalid});
    return error_reply(status, why);
  }

  static HttpReply error_reply(int status, const std::string& why) {
    return {status, nlohmann::json{{"error", why}}.dump()};
  }

  void install_routes() {
    if (routes_installed_) return;
    routes_installed_ = true;
    // Let the handler produce the 413 body; httplib only guards runaway uploads.
    server_.set_payload_max_length(cfg_.max_body_bytes + 1);
    auto send = [](httplib::Response& res, const HttpReply& r) {
      res.status = r.status;
      res.set_content(r.body, "application/json");
    };
    server_.Post("/v1/classify", [this, send](const httplib::Request& req, httplib::Response& res) { send(res, classify(req.body)); });
    server_.Get("/healthz", [this, send](const httplib::Request&, httplib::Response& res) { send(res, healthz()); });
    server_.Get("/metrics", [this, send](const httplib::Request&, httplib::Response& res) { send(res, metrics()); });
  }

  ServiceConfig cfg_;
  MetricsRegistry metrics_;
  std::unique_ptr<Scheduler> scheduler_;
  httplib::Server server_;
  bool routes_installed_ = false;
  int bound_port_ = -1;
};

// Eval client that sends each document to a running service.
class ServiceHttpClient final : public ClassifierClient {
 public:
  explicit ServiceHttpClient(std::string base_url) : base_url_(std::move(base_url)) {}

  ClientReply complete(const Prompt& prompt) const override {
    httplib::Client cli(base_url_);
    cli.set_read_timeout(60, 0);
    const auto res = cli.Post("/v1/classify", nlohmann::json{{"text", prompt.document}}.dump(), "application/json");
    if (!res) throw ClientError("request to " + base_url_ + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw ClientError("service returned " + std::to_string(res->status) + ": " + res->body);
    const auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("verdict") || !j.contains("scores")) throw ClientError("malformed service reply");
    double score = 0;
    for (const auto& [k, v] : j["scores"].items()) score = std::max(score, v.get<double>());
    const bool flagged = j["verdict"] == "inappropriate";
    return {flagged ? "INAPPROPRIATE" : "APPROPRIATE", score};
  }

 private:
  std::string base_url_;
};

}  // namespace gg
