#include "partdrag/service.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <httplib.h>
#include <json.hpp>

#include "partdrag/image_io.hpp"
#include "partdrag/json_io.hpp"
#include "partdrag/toyworld.hpp"

namespace partdrag {

using nlohmann::json;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

json error_json(const std::string& message, std::optional<int> drag_index = std::nullopt) {
  json j{{"error", message}};
  if (drag_index) j["drag_index"] = *drag_index;
  return j;
}

}  // namespace

GenerateRequest parse_generate_request(const std::string& body, Resolution res, int frames,
                                       const SampleLookup& lookup) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("request is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("request must be a JSON object");

  GenerateRequest r;
  try {
    if (j.contains("image") == j.contains("sample_id")) {
      throw ValidationError("request needs exactly one of \"image\" and \"sample_id\"");
    }
    Video image;
    if (j.contains("image")) {
      std::string text = j.at("image").get<std::string>();
      if (const auto comma = text.find(','); text.rfind("data:", 0) == 0 && comma != std::string::npos) {
        text = text.substr(comma + 1);
      }
      image = decode_png(base64_decode(text));
    } else {
      const std::string id = j.at("sample_id").get<std::string>();
      std::optional<Video> v = lookup ? lookup(id) : std::nullopt;
      if (!v) throw ValidationError("unknown sample id \"" + id + "\"");
      image = v->reference_frame();
    }
    r.reference = resize_bilinear(image, res);

    r.steps = j.value("steps", 50);
    r.guidance = j.value("guidance", 5.0);
    r.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed request field: ") + e.what());
  }
  if (r.steps < 1 || r.steps > 1000) throw ValidationError("steps must lie in [1, 1000]");
  if (!std::isfinite(r.guidance) || r.guidance < 0 || r.guidance > 50) {
    throw ValidationError("guidance must lie in [0, 50]");
  }

  r.drags = drag_set_from_json(j.contains("drags") ? j["drags"] : json::array(), frames);
  r.drags = validate_drag_set(r.drags, res, frames);
  return r;
}

GenerationService::GenerationService(std::shared_ptr<DenoiserState> state, std::size_t queue_capacity)
    : state_(std::move(state)),
      model_(state_->ema()),
      schedule_(NoiseSchedule::from(state_->config())),
      capacity_(queue_capacity) {
  if (capacity_ == 0) throw ValidationError("queue capacity must be positive");
  model_->eval();
  worker_ = std::thread([this] { run(); });
}

GenerationService::~GenerationService() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  worker_.join();
  for (auto& job : queue_) job.promise.set_exception(std::make_exception_ptr(Error("service shutting down")));
}

std::size_t GenerationService::pending() const {
  std::lock_guard lock(mutex_);
  return queue_.size();
}

std::future<GenerateResult> GenerationService::submit(GenerateRequest request) {
  const RunConfig& cfg = config();
  if (request.reference.frames != 1 || request.reference.resolution() != cfg.resolution()) {
    throw ValidationError("reference must be one frame at the service resolution");
  }
  request.drags = validate_drag_set(request.drags, cfg.resolution(), cfg.frame_count);
  std::lock_guard lock(mutex_);
  if (queue_.size() >= capacity_) throw QueueFullError("generation queue is full");
  queue_.push_back(Job{std::move(request), {}, std::chrono::steady_clock::now()});
  auto future = queue_.back().promise.get_future();
  wake_.notify_one();
  return future;
}

void GenerationService::run() {
  while (true) {
    Job job;
    {
      std::unique_lock lock(mutex_);
      wake_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      job = std::move(queue_.front());
      queue_.pop_front();
    }
    const double queued = ms_since(job.enqueued);
    try {
      GenerateResult r = generate(job.request);
      r.queue_ms = queued;
      job.promise.set_value(std::move(r));
    } catch (...) {
      job.promise.set_exception(std::current_exception());
    }
  }
}

GenerateResult GenerationService::generate(const GenerateRequest& request) const {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig& cfg = config();
  SampleOptions opts;
  opts.steps = std::min(request.steps, schedule_.mode() == ScheduleMode::Discrete ? schedule_.steps() : request.steps);
  opts.guidance_max = request.guidance;
  opts.guidance_min = cfg.guidance_min;
  opts.seed = request.seed;
  const auto reference = video_to_tensor(request.reference);
  auto out = sample(predictor_of(model_), reference, {request.drags}, cfg.frame_count, schedule_, opts);
  GenerateResult r;
  r.video = tensor_to_video(out[0]);
  r.drags = request.drags;
  r.generate_ms = ms_since(t0);
  return r;
}

std::string generate_response_json(const GenerateResult& result, const std::string& request_id) {
  json frames = json::array();
  for (int n = 0; n < result.video.frames; ++n) frames.push_back(base64_encode(encode_png(result.video, n)));
  return json{{"id", request_id},
              {"frames", frames},
              {"height", result.video.height},
              {"width", result.video.width},
              {"drags", drag_set_to_json(result.drags)},
              {"timing", {{"queue_ms", result.queue_ms}, {"generate_ms", result.generate_ms}}}}
      .dump();
}

ServiceServer::ServiceServer(GenerationService& service, ServerOptions options)
    : service_(service), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

ServiceServer::~ServiceServer() { stop(); }

int ServiceServer::bind() {
  const int port = options_.port == 0 ? server_->bind_to_any_port(options_.host)
                                      : (server_->bind_to_port(options_.host, options_.port) ? options_.port : -1);
  if (port < 0) throw Error("cannot bind " + options_.host + ":" + std::to_string(options_.port));
  return port;
}

void ServiceServer::serve() { server_->listen_after_bind(); }

void ServiceServer::stop() {
  if (server_) server_->stop();
}

std::optional<Video> ServiceServer::lookup_sample(const std::string& id) const {
  if (options_.dataset_dir.empty()) return std::nullopt;
  // Ids come from the manifest only, so request text never reaches the filesystem.
  const DatasetManifest m = read_manifest(options_.dataset_dir);
  if (std::find(m.samples.begin(), m.samples.end(), id) == m.samples.end()) return std::nullopt;
  return read_png(options_.dataset_dir + "/" + id + "/frame_000.png");
}

void ServiceServer::install_routes() {
  const std::string origin = options_.allowed_origin;
  server_->set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", origin);
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
  });
  server_->Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    const RunConfig& c = service_.config();
    res.set_content(json{{"status", "ok"},
                         {"height", c.height},
                         {"width", c.width},
                         {"frames", c.frame_count},
                         {"max_drags", c.max_drags},
                         {"pending", service_.pending()}}
                        .dump(),
                    "application/json");
  });

  server_->Get("/samples", [this](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    if (!options_.dataset_dir.empty()) {
      try {
        const DatasetManifest m = read_manifest(options_.dataset_dir);
        for (const auto& id : m.samples) {
          const Video ref = read_png(options_.dataset_dir + "/" + id + "/frame_000.png");
          list.push_back({{"id", id}, {"thumbnail", base64_encode(encode_png(ref, 0))}});
        }
      } catch (const Error& e) {
        res.status = 500;
        res.set_content(error_json(e.what()).dump(), "application/json");
        return;
      }
    }
    res.set_content(json{{"samples", list}}.dump(), "application/json");
  });

  server_->Get(R"(/samples/([A-Za-z0-9_\-]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    std::optional<Video> v;
    try {
      v = lookup_sample(id);
    } catch (const Error& e) {
      res.status = 500;
      res.set_content(error_json(e.what()).dump(), "application/json");
      return;
    }
    if (!v) {
      res.status = 404;
      res.set_content(error_json("unknown sample id \"" + id + "\"").dump(), "application/json");
      return;
    }
    const auto png = encode_png(*v, 0);
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  });

  server_->Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string request_id = std::to_string(next_id_++);
    const RunConfig& c = service_.config();
    try {
      GenerateRequest r = parse_generate_request(req.body, c.resolution(), c.frame_count,
                                                 [this](const std::string& id) { return lookup_sample(id); });
      auto future = service_.submit(std::move(r));
      const GenerateResult result = future.get();
      res.set_content(generate_response_json(result, request_id), "application/json");
    } catch (const ValidationError& e) {
      res.status = 400;
      res.set_content(error_json(e.what(), e.drag_index()).dump(), "application/json");
    } catch (const QueueFullError& e) {
      res.status = 503;
      res.set_header("Retry-After", "1");
      res.set_content(error_json(e.what()).dump(), "application/json");
    } catch (const std::exception& e) {
      const std::string correlation = "req-" + request_id;
      std::cerr << "internal error [" << correlation << "]: " << e.what() << '\n';
      res.status = 500;
      json body = error_json("internal error");
      body["correlation_id"] = correlation;
      res.set_content(body.dump(), "application/json");
    }
  });
}

}  // namespace partdrag
