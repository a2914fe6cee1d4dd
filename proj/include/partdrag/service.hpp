#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "partdrag/core_types.hpp"
#include "partdrag/denoiser.hpp"
#include "partdrag/diffusion.hpp"

namespace httplib {
class Server;
}

namespace partdrag {

/// A parsed and validated generation request.
struct GenerateRequest {
  Video reference;  // one frame at the service resolution
  DragSet drags;
  int steps = 50;
  double guidance = 5.0;
  std::uint64_t seed = 0;
};

/// Resolves a dataset sample id to its reference frame; empty when unknown.
using SampleLookup = std::function<std::optional<Video>(const std::string&)>;

/// Parses the JSON body of POST /generate:
///   {"image": base64 png | "sample_id": id,
///    "drags": [{"origin": [h, w], "terminus": [h, w]} | {"origin": [h, w], "trajectory": [[h, w], ...]}],
///    "steps": S, "guidance": w_max, "seed": n}
/// Straight drags are interpolated over the frame count. The image is resized
/// to the service resolution; drag coordinates are already in that space.
/// Throws ValidationError, with the drag index when one drag is at fault.
GenerateRequest parse_generate_request(const std::string& body, Resolution res, int frames,
                                       const SampleLookup& lookup = {});

struct GenerateResult {
  Video video;
  DragSet drags;
  double queue_ms = 0;
  double generate_ms = 0;
};

class QueueFullError : public Error {
public:
  using Error::Error;
};

/// Serializes inference behind a bounded FIFO queue drained by one worker.
/// Sampling always uses the EMA weights; the state is never modified.
class GenerationService {
public:
  GenerationService(std::shared_ptr<DenoiserState> state, std::size_t queue_capacity = 8);
  ~GenerationService();

  GenerationService(const GenerationService&) = delete;
  GenerationService& operator=(const GenerationService&) = delete;

  /// Throws QueueFullError when queue_capacity requests are already waiting.
  std::future<GenerateResult> submit(GenerateRequest request);

  const RunConfig& config() const { return state_->config(); }
  std::size_t pending() const;

private:
  struct Job {
    GenerateRequest request;
    std::promise<GenerateResult> promise;
    std::chrono::steady_clock::time_point enqueued;
  };

  void run();
  GenerateResult generate(const GenerateRequest& request) const;

  std::shared_ptr<DenoiserState> state_;
  Denoiser model_;
  NoiseSchedule schedule_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::deque<Job> queue_;
  bool stopping_ = false;
  std::thread worker_;
};

/// Frames as base64 PNG plus the validated drags and timing.
std::string generate_response_json(const GenerateResult& result, const std::string& request_id);

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::string dataset_dir;  // enables sample_id references and /samples
  std::string allowed_origin = "*";
};

/// HTTP front end: POST /generate, GET /health, GET /samples, GET /samples/{id}.
class ServiceServer {
public:
  ServiceServer(GenerationService& service, ServerOptions options);
  ~ServiceServer();

  /// Binds the socket; returns the bound port.
  int bind();
  /// Serves until stop(); call after bind().
  void serve();
  void stop();

private:
  void install_routes();
  std::optional<Video> lookup_sample(const std::string& id) const;

  GenerationService& service_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::atomic<std::uint64_t> next_id_{1};
};

}  // namespace partdrag
