#include "partdrag/cli.hpp"

#include <chrono>
#include <cmath>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <torch/torch.h>

#include "partdrag/curation.hpp"
#include "partdrag/diffusion.hpp"
#include "partdrag/image_io.hpp"
#include "partdrag/json_io.hpp"
#include "partdrag/metrics.hpp"
#include "partdrag/service.hpp"
#include "partdrag/toyworld.hpp"

namespace partdrag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_file(const std::string& dir, int n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "/frame_%03d.png", n);
  return dir + buf;
}

json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

Video read_video_dir(const std::string& dir, int frames) {
  std::vector<Video> fr;
  for (int n = 0; n < frames; ++n) fr.push_back(read_png(frame_file(dir, n)));
  return stack_frames(fr);
}

void write_video_dir(const std::string& dir, const Video& v, const DragSet& drags) {
  fs::create_directories(dir);
  for (int n = 0; n < v.frames; ++n) write_png(frame_file(dir, n), v, n);
  write_json_file(dir + "/drags.json",
                  {{"resolution", {v.height, v.width}}, {"frames", v.frames}, {"drags", drag_set_to_json(drags)}});
}

const char* kind_name(ClipKind k) {
  switch (k) {
    case ClipKind::Static:
      return "static";
    case ClipKind::Translation:
      return "translation";
    case ClipKind::Articulated:
      return "articulated";
  }
  return "?";
}

json metrics_json(const MotionMetrics& m) {
  return {{"bbox_dims", m.bbox_dims},
          {"bbox_center", m.bbox_center},
          {"largest_bbox", m.largest_bbox},
          {"mean_displacement", m.mean_displacement},
          {"max_displacement", m.max_displacement}};
}

// ---------------------------------------------------------------------------

struct GenerateDataArgs {
  std::string out;
  std::string kind = "videos";
  std::string config;
  int count = 8;
  std::uint64_t first_seed = 0;
  int height = 32, width = 32, frames = 4;
  int threads = 0;
  int timesteps = 16, points = 400;
};

int generate_data(const GenerateDataArgs& a, std::ostream& out) {
  if (a.kind == "videos") {
    ToyDatasetConfig c;
    c.height = a.height;
    c.width = a.width;
    c.frames = a.frames;
    if (!a.config.empty()) {
      const RunConfig rc = load_run_config(a.config);
      c.height = rc.height;
      c.width = rc.width;
      c.frames = rc.frame_count;
    }
    c.count = a.count;
    c.first_seed = a.first_seed;
    write_toy_dataset(a.out, c, a.threads);
    out << "wrote " << c.count << " toy videos (" << c.height << "x" << c.width << ", N=" << c.frames << ") to "
        << a.out << ", config hash " << dataset_config_hash(c) << "\n";
    return 0;
  }
  if (a.kind != "clips") throw ValidationError("--kind must be videos or clips");
  fs::create_directories(a.out);
  json labels = json::object();
  for (int i = 0; i < a.count; ++i) {
    const auto kind = static_cast<ClipKind>(i % 3);
    const std::uint64_t seed = a.first_seed + static_cast<std::uint64_t>(i);
    char id[32];
    std::snprintf(id, sizeof id, "clip_%05d", i);
    write_clip_dir(a.out + "/" + id, synthetic_clip(kind, seed, a.timesteps, a.points));
    labels[id] = {{"kind", kind_name(kind)}, {"keep", construction_label(kind)}, {"seed", seed}};
  }
  write_json_file(a.out + "/labels.json", labels);
  out << "wrote " << a.count << " synthetic clips to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct CurateArgs {
  std::string clips;
  std::string out;
  std::string filter;
  std::string review = "mock";
  std::string mock_reply = "No";
  double holdout = 0.3;
  std::uint64_t seed = 0;
  int frames = 0;
  int height = 64, width = 64;
};

int curate(const CurateArgs& a, std::ostream& out) {
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(a.clips)) {
    if (e.is_directory() && fs::exists(e.path() / "positions.txt")) ids.push_back(e.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw Error("no clip directories under " + a.clips);

  std::vector<MotionClip> clips;
  std::vector<MotionMetrics> metrics;
  for (const auto& id : ids) {
    clips.push_back(read_clip_dir(a.clips + "/" + id));
    metrics.push_back(compute_motion_metrics(clips.back()));
  }
  fs::create_directories(a.out);

  FilterModel model;
  json filter_report;
  if (!a.filter.empty()) {
    std::ifstream in(a.filter);
    if (!in) throw Error("cannot open " + a.filter);
    std::stringstream ss;
    ss << in.rdbuf();
    model = FilterModel::from_json_text(ss.str());
    filter_report = {{"source", a.filter}};
  } else {
    const std::string labels_path = a.clips + "/labels.json";
    if (!fs::exists(labels_path)) throw Error("no --filter given and no labels.json to train one");
    const json labels = read_json_file(labels_path);
    std::vector<int> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(a.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_hold = static_cast<std::size_t>(std::floor(a.holdout * static_cast<double>(ids.size())));
    std::vector<std::pair<MotionMetrics, bool>> train, held;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& id = ids[order[i]];
      if (!labels.contains(id)) throw Error("labels.json has no entry for " + id);
      (i < n_hold ? held : train).emplace_back(metrics[order[i]], labels[id].at("keep").get<bool>());
    }
    ForestConfig fc;
    fc.seed = a.seed;
    model = train_filter(train, fc);
    int correct = 0;
    for (const auto& [m, keep] : held) correct += model.keep(m) == keep ? 1 : 0;
    const double held_acc = held.empty() ? 0.0 : static_cast<double>(correct) / held.size();
    std::ofstream(a.out + "/filter.json") << model.to_json_text() << '\n';
    filter_report = {{"trained_on", train.size()},
                     {"held_out", held.size()},
                     {"training_accuracy", model.training_accuracy},
                     {"held_out_accuracy", held_acc}};
    out << "filter: " << train.size() << " training clips, training accuracy " << model.training_accuracy
        << ", held-out accuracy " << held_acc << " on " << held.size() << "\n";
  }

  std::unique_ptr<ReviewClient> client;
  if (a.review == "mock") {
    client = std::make_unique<MockReviewClient>(a.mock_reply);
  } else if (a.review == "http") {
    client = std::make_unique<HttpReviewClient>(HttpReviewOptions{});
  } else if (a.review != "none") {
    throw ValidationError("--review must be none, mock or http");
  }

  json entries = json::array();
  std::mt19937_64 rng(a.seed ^ 0xc0ffeeULL);
  int kept = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Camera camera;
    camera.resolution = {a.height, a.width};
    if (clips[i].camera) camera = *clips[i].camera;
    json e{{"id", ids[i]}, {"metrics", metrics_json(metrics[i])}};
    const bool filter_keep = model.keep(metrics[i]);
    e["filter_keep"] = filter_keep;
    bool keep = filter_keep;
    if (keep && client) {
      const ReviewVerdict v = review_clip(clips[i], camera, *client);
      e["review"] = v == ReviewVerdict::Keep ? "keep" : "discard";
      keep = v == ReviewVerdict::Keep;
    }
    if (keep) {
      DragSamplingPolicy policy;
      policy.frames = a.frames;
      try {
        const DragSet d = sample_drags(clips[i], camera, policy, rng);
        e["drags"] = drag_set_to_json(d);
        const int frames = d.empty() ? clips[i].timesteps : d.drags.front().frame_count();
        fs::create_directories(a.out + "/" + ids[i]);
        write_json_file(a.out + "/" + ids[i] + "/drags.json",
                        {{"resolution", {camera.resolution.height, camera.resolution.width}},
                         {"frames", frames},
                         {"drags", drag_set_to_json(d)}});
      } catch (const ValidationError& err) {
        e["drag_error"] = err.what();
        keep = false;
      }
    }
    e["kept"] = keep;
    kept += keep ? 1 : 0;
    entries.push_back(std::move(e));
  }
  write_json_file(a.out + "/manifest.json", {{"format", "partdrag-curated"},
                                             {"version", 1},
                                             {"filter", filter_report},
                                             {"review", a.review},
                                             {"clips", entries}});
  out << "kept " << kept << " of " << ids.size() << " clips; manifest at " << a.out << "/manifest.json\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  int max_steps = 0;
  int checkpoint_every = 0;
  int log_every = 1;
  bool resume = false;
};

std::vector<TrainingExample> load_training_set(const std::string& dir, const RunConfig& cfg) {
  const DatasetManifest m = read_manifest(dir);
  if (m.config.height != cfg.height || m.config.width != cfg.width || m.config.frames != cfg.frame_count) {
    throw ValidationError("dataset is " + std::to_string(m.config.height) + "x" + std::to_string(m.config.width) +
                          " N=" + std::to_string(m.config.frames) + " but the config wants " +
                          std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                          " N=" + std::to_string(cfg.frame_count));
  }
  std::vector<TrainingExample> data;
  for (const auto& id : m.samples) {
    ToySample s = read_toy_sample(dir, id, false);
    data.push_back({std::move(s.video), std::move(s.drags)});
  }
  return data;
}

int train(const TrainArgs& a, std::ostream& out) {
  if (a.max_steps < 1) throw ValidationError("--max-steps must be positive");
  const RunConfig cfg = load_run_config(a.config);
  const auto data = load_training_set(a.data, cfg);
  fs::create_directories(a.out);
  const std::string ckpt = a.out + "/checkpoint.bin";

  std::unique_ptr<DenoiserState> state;
  if (a.resume && fs::exists(ckpt)) {
    state = DenoiserState::load(ckpt);
    if (!(state->config() == cfg)) throw ValidationError("checkpoint config differs from --config");
    out << "resumed from step " << state->step << "\n";
  } else {
    state = std::make_unique<DenoiserState>(cfg);
  }
  save_run_config(cfg, a.out + "/config.json");

  Trainer trainer(*state, cfg.seed + static_cast<std::uint64_t>(state->step));
  std::ofstream log(a.out + "/loss.jsonl", a.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw Error("cannot write " + a.out + "/loss.jsonl");
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < a.max_steps; ++i) {
    const double loss = trainer.step(data);
    log << json{{"step", state->step}, {"loss", loss}}.dump() << '\n';
    if (a.log_every > 0 && (i + 1) % a.log_every == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out << "step " << state->step << " loss " << loss << " (" << std::fixed << std::setprecision(1) << secs
          << " s)" << std::defaultfloat << std::setprecision(6) << "\n";
    }
    if (a.checkpoint_every > 0 && (i + 1) % a.checkpoint_every == 0) state->save(ckpt);
  }
  log.flush();
  state->save(ckpt);
  out << "saved " << ckpt << " at step " << state->step << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  std::string checkpoint;
  std::string data;
  std::string image;
  std::string drags;
  std::string out;
  std::uint64_t seed = 0;
  int steps = 0;
  double guidance = -1;
  bool live = false;
  int limit = 0;
};

int sample_cmd(const SampleArgs& a, std::ostream& out) {
  auto state = DenoiserState::load(a.checkpoint);
  const RunConfig& cfg = state->config();
  const NoiseSchedule schedule = NoiseSchedule::from(cfg);
  SampleOptions opts;
  opts.steps = a.steps > 0 ? a.steps : cfg.sampler_steps;
  opts.guidance_max = a.guidance >= 0 ? a.guidance : cfg.guidance_max;
  opts.guidance_min = cfg.guidance_min;

  std::vector<std::tuple<std::string, Video, DragSet>> jobs;
  if (!a.data.empty()) {
    const DatasetManifest m = read_manifest(a.data);
    for (const auto& id : m.samples) {
      if (a.limit > 0 && static_cast<int>(jobs.size()) >= a.limit) break;
      ToySample s = read_toy_sample(a.data, id, false);
      jobs.emplace_back(id, resize_bilinear(s.video.reference_frame(), cfg.resolution()), s.drags);
    }
  } else {
    if (a.image.empty()) throw ValidationError("sample needs --data or --image");
    DragSet d;
    if (!a.drags.empty()) {
      const json j = read_json_file(a.drags);
      d = drag_set_from_json(j.is_object() ? j.at("drags") : j, cfg.frame_count);
    }
    jobs.emplace_back("sample", resize_bilinear(read_png(a.image), cfg.resolution()), d);
  }

  fs::create_directories(a.out);
  Denoiser model = state->model(!a.live);
  model->eval();
  json ids = json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& [id, ref, drags] = jobs[i];
    drags = validate_drag_set(drags, cfg.resolution(), cfg.frame_count);
    opts.seed = a.seed + i;
    const auto video = sample(predictor_of(model), video_to_tensor(ref), {drags}, cfg.frame_count, schedule, opts);
    write_video_dir(a.out + "/" + id, tensor_to_video(video[0]), drags);
    ids.push_back(id);
    out << "sampled " << id << "\n";
  }
  write_json_file(a.out + "/samples.json", {{"checkpoint_step", state->step},
                                            {"seed", a.seed},
                                            {"steps", opts.steps},
                                            {"guidance", opts.guidance_max},
                                            {"weights", a.live ? "live" : "ema"},
                                            {"samples", ids}});
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string pred;
  std::string data;
  std::string report;
  std::string pred_tracks;
  bool baseline = true;
};

int evaluate(const EvaluateArgs& a, std::ostream& out) {
  const DatasetManifest m = read_manifest(a.data);
  json rows = json::array();
  double sum_psnr = 0, sum_ssim = 0, sum_fo = 0, sum_ff = 0, base_ff = 0, base_psnr = 0;
  int correct = 0, total = 0, n = 0;
  out << std::left << std::setw(16) << "sample" << std::right << std::setw(10) << "psnr" << std::setw(9) << "ssim"
      << std::setw(11) << "flow(u)" << std::setw(11) << "flow(fg)" << std::setw(9) << "dir" << "\n";
  for (const auto& id : m.samples) {
    const std::string pdir = a.pred + "/" + id;
    if (!fs::exists(frame_file(pdir, 0))) continue;
    const ToySample gt = read_toy_sample(a.data, id, true);
    const Video pred = read_video_dir(pdir, gt.video.frames);
    if (!pred.same_shape(gt.video)) throw ValidationError("prediction " + id + " differs in shape from ground truth");
    SampleEvaluation e = evaluate_video(pred, gt.video, gt.drags, gt.masks[0]);
    if (!a.pred_tracks.empty()) {
      const std::string tpath = a.pred_tracks + "/" + id + ".json";
      std::ifstream tin(tpath);
      if (!tin) throw Error("cannot open " + tpath);
      std::stringstream ss;
      ss << tin.rdbuf();
      const TrajectorySet pt = trajectories_from_json_text(ss.str());
      pt.validate(gt.video.resolution());
      const Palette pal = estimate_palette(gt.video, gt.masks[0]);
      const TrajectorySet gtt = track_points(gt.video, pal, make_track_seeds(gt.drags, gt.masks[0]));
      e.flow_foreground = flow_error(pt, gtt, FlowMode::Foreground);
      e.flow_origins = gt.drags.empty() ? 0.0 : flow_error(pt, gtt, FlowMode::Origins);
    }
    json row{{"id", id},
             {"psnr", number_or_inf(e.psnr)},
             {"ssim", e.ssim},
             {"flow_error_origins", e.flow_origins},
             {"flow_error_foreground", e.flow_foreground},
             {"direction_correct", e.direction.correct},
             {"direction_total", e.direction.total}};
    if (a.baseline) {
      const SampleEvaluation b =
          evaluate_video(gt.video.repeat_reference(gt.video.frames), gt.video, gt.drags, gt.masks[0]);
      row["static_flow_error_foreground"] = b.flow_foreground;
      row["static_psnr"] = number_or_inf(b.psnr);
      base_ff += b.flow_foreground;
      base_psnr += b.psnr;
    }
    rows.push_back(row);
    sum_psnr += e.psnr;
    sum_ssim += e.ssim;
    sum_fo += e.flow_origins;
    sum_ff += e.flow_foreground;
    correct += e.direction.correct;
    total += e.direction.total;
    ++n;
    std::ostringstream p;
    if (std::isinf(e.psnr)) {
      p << "inf";
    } else {
      p << std::fixed << std::setprecision(2) << e.psnr;
    }
    out << std::left << std::setw(16) << id << std::right << std::setw(10) << p.str() << std::fixed
        << std::setprecision(4) << std::setw(9) << e.ssim << std::setprecision(3) << std::setw(11) << e.flow_origins
        << std::setw(11) << e.flow_foreground << std::setw(5) << e.direction.correct << "/" << e.direction.total
        << std::defaultfloat << "\n";
  }
  if (n == 0) throw Error("no predictions under " + a.pred + " match samples of " + a.data);
  json summary{{"samples", n},
               {"psnr", number_or_inf(sum_psnr / n)},
               {"ssim", sum_ssim / n},
               {"flow_error_origins", sum_fo / n},
               {"flow_error_foreground", sum_ff / n},
               {"direction_accuracy", total ? static_cast<double>(correct) / total : 0.0},
               {"direction_drags", total}};
  if (a.baseline) {
    summary["static_flow_error_foreground"] = base_ff / n;
    summary["static_psnr"] = number_or_inf(base_psnr / n);
  }
  out << "mean: psnr " << summary["psnr"].dump() << ", ssim " << sum_ssim / n << ", flow(u) " << sum_fo / n
      << ", flow(fg) " << sum_ff / n << ", direction " << correct << "/" << total;
  if (a.baseline) out << ", static flow(fg) " << base_ff / n;
  out << "\n";
  const json report{{"summary", summary}, {"samples", rows}};
  if (!a.report.empty()) write_json_file(a.report, report);
  return 0;
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string checkpoint;
  std::string data;
  std::string host = "127.0.0.1";
  int port = 8080;
  int queue = 8;
};

ServiceServer* g_server = nullptr;

int serve(const ServeArgs& a, std::ostream& out) {
  std::shared_ptr<DenoiserState> state = DenoiserState::load(a.checkpoint);
  GenerationService service(state, static_cast<std::size_t>(a.queue));
  ServerOptions opts;
  opts.host = a.host;
  opts.port = a.port;
  opts.dataset_dir = a.data;
  ServiceServer server(service, opts);
  const int port = server.bind();
  out << "serving on http://" << a.host << ":" << port << std::endl;
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  server.serve();
  g_server = nullptr;
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Drag-conditioned part-level video diffusion toolkit", "partdrag"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Intra-op threads for tensor math (0 keeps the library default)");

  GenerateDataArgs gd;
  auto* gen = app.add_subcommand("generate-data", "Write a toy video dataset or synthetic 3-D clips");
  gen->add_option("--out", gd.out, "Output directory")->required();
  gen->add_option("--kind", gd.kind, "videos or clips")->check(CLI::IsMember({"videos", "clips"}));
  gen->add_option("--config", gd.config, "Run config; its resolution and frame count override the flags");
  gen->add_option("--count", gd.count, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--first-seed", gd.first_seed, "Seed of the first sample");
  gen->add_option("--height", gd.height, "Frame height");
  gen->add_option("--width", gd.width, "Frame width");
  gen->add_option("--frames", gd.frames, "Frames per video");
  gen->add_option("--timesteps", gd.timesteps, "Timesteps per synthetic clip");
  gen->add_option("--points", gd.points, "Points per synthetic clip");
  gen->add_option("--workers", gd.threads, "Generation threads (0 uses all cores)");

  CurateArgs cu;
  auto* cur = app.add_subcommand("curate", "Filter motion clips and sample drags for the kept ones");
  cur->add_option("--clips", cu.clips, "Directory of clip directories")->required()->check(CLI::ExistingDirectory);
  cur->add_option("--out", cu.out, "Output directory")->required();
  cur->add_option("--filter", cu.filter, "Trained filter model; trained from clips/labels.json when absent");
  cur->add_option("--review", cu.review, "none, mock or http")->check(CLI::IsMember({"none", "mock", "http"}));
  cur->add_option("--mock-reply", cu.mock_reply, "Answer of the mock review client");
  cur->add_option("--holdout", cu.holdout, "Held-out fraction when training the filter")->check(CLI::Range(0.0, 0.9));
  cur->add_option("--seed", cu.seed, "Seed for splits, forest and drag sampling");
  cur->add_option("--frames", cu.frames, "Frames per drag (0 uses every timestep)");
  cur->add_option("--height", cu.height, "Image height for clips without a camera");
  cur->add_option("--width", cu.width, "Image width for clips without a camera");

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Train the denoiser on a toy dataset");
  trn->add_option("--config", tr.config, "Run config JSON")->required()->check(CLI::ExistingFile);
  trn->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  trn->add_option("--out", tr.out, "Run directory (checkpoint.bin, loss.jsonl, config.json)")->required();
  trn->add_option("--max-steps", tr.max_steps, "Optimizer steps to run")->required();
  trn->add_option("--checkpoint-every", tr.checkpoint_every, "Save every K steps (0: only at the end)");
  trn->add_option("--log-every", tr.log_every, "Print every K steps (0: quiet)");
  trn->add_flag("--resume", tr.resume, "Continue from out/checkpoint.bin when present");

  SampleArgs sa;
  auto* smp = app.add_subcommand("sample", "Generate videos from a checkpoint");
  smp->add_option("--checkpoint", sa.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  smp->add_option("--out", sa.out, "Output directory")->required();
  smp->add_option("--data", sa.data, "Dataset whose references and drags to use");
  smp->add_option("--image", sa.image, "Reference PNG (with --drags)");
  smp->add_option("--drags", sa.drags, "Drags JSON: an array or an object with \"drags\"");
  smp->add_option("--seed", sa.seed, "Sampling seed; sample i uses seed + i");
  smp->add_option("--steps", sa.steps, "Sampler steps (0: config value)");
  smp->add_option("--guidance", sa.guidance, "Maximum guidance weight (negative: config value)");
  smp->add_option("--limit", sa.limit, "Sample at most this many dataset entries");
  smp->add_flag("--live", sa.live, "Use live weights instead of the EMA shadow");

  EvaluateArgs ev;
  auto* evl = app.add_subcommand("evaluate", "Score sampled videos against toy ground truth");
  evl->add_option("--pred", ev.pred, "Directory of predicted sample directories")->required()->check(
      CLI::ExistingDirectory);
  evl->add_option("--data", ev.data, "Ground-truth dataset directory")->required()->check(CLI::ExistingDirectory);
  evl->add_option("--report", ev.report, "Write the JSON report here");
  evl->add_option("--pred-tracks", ev.pred_tracks, "Directory of <id>.json trajectory files for the predictions");
  bool no_baseline = false;
  evl->add_flag("--no-baseline", no_baseline, "Skip the frozen-reference baseline");

  ServeArgs sv;
  auto* srv = app.add_subcommand("serve", "Serve generation over HTTP");
  srv->add_option("--checkpoint", sv.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  srv->add_option("--data", sv.data, "Dataset directory for sample ids and /samples");
  srv->add_option("--host", sv.host, "Bind address");
  srv->add_option("--port", sv.port, "Port (0 picks a free one)");
  srv->add_option("--queue", sv.queue, "Maximum waiting requests")->check(CLI::PositiveNumber);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "partdrag: " << e.what() << "\n";
    if (app.get_subcommands().empty()) err << app.help();
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (threads > 0) torch::set_num_threads(threads);
    if (gen->parsed()) return generate_data(gd, out);
    if (cur->parsed()) return curate(cu, out);
    if (trn->parsed()) return train(tr, out);
    if (smp->parsed()) return sample_cmd(sa, out);
    if (evl->parsed()) {
      ev.baseline = !no_baseline;
      return evaluate(ev, out);
    }
    if (srv->parsed()) return serve(sv, out);
  } catch (const std::exception& e) {
    err << "partdrag: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace partdrag
