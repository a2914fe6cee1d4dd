#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "partdrag/image_io.hpp"
#include "partdrag/service.hpp"
#include "partdrag/toyworld.hpp"

using namespace partdrag;
using nlohmann::json;

namespace {

RunConfig service_config() {
  RunConfig c;
  c.height = 32;
  c.width = 32;
  c.frame_count = 2;
  c.level_widths = {8, 16};
  c.blocks_per_level = 1;
  c.heads = 2;
  c.attention_max_resolution = 16;
  c.diffusion_steps = 50;
  return c;
}

std::string reference_png_base64(int h = 32, int w = 32) {
  Video v(1, h, w, 3, 0.0f);
  for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i] = (i % 7) / 3.0f - 1.0f;
  return base64_encode(encode_png(v, 0));
}

json request_body(std::uint64_t seed = 1) {
  return {{"image", reference_png_base64()},
          {"drags", json::array({{{"origin", {4, 5}}, {"terminus", {10, 12}}}})},
          {"steps", 2},
          {"guidance", 3.0},
          {"seed", seed}};
}

class ServerFixture : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dataset_ = (std::filesystem::temp_directory_path() / "partdrag_service_data").string();
    std::filesystem::remove_all(dataset_);
    ToyDatasetConfig dc;
    dc.frames = 2;
    dc.count = 2;
    write_toy_dataset(dataset_, dc, 1);
    torch::manual_seed(0);
    service_ = new GenerationService(std::make_shared<DenoiserState>(service_config()), 4);
    ServerOptions opts;
    opts.port = 0;
    opts.dataset_dir = dataset_;
    server_ = new ServiceServer(*service_, opts);
    port_ = server_->bind();
    thread_ = new std::thread([] { server_->serve(); });
  }
  static void TearDownTestSuite() {
    server_->stop();
    thread_->join();
    delete thread_;
    delete server_;
    delete service_;
    std::filesystem::remove_all(dataset_);
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(300, 0);
    return c;
  }

  static inline std::string dataset_;
  static inline GenerationService* service_ = nullptr;
  static inline ServiceServer* server_ = nullptr;
  static inline std::thread* thread_ = nullptr;
  static inline int port_ = 0;
};

}  // namespace

TEST(ParseGenerateRequest, StraightDragsAreInterpolated) {
  const auto r = parse_generate_request(request_body(9).dump(), {32, 32}, 4);
  EXPECT_EQ(r.reference.frames, 1);
  EXPECT_EQ(r.reference.height, 32);
  EXPECT_EQ(r.steps, 2);
  EXPECT_EQ(r.guidance, 3.0);
  EXPECT_EQ(r.seed, 9u);
  ASSERT_EQ(r.drags.size(), 1);
  EXPECT_EQ(r.drags.drags[0], Drag::straight({4, 5}, {10, 12}, 4));
}

TEST(ParseGenerateRequest, ImageIsResizedAndDataUrlsAccepted) {
  json body = request_body();
  body["image"] = "data:image/png;base64," + reference_png_base64(16, 48);
  const auto r = parse_generate_request(body.dump(), {32, 32}, 2);
  EXPECT_EQ(r.reference.resolution(), (Resolution{32, 32}));
}

TEST(ParseGenerateRequest, Defaults) {
  const auto r = parse_generate_request(json{{"image", reference_png_base64()}}.dump(), {32, 32}, 2);
  EXPECT_EQ(r.steps, 50);
  EXPECT_EQ(r.guidance, 5.0);
  EXPECT_EQ(r.seed, 0u);
  EXPECT_TRUE(r.drags.empty());
}

TEST(ParseGenerateRequest, RejectsMalformedRequests) {
  const Resolution res{32, 32};
  EXPECT_THROW(parse_generate_request("{not json", res, 2), ValidationError);
  EXPECT_THROW(parse_generate_request("[1]", res, 2), ValidationError);
  EXPECT_THROW(parse_generate_request("{}", res, 2), ValidationError);
  json both = request_body();
  both["sample_id"] = "x";
  EXPECT_THROW(parse_generate_request(both.dump(), res, 2), ValidationError);
  json bad_image = request_body();
  bad_image["image"] = "AAAA";
  EXPECT_THROW(parse_generate_request(bad_image.dump(), res, 2), Error);
  for (const auto& [key, value] : std::vector<std::pair<std::string, json>>{
           {"steps", 0}, {"steps", 5000}, {"guidance", -1.0}, {"steps", "many"}}) {
    json j = request_body();
    j[key] = value;
    EXPECT_THROW(parse_generate_request(j.dump(), res, 2), ValidationError) << key;
  }
  EXPECT_THROW(parse_generate_request(json{{"sample_id", "nope"}}.dump(), res, 2), ValidationError);
}

TEST(ParseGenerateRequest, OutOfBoundsDragReportsItsIndex) {
  json j = request_body();
  j["drags"].push_back({{"origin", {1, 1}}, {"terminus", {40, 2}}});
  try {
    parse_generate_request(j.dump(), {32, 32}, 2);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    ASSERT_TRUE(e.drag_index().has_value());
    EXPECT_EQ(*e.drag_index(), 1);
  }
}

TEST(ParseGenerateRequest, SampleLookup) {
  Video ref(1, 32, 32, 3, 0.25f);
  const auto r = parse_generate_request(json{{"sample_id", "abc"}}.dump(), {32, 32}, 2,
                                        [&](const std::string& id) -> std::optional<Video> {
                                          if (id == "abc") return ref;
                                          return std::nullopt;
                                        });
  EXPECT_EQ(r.reference.values, ref.values);
}

TEST(GenerationServiceTest, BoundedQueueRejectsOverflow) {
  torch::manual_seed(1);
  GenerationService service(std::make_shared<DenoiserState>(service_config()), 1);
  auto request = parse_generate_request(request_body().dump(), {32, 32}, 2);
  request.steps = 50;
  std::vector<std::future<GenerateResult>> accepted;
  bool rejected = false;
  for (int i = 0; i < 6 && !rejected; ++i) {
    try {
      accepted.push_back(service.submit(request));
    } catch (const QueueFullError&) {
      rejected = true;
    }
  }
  EXPECT_TRUE(rejected);
  EXPECT_LE(accepted.size(), 2u);
  for (auto& f : accepted) EXPECT_EQ(f.get().video.frames, 2);
}

TEST(GenerationServiceTest, RejectsWrongReference) {
  GenerationService service(std::make_shared<DenoiserState>(service_config()), 2);
  GenerateRequest r;
  r.reference = Video(1, 16, 16, 3);
  EXPECT_THROW(service.submit(r), ValidationError);
  EXPECT_THROW(GenerationService(std::make_shared<DenoiserState>(service_config()), 0), ValidationError);
}

TEST_F(ServerFixture, Health) {
  auto res = client().Get("/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto j = json::parse(res->body);
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["height"], 32);
  EXPECT_EQ(j["frames"], 2);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST_F(ServerFixture, Samples) {
  auto res = client().Get("/samples");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto list = json::parse(res->body)["samples"];
  ASSERT_EQ(list.size(), 2u);
  const std::string id = list[0]["id"];
  const auto thumb = decode_png(base64_decode(list[0]["thumbnail"].get<std::string>()));
  EXPECT_EQ(thumb.height, 32);

  auto png = client().Get("/samples/" + id);
  ASSERT_TRUE(png);
  EXPECT_EQ(png->status, 200);
  EXPECT_EQ(png->get_header_value("Content-Type"), "image/png");
  const auto v = decode_png(std::vector<std::uint8_t>(png->body.begin(), png->body.end()));
  EXPECT_EQ(v.values, thumb.values);

  auto missing = client().Get("/samples/does_not_exist");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
}

TEST_F(ServerFixture, GenerateReturnsFramesAndIsSeedDeterministic) {
  auto a = client().Post("/generate", request_body(5).dump(), "application/json");
  auto b = client().Post("/generate", request_body(5).dump(), "application/json");
  ASSERT_TRUE(a && b);
  ASSERT_EQ(a->status, 200) << a->body;
  const auto ja = json::parse(a->body), jb = json::parse(b->body);
  ASSERT_EQ(ja["frames"].size(), 2u);
  EXPECT_EQ(ja["frames"], jb["frames"]);
  EXPECT_NE(ja["id"], jb["id"]);
  EXPECT_EQ(ja["drags"].size(), 1u);
  EXPECT_TRUE(ja["timing"].contains("generate_ms"));
  const auto frame = decode_png(base64_decode(ja["frames"][1].get<std::string>()));
  EXPECT_EQ(frame.resolution(), (Resolution{32, 32}));
}

TEST_F(ServerFixture, GenerateWithEmptyDragsAndSampleId) {
  const std::string id = json::parse(client().Get("/samples")->body)["samples"][0]["id"];
  json body{{"sample_id", id}, {"drags", json::array()}, {"steps", 1}};
  auto res = client().Post("/generate", body.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200) << res->body;
  EXPECT_EQ(json::parse(res->body)["drags"].size(), 0u);
}

TEST_F(ServerFixture, GenerateValidationErrors) {
  json bad = request_body();
  bad["drags"].push_back({{"origin", {0, 0}}, {"terminus", {-3, 0}}});
  auto res = client().Post("/generate", bad.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  const auto j = json::parse(res->body);
  EXPECT_EQ(j["drag_index"], 1);
  EXPECT_TRUE(j.contains("error"));

  auto garbage = client().Post("/generate", "nope", "application/json");
  ASSERT_TRUE(garbage);
  EXPECT_EQ(garbage->status, 400);
  EXPECT_FALSE(json::parse(garbage->body).contains("drag_index"));
}

TEST_F(ServerFixture, CorsPreflight) {
  auto res = client().Options("/generate");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_NE(res->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}

TEST(GenerateResponse, Layout) {
  GenerateResult r;
  r.video = Video(2, 8, 8, 3, 0.5f);
  r.drags.drags.push_back(Drag::straight({1, 1}, {2, 2}, 2));
  r.queue_ms = 1.5;
  const auto j = json::parse(generate_response_json(r, "7"));
  EXPECT_EQ(j["id"], "7");
  EXPECT_EQ(j["frames"].size(), 2u);
  EXPECT_EQ(j["height"], 8);
  EXPECT_EQ(j["timing"]["queue_ms"], 1.5);
  EXPECT_EQ(decode_png(base64_decode(j["frames"][0].get<std::string>())).values,
            decode_png(encode_png(r.video, 0)).values);
}
