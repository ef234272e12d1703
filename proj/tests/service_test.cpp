#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "equine/dataset.hpp"
#include "equine/error.hpp"
#include "equine/image_io.hpp"
#include "equine/pipeline.hpp"
#include "equine/serialization.hpp"
#include "equine/service.hpp"
#include "httplib.h"
#include "test_support.hpp"

namespace equine {
namespace {

const nlohmann::json kAlarmedCues = {
    {"eyes", "OpenNoSclera"}, {"ears", "StiffForward"}, {"nose", "OpenNostrilsTense"}, {"neck", "AboveParallel"}};

std::string as_string(const std::vector<std::uint8_t>& bytes) { return {bytes.begin(), bytes.end()}; }

/// Manifest with three 300x200 images, the last already annotated, and one
/// saved artifact of each kind.
struct Fixture {
  testing::TempDir dir{"equine_service"};
  std::filesystem::path manifest = dir / "manifest.jsonl";
  std::filesystem::path detector_path = dir / "detector.eqm";
  std::filesystem::path classifier_path = dir / "classifier.eqm";

  explicit Fixture(double detector_threshold = 0.0) {
    DatasetManifest m;
    for (const char* id : {"a", "b", "c"}) m.records.push_back({id, std::string(id) + ".png", 300, 200});
    m.annotations.push_back({"c", {10, 10, 50, 50}, EmotionLabel::Relaxed, std::nullopt, false});
    save_manifest(m, manifest);

    DetectorConfig dc;
    dc.epochs = 0;
    dc.score_threshold = detector_threshold;
    dc.seed = 2;
    const auto samples = testing::toy_detector_samples(1, 1);
    auto det = train_detector(samples, dc).model;
    det.set_version_tag("d1");
    save_detector(det, detector_path);

    ClassifierConfig cc;
    cc.width_divisor = 8;
    cc.seed = 5;
    auto cls = build_classifier(cc);
    apply_freeze_policy(cls);
    cls.set_version_tag("c1");
    save_classifier(cls, classifier_path);
  }

  Service service(bool activate = true, std::size_t max_upload = 10 * 1024 * 1024) {
    auto registry = std::make_shared<ModelRegistry>();
    registry->scan(dir.path());
    if (activate) {
      registry->activate(ModelKind::detector, "d1");
      registry->activate(ModelKind::classifier, "c1");
    }
    return Service({manifest, max_upload}, registry);
  }
};

TEST(Service, HealthAndPredictWithoutModels) {
  Fixture f;
  auto s = f.service(false);
  auto h = s.health();
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(h.body["status"], "degraded: no active models");
  EXPECT_FALSE(h.body["ready"].get<bool>());
  auto r = s.predict(as_string(encode_png(make_uniform_image(30, 20, 1, 2, 3))));
  EXPECT_EQ(r.status, 503);
  EXPECT_EQ(r.body["code"], "no_active_models");

  s.registry().activate(ModelKind::detector, "d1");
  EXPECT_EQ(s.health().body["status"], "degraded: no active classifier");
  s.registry().activate(ModelKind::classifier, "c1");
  h = s.health();
  EXPECT_EQ(h.body["status"], "ok");
  EXPECT_EQ(h.body["models"]["detector"], "d1");
  EXPECT_EQ(h.body["models"]["classifier"], "c1");
}

TEST(Service, PredictMatchesPipeline) {
  Fixture f;
  auto s = f.service();
  const auto scene = make_toy_scene(EmotionLabel::Annoyed, 400, 260, 3);
  const auto r = s.predict(as_string(encode_png(scene.image)));
  ASSERT_EQ(r.status, 200) << r.body.dump();
  const auto models = s.registry().active();
  const auto expected = prediction_body(infer(*models->detector, *models->classifier, scene.image));
  for (const char* key : {"roi", "score", "label", "probabilities"}) EXPECT_EQ(r.body[key], expected[key]) << key;
  EXPECT_EQ(r.body["model_versions"]["detector"], "d1");
  EXPECT_EQ(r.body["model_versions"]["classifier"], "c1");
  double sum = 0;
  for (double p : r.body["probabilities"]) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Service, PredictErrors) {
  Fixture f(0.5);
  auto s = f.service();
  EXPECT_EQ(s.predict("not an image").status, 400);
  EXPECT_EQ(s.predict("not an image").body["code"], "undecodable_image");
  const auto r = s.predict(as_string(encode_png(make_uniform_image(300, 200, 128, 128, 128))));
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(r.body["code"], "no_roi");

  auto small = f.service(true, 100);
  const auto big = small.predict(as_string(encode_png(make_toy_scene(EmotionLabel::Alarmed, 300, 200, 1).image)));
  EXPECT_EQ(big.status, 413);
}

TEST(Service, AnnotationLifecycle) {
  Fixture f;
  auto s = f.service(false);
  EXPECT_EQ(s.list_annotations().body["annotations"].size(), 1u);

  auto r = s.create_annotation({{"image_id", "a"}, {"box", {5, 6, 70, 80}}, {"label", "Curious"}});
  EXPECT_EQ(r.status, 201);
  EXPECT_FALSE(r.body.contains("warning"));
  EXPECT_EQ(s.create_annotation({{"image_id", "a"}, {"box", {5, 6, 70, 80}}}).status, 409);
  EXPECT_EQ(s.create_annotation({{"image_id", "zzz"}, {"box", {5, 6, 7, 8}}}).status, 404);
  EXPECT_EQ(s.create_annotation({{"box", {5, 6, 7, 8}}}).status, 400);
  EXPECT_EQ(s.create_annotation({{"image_id", "b"}, {"box", {5, 6, 7, 8}}, {"label", "Happy"}}).status, 400);
  EXPECT_EQ(s.create_annotation({{"image_id", "b"}, {"box", {250, 6, 60, 8}}}).status, 400);
  EXPECT_EQ(s.create_annotation({{"image_id", "b"}, {"box", {0, 0, 0, 8}}}).status, 400);
  EXPECT_EQ(s.update_annotation("b", {{"box", {1, 1, 5, 5}}}).status, 404);

  r = s.update_annotation("a", {{"box", {1, 2, 30, 40}}, {"label", "Relaxed"}, {"cues", kAlarmedCues}});
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body["warning"], "cue/label mismatch");
  EXPECT_TRUE(r.body["annotation"]["override"].get<bool>());
  EXPECT_EQ(s.update_annotation("a", {{"image_id", "c"}, {"box", {1, 1, 5, 5}}}).status, 400);

  r = s.update_annotation("a", {{"box", {1, 2, 30, 40}}, {"label", "Alarmed"}, {"cues", kAlarmedCues}});
  EXPECT_EQ(r.status, 200);
  EXPECT_FALSE(r.body.contains("warning"));

  // Every accepted write is on disk and visible to a fresh service.
  const auto on_disk = load_manifest(f.manifest);
  EXPECT_EQ(on_disk, *s.manifest());
  const Annotation* a = on_disk.find_annotation("a");
  ASSERT_NE(a, nullptr);
  EXPECT_EQ(a->box, (BoundingBox{1, 2, 30, 40}));
  EXPECT_EQ(a->label, EmotionLabel::Alarmed);
  EXPECT_FALSE(a->override_mismatch);
  EXPECT_EQ(on_disk.annotations.size(), 2u);
  auto reopened = f.service(false);
  EXPECT_EQ(reopened.list_annotations().body, s.list_annotations().body);
}

TEST(Service, ConcurrentWritesAllLand) {
  Fixture f;
  DatasetManifest m = load_manifest(f.manifest);
  for (int i = 0; i < 16; ++i) m.records.push_back({"x" + std::to_string(i), "x.png", 300, 200});
  save_manifest(m, f.manifest);
  auto s = f.service(false);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&s, t] {
      for (int i = t; i < 16; i += 4) {
        s.create_annotation({{"image_id", "x" + std::to_string(i)}, {"box", {i, i, 10, 10}}});
        s.list_annotations();
      }
    });
  }
  for (auto& th : threads) th.join();
  const auto on_disk = load_manifest(f.manifest);
  EXPECT_EQ(on_disk.annotations.size(), 17u);
  EXPECT_EQ(on_disk, *s.manifest());
}

TEST(Service, ModelActivation) {
  Fixture f;
  auto s = f.service();
  const auto listed = s.list_models().body["models"];
  ASSERT_EQ(listed.size(), 2u);
  for (const auto& e : listed) EXPECT_TRUE(e["loaded"].get<bool>());

  EXPECT_EQ(s.activate_model({{"kind", "detector"}, {"version", "d9"}}).status, 409);
  EXPECT_EQ(s.activate_model({{"kind", "oracle"}, {"version", "d1"}}).status, 400);
  EXPECT_EQ(s.activate_model({{"kind", "detector"}}).status, 400);
  EXPECT_EQ(s.activate_model({{"kind", "classifier"}, {"version", "d1"}, {"path", f.detector_path.string()}}).status, 409);

  // A new version replaces the active detector; the earlier snapshot stays intact.
  const auto before = s.registry().active();
  auto det = load_detector(f.detector_path);
  det.set_version_tag("d2");
  save_detector(det, f.dir / "detector_d2.eqm");
  auto r = s.activate_model({{"kind", "detector"}, {"version", "d2"}, {"path", (f.dir / "detector_d2.eqm").string()}});
  EXPECT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(before->detector->version_tag(), "d1");
  EXPECT_EQ(s.registry().active()->detector->version_tag(), "d2");
  EXPECT_EQ(s.registry().active()->classifier, before->classifier);
  for (const auto& e : s.list_models().body["models"]) {
    if (e["kind"] == "detector") EXPECT_EQ(e["loaded"].get<bool>(), e["version"] == "d2");
  }

  // A tampered artifact is refused and the active pair is unchanged.
  {
    std::ofstream out(f.detector_path, std::ios::binary | std::ios::app);
    out << "x";
  }
  EXPECT_EQ(s.activate_model({{"kind", "detector"}, {"version", "d1"}}).status, 409);
  EXPECT_EQ(s.registry().active()->detector->version_tag(), "d2");
  std::filesystem::remove(f.dir / "detector_d2.eqm");
  EXPECT_EQ(s.activate_model({{"kind", "detector"}, {"version", "d2"}}).status, 409);
}

TEST(Service, PredictDuringActivation) {
  Fixture f;
  auto s = f.service();
  const auto png = as_string(encode_png(make_toy_scene(EmotionLabel::Curious, 300, 200, 9).image));
  std::atomic<bool> done{false};
  std::thread swapper([&] {
    for (int i = 0; i < 4; ++i) s.registry().activate(ModelKind::classifier, "c1");
    done = true;
  });
  int served = 0;
  while (!done) {
    EXPECT_EQ(s.predict(png).status, 200);
    ++served;
  }
  swapper.join();
  EXPECT_GT(served, 0);
}

TEST(Service, Ethogram) {
  Fixture f;
  auto s = f.service(false);
  const auto body = s.ethogram().body;
  ASSERT_EQ(body["profiles"].size(), 4u);
  EXPECT_EQ(body["profiles"][0]["label"], "Alarmed");
  EXPECT_EQ(body["profiles"][0]["cues"], kAlarmedCues);
}

TEST(HttpServer, Routes) {
  Fixture f;
  auto s = f.service();
  HttpServer server(s, "127.0.0.1", 0);
  server.start();
  httplib::Client client("127.0.0.1", server.port());

  auto res = client.Get("/v1/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(nlohmann::json::parse(res->body)["status"], "ok");

  const auto png = as_string(encode_png(make_toy_scene(EmotionLabel::Relaxed, 300, 200, 4).image));
  res = client.Post("/v1/predict", png, "image/png");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto raw = nlohmann::json::parse(res->body);

  httplib::MultipartFormDataItems items{{"image", png, "scene.png", "image/png"}};
  res = client.Post("/v1/predict", items);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(nlohmann::json::parse(res->body)["roi"], raw["roi"]);

  httplib::MultipartFormDataItems wrong{{"file", png, "scene.png", "image/png"}};
  res = client.Post("/v1/predict", wrong);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  res = client.Post("/v1/annotations", R"({"image_id":"b","box":[1,2,3,4],"label":"Annoyed"})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  res = client.Put("/v1/annotations/b", R"({"box":[2,2,3,4]})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  res = client.Post("/v1/annotations", "{nope", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  res = client.Get("/v1/annotations");
  ASSERT_TRUE(res);
  EXPECT_EQ(nlohmann::json::parse(res->body)["annotations"].size(), 2u);

  res = client.Get("/v1/models");
  ASSERT_TRUE(res);
  EXPECT_EQ(nlohmann::json::parse(res->body)["models"].size(), 2u);
  res = client.Post("/v1/models", R"({"kind":"detector","version":"missing"})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 409);
  EXPECT_EQ(nlohmann::json::parse(res->body)["code"], "activation_failed");

  res = client.Get("/v1/ethogram");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  res = client.Get("/v1/nothing");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
  EXPECT_EQ(nlohmann::json::parse(res->body)["code"], "not_found");
  server.stop();
}

}  // namespace
}  // namespace equine
