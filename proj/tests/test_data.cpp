#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "criteria.hpp"
#include "galaxyedit/model_clients.hpp"
#include "galaxyedit/records.hpp"
#include "galaxyedit/synth.hpp"
#include "test_util.hpp"

using namespace galaxyedit;
using nlohmann::json;

TEST(Dilation, MatchesMinkowskiOracleOnRandomMasks) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 100; ++i) {
    const double density = std::uniform_real_distribution<double>(0.001, 0.08)(rng);
    const Mask m = testutil::random_mask(32, 32, density, rng);
    ASSERT_EQ(dilate_mask(m, 15), criteria::minkowski_dilation(m, 15)) << "mask " << i;
  }
}

TEST(Dilation, OtherKernelsAndEdges) {
  std::mt19937_64 rng(22);
  for (int k : {1, 3, 5, 7}) {
    const Mask m = testutil::random_mask(17, 9, 0.05, rng);
    EXPECT_EQ(dilate_mask(m, k), criteria::minkowski_dilation(m, k)) << k;
  }
  Mask corner(10, 10);
  corner.at(0, 0) = 1;
  EXPECT_EQ(dilate_mask(corner, 15).popcount(), 64);
  EXPECT_THROW(dilate_mask(corner, 4), std::invalid_argument);
  EXPECT_EQ(dilate_mask(Mask(5, 5), 15).popcount(), 0);
}

TEST(Dilation, IsMonotoneAndExtensive) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 20; ++i) {
    const Mask a = testutil::random_mask(24, 24, 0.03, rng);
    const Mask b = mask_or(a, testutil::random_mask(24, 24, 0.03, rng));
    const Mask da = dilate_mask(a, 5), db = dilate_mask(b, 5);
    for (std::size_t p = 0; p < a.bits.size(); ++p) {
      EXPECT_LE(a.bits[p], da.bits[p]);
      EXPECT_LE(da.bits[p], db.bits[p]);
    }
  }
}

TEST(Image, PngRoundTrip) {
  std::mt19937_64 rng(1);
  const Image img = testutil::random_image(13, 7, rng);
  EXPECT_EQ(decode_png(encode_png(img)), img);
  Image gray(5, 4, 1, 0);
  gray.at(2, 2, 0) = 200;
  EXPECT_EQ(decode_png(encode_png(gray)), gray);
  EXPECT_THROW(decode_png({1, 2, 3}), std::runtime_error);
}

TEST(Image, MaskImageRoundTrip) {
  std::mt19937_64 rng(2);
  const Mask m = testutil::random_mask(9, 6, 0.4, rng);
  const Image img = mask_to_image(m);
  EXPECT_EQ(img.channels, 1);
  for (auto p : img.pixels) EXPECT_TRUE(p == 0 || p == 255);
  EXPECT_EQ(mask_from_image(img), m);
}

TEST(Image, BoxHelpers) {
  const BBox a{0, 0, 4, 4}, b{2, 2, 6, 6};
  EXPECT_EQ(bbox_union(a, b), (BBox{0, 0, 6, 6}));
  EXPECT_NEAR(bbox_iou(a, b), 4.0 / 28.0, 1e-12);
  EXPECT_EQ(clamp_bbox({-3, -1, 50, 9}, 10, 8), (BBox{0, 0, 10, 8}));
  Mask m = mask_from_bbox(10, 10, {2, 3, 5, 7});
  EXPECT_EQ(m.popcount(), 12);
  EXPECT_EQ(mask_bbox(m), (BBox{2, 3, 5, 7}));
  EXPECT_THROW(mask_bbox(Mask(3, 3)), std::invalid_argument);
}

TEST(Image, ResizeAndTensor) {
  Image img(4, 4, 3, 0);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 200;
  const Image half = resize(img, 2, 2);
  EXPECT_EQ(half.at(0, 0, 0), 200);
  EXPECT_EQ(half.at(1, 1, 0), 0);
  const auto t = images_to_tensor({img});
  EXPECT_EQ(t.shape(), (Shape{1, 3, 4, 4}));
  EXPECT_EQ(tensor_to_image(t, 0), img);
}

TEST(Synth, SameSeedIsByteIdentical) {
  testutil::TempDir a, b;
  const auto pa = synth_corpus(3, 5, a.path());
  const auto pb = synth_corpus(3, 5, b.path());
  ASSERT_EQ(pa.size(), 3u);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(testutil::slurp(pa[i]), testutil::slurp(pb[i]));
    EXPECT_EQ(testutil::slurp(sidecar_path(pa[i])), testutil::slurp(sidecar_path(pb[i])));
  }
}

TEST(Synth, SingleImageCorpus) {
  testutil::TempDir d;
  const auto p = synth_corpus(1, 9, d.path());
  ASSERT_EQ(p.size(), 1u);
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(d.path())) files += e.is_regular_file();
  EXPECT_EQ(files, 2);
  const auto t = read_sidecar(p[0]);
  const Image img = read_png(p[0]);
  EXPECT_EQ(t.width, img.width);
  for (const auto& o : t.objects) {
    EXPECT_TRUE(o.bbox.valid_in(img.width, img.height));
    EXPECT_GE(find_class(o.label), 0);
  }
}

TEST(Synth, ObjectCountDistributionFollowsConfig) {
  SynthConfig cfg;
  cfg.min_objects = 2;
  cfg.max_objects = 4;
  cfg.group_probability = 0;
  cfg.tiny_probability = 0;
  cfg.huge_probability = 0;
  std::map<int, int> freq;
  constexpr int kScenes = 300;
  for (int s = 0; s < kScenes; ++s) ++freq[static_cast<int>(make_scene(cfg, s).truth.objects.size())];
  for (const auto& [n, c] : freq) {
    EXPECT_GE(n, 2);
    EXPECT_LE(n, 4);
  }
  // Uniform over {2, 3, 4}: each count within 5 sigma of 100.
  for (int n = 2; n <= 4; ++n) EXPECT_NEAR(freq[n], kScenes / 3.0, 5 * std::sqrt(kScenes * (1.0 / 3) * (2.0 / 3))) << n;
}

TEST(Synth, EditPairsAreDeterministic) {
  const auto a = make_edit_pairs(6, 16, 3), b = make_edit_pairs(6, 16, 3);
  EXPECT_EQ(a.source.vec(), b.source.vec());
  EXPECT_EQ(a.target.vec(), b.target.vec());
  EXPECT_EQ(a.instructions, b.instructions);
  for (std::size_t i = 0; i < a.tasks.size(); ++i) EXPECT_TRUE(a.tasks[i] == "add" || a.tasks[i] == "remove");
  const auto sub = a.subset(2, 5);
  EXPECT_EQ(sub.size(), 3);
  EXPECT_EQ(sub.instructions[0], a.instructions[2]);
}

namespace {

class FlakyTransport : public Transport {
 public:
  FlakyTransport(int failures, bool permanent = false) : failures_(failures), permanent_(permanent) {}
  json call(const json&) override {
    ++calls;
    if (calls <= failures_) {
      if (permanent_) throw ClientError("bad request");
      throw TransportError("503");
    }
    return {{"schema", kWireSchema}, {"ok", true}};
  }
  int calls = 0;

 private:
  int failures_;
  bool permanent_;
};

}  // namespace

TEST(Clients, RetryWithExponentialBackoff) {
  auto inner = std::make_shared<FlakyTransport>(2);
  std::vector<long> sleeps;
  RetryingTransport t(inner, 3, 100, [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
  EXPECT_TRUE(t.call({}).at("ok").get<bool>());
  EXPECT_EQ(inner->calls, 3);
  EXPECT_EQ(sleeps, (std::vector<long>{100, 200}));
}

TEST(Clients, RetryGivesUpWithClientError) {
  auto inner = std::make_shared<FlakyTransport>(10);
  RetryingTransport t(inner, 2, 1, [](std::chrono::milliseconds) {});
  EXPECT_THROW(t.call({}), ClientError);
  EXPECT_EQ(inner->calls, 3);
}

TEST(Clients, NonRetryableErrorsPassThrough) {
  auto inner = std::make_shared<FlakyTransport>(1, true);
  RetryingTransport t(inner, 5, 1, [](std::chrono::milliseconds) {});
  EXPECT_THROW(t.call({}), ClientError);
  EXPECT_EQ(inner->calls, 1);
}

TEST(Clients, TokenBucketBoundsRate) {
  double now = 0;
  std::vector<long> waits;
  TokenBucket bucket(
      2.0, 2, [&] { return now; },
      [&](std::chrono::milliseconds d) {
        waits.push_back(d.count());
        now += d.count() / 1000.0;
      });
  for (int i = 0; i < 6; ++i) bucket.acquire();
  // Burst of 2 is free; the next 4 each wait half a second.
  EXPECT_EQ(waits.size(), 4u);
  EXPECT_NEAR(now, 2.0, 1e-9);
  EXPECT_THROW(TokenBucket(0, 1), ConfigError);
}

TEST(Clients, MocksAreDeterministicAndReadSidecars) {
  testutil::TempDir d;
  const auto paths = synth_corpus(2, 3, d.path());
  const auto truth = read_sidecar(paths[0]);
  const Image img = read_png(paths[0]);
  const auto a = ModelClients::all_mock(1), b = ModelClients::all_mock(1);
  EXPECT_EQ(a.tag(img, paths[0].string()), truth.labels);
  const auto dets = a.detect(img, paths[0].string(), truth.labels);
  EXPECT_EQ(dets.size(), truth.objects.size());
  EXPECT_EQ(a.embed_text("add a cat"), b.embed_text("add a cat"));
  EXPECT_EQ(a.embed_image(img), b.embed_image(img));
  const auto depth = a.estimate_depth(img, paths[0].string());
  EXPECT_EQ(depth.width, img.width);
  EXPECT_NEAR(depth.at(3, 5), truth.depth.at(3, 5), 1e-12);
  EXPECT_TRUE(a.tag(img, "").empty());
}

TEST(Clients, MockInpainterFillsOnlyTheMask) {
  std::mt19937_64 rng(4);
  const Image img = testutil::random_image(20, 20, rng);
  const Mask m = mask_from_bbox(20, 20, {5, 5, 9, 9});
  const Image out = ModelClients::all_mock().inpaint(img, m);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x)
      if (!m.at(x, y))
        for (int c = 0; c < 3; ++c) ASSERT_EQ(out.at(x, y, c), img.at(x, y, c));
  EXPECT_NE(out, img);
}

TEST(Clients, HeadNounAndLabelPrompt) {
  EXPECT_EQ(head_noun("person in blue shirt"), "person");
  EXPECT_EQ(head_noun("dark brown cow"), "cow");
  EXPECT_EQ(head_noun("a red car with open doors"), "car");
  EXPECT_THROW(head_noun(""), ClientError);
  const std::string p = build_label_prompt("striped cat on a sofa");
  for (const auto& ex : label_prompt_examples()) EXPECT_NE(p.find(ex.caption), std::string::npos);
  EXPECT_EQ(label_prompt_examples().size(), 3u);
  EXPECT_EQ(ModelClients::all_mock().extract_label("person in blue shirt"), "person");
}

TEST(Clients, Base64RoundTrip) {
  std::mt19937_64 rng(5);
  for (int n : {0, 1, 2, 3, 4, 57}) {
    std::vector<std::uint8_t> b(n);
    for (auto& v : b) v = static_cast<std::uint8_t>(rng());
    EXPECT_EQ(base64_decode(base64_encode(b)), b);
  }
  EXPECT_EQ(base64_encode({'M', 'a', 'n'}), "TWFu");
}

TEST(Clients, ConfigValidation) {
  EXPECT_THROW(ClientConfig::from_json({{"endpoint", "ftp://x"}}), ConfigError);
  EXPECT_THROW(ClientConfig::from_json({{"endpoint", "http://x"}, {"retries", 2}}), ConfigError);
  EXPECT_THROW(ModelClients::from_config({{"painter", "mock"}}), ConfigError);
  EXPECT_THROW(ModelClients::from_config({{"tagger", "real"}}), ConfigError);
  EXPECT_NO_THROW(ModelClients::from_config({{"tagger", "mock"}}));
}

TEST(Clients, UnreachableEndpointSurfacesClientError) {
  json cfg = {{"detector", {{"endpoint", "http://127.0.0.1:1/detect"}, {"timeout_ms", 200}, {"max_retries", 1},
                            {"backoff_base_ms", 1}}}};
  const auto c = ModelClients::from_config(cfg, 0, [](std::chrono::milliseconds) {});
  EXPECT_THROW(c.detect(Image(4, 4, 3), "", {"cat"}), ClientError);
}

namespace {

EditSample sample_fixture() {
  EditSample s;
  s.sample_id = "scene_0000-o0-remove";
  s.task = Task::remove;
  s.source_path = "images/scene_0000.png";
  s.target_path = "targets/scene_0000-o0.png";
  s.mask_path = "masks/scene_0000-o0.png";
  s.instructions = {{"remove the cat", "simple"}};
  s.object = {"cat", "small striped cat", {1, 2, 5, 6}, 0.31, 0.12, 0.04};
  s.provenance = {kPipelineVersion, 7};
  return s;
}

}  // namespace

TEST(Records, ManifestLineHasExactlyTheSchemaFields) {
  const auto j = to_json(sample_fixture());
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"sample_id", "task", "source_path", "target_path", "mask_path",
                                            "instructions", "object", "provenance"}));
  std::vector<std::string> okeys;
  for (auto it = j["object"].begin(); it != j["object"].end(); ++it) okeys.push_back(it.key());
  EXPECT_EQ(okeys, (std::vector<std::string>{"label", "caption", "bbox", "clip_pre", "clip_post", "area_fraction"}));
  const auto back = edit_sample_from_json(j);
  EXPECT_EQ(to_json(back).dump(), j.dump());
}

TEST(Records, ValidatorFindsViolations) {
  testutil::TempDir d;
  std::filesystem::create_directories(d / "images");
  std::filesystem::create_directories(d / "targets");
  std::filesystem::create_directories(d / "masks");
  write_png(d / "images/scene_0000.png", Image(8, 8, 3, 10));
  write_png(d / "targets/scene_0000-o0.png", Image(8, 8, 3, 20));
  write_png(d / "masks/scene_0000-o0.png", mask_to_image(mask_from_bbox(8, 8, {1, 2, 5, 6})));
  auto ok = sample_fixture();
  write_manifest(d / "m.jsonl", {ok});
  EXPECT_TRUE(validate_manifest(d / "m.jsonl").empty());

  auto bad = ok;
  bad.instructions.clear();
  bad.object.bbox = {0, 0, 9, 9};
  bad.target_path = "../x.png";
  write_manifest(d / "m.jsonl", {ok, bad});
  const auto v = validate_manifest(d / "m.jsonl");
  auto has = [&](const std::string& frag) {
    return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.find(frag) != std::string::npos; });
  };
  EXPECT_TRUE(has("duplicate"));
  EXPECT_TRUE(has("no instructions"));
  EXPECT_TRUE(has("bbox outside"));
  EXPECT_TRUE(has("not relative"));

  write_file(d / "x.jsonl", "{\"sample_id\": 1}\nnot json\n");
  const auto v2 = validate_manifest(d / "x.jsonl");
  EXPECT_GE(v2.size(), 2u);
}

TEST(Records, ObjectRecordInvariants) {
  Mask m = mask_from_bbox(10, 10, {2, 2, 4, 4});
  auto r = make_object_record("dog", "brown dog", {2, 2, 4, 4}, m);
  EXPECT_DOUBLE_EQ(r.area_fraction, 0.04);
  EXPECT_NO_THROW(r.validate(10, 10));
  EXPECT_THROW(r.validate(3, 3), ShapeError);
  r.label.clear();
  EXPECT_THROW(r.validate(10, 10), ShapeError);
}
