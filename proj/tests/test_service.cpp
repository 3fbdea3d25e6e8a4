#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <thread>

#include "icmf/image.hpp"
#include "icmf/model.hpp"
#include "icmf/rng.hpp"
#include "icmf/service.hpp"

using namespace icmf;
using json = nlohmann::json;

namespace {

std::string rgb_png(std::size_t w, std::size_t h, std::uint8_t v = 90) {
  return encode_png(Image8{w, h, 3, std::vector<std::uint8_t>(w * h * 3, v)});
}

BitMask random_mask(std::size_t h, std::size_t w, Rng& rng, double p = 0.4) {
  BitMask m(h, w);
  for (auto& b : m.bits) b = rng.uniform() < p;
  return m;
}

/// Ellipse in the left part of an h x w image.
BitMask blob(std::size_t h, std::size_t w) {
  BitMask m(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double y = (r + 0.5 - h * 0.5) / (h * 0.35), x = (c + 0.5 - w * 0.35) / (w * 0.25);
      m.set(r, c, x * x + y * y <= 1.0);
    }
  return m;
}

/// Foreground = disks of radius 6 around positive clicks minus negative ones,
/// so every click visibly changes the mask.
class DiskSegmenter : public Segmenter {
 public:
  Tensor predict(const Tensor& image, const InteractionState& state, const BitMask*) const override {
    const std::size_t h = image.dim(1), w = image.dim(2);
    std::vector<double> p(h * w, 0.0);
    for (const auto& c : state.clicks)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t q = 0; q < w; ++q) {
          const int dr = static_cast<int>(r) - c.row, dc = static_cast<int>(q) - c.col;
          if (dr * dr + dc * dc <= 36) p[r * w + q] = c.positive ? 1.0 : 0.0;
        }
    return Tensor({1, h, w}, std::move(p));
  }
};

/// Records the most calls ever in flight at once.
class SlowSegmenter : public DiskSegmenter {
 public:
  Tensor predict(const Tensor& image, const InteractionState& state, const BitMask* ref) const override {
    const int now = ++inflight;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(3));
    Tensor out = DiskSegmenter::predict(image, state, ref);
    --inflight;
    return out;
  }
  mutable std::atomic<int> inflight{0}, peak{0};
};

ServiceOptions side(std::size_t s) {
  ServiceOptions o;
  o.model_side = s;
  return o;
}

}  // namespace

TEST(Geometry, RoundTripThroughTheFinerGrid) {
  for (std::size_t h : {1, 7, 50, 64, 100, 300})
    for (std::size_t w : {1, 13, 64, 100})
      for (std::size_t s : {16, 64, 128, 256}) {
        Geometry g{h, w, s};
        const std::size_t s0 = g.padded_side();
        if (s >= s0) {
          for (std::size_t o = 0; o < std::max(h, w); ++o)
            ASSERT_EQ(g.to_orig(g.to_model(static_cast<int>(o))), static_cast<int>(o)) << h << " " << w << " " << s;
        } else {
          for (int m = 0; m < static_cast<int>(s); ++m) {
            if (static_cast<std::size_t>(g.to_orig(m)) >= std::max(h, w)) continue;
            ASSERT_EQ(g.to_model(g.to_orig(m)), m) << h << " " << w << " " << s;
          }
        }
      }
}

TEST(Geometry, MapsStayInRange) {
  Geometry g{100, 50, 64};
  for (int o = 0; o < 100; ++o) {
    EXPECT_GE(g.to_model(o), 0);
    EXPECT_LT(g.to_model(o), 64);
  }
  for (int m = 0; m < 64; ++m) EXPECT_LT(g.to_orig(m), 100);
  EXPECT_EQ(g.mask_to_orig(BitMask(64, 64, 1)), BitMask(100, 50, 1));
}

TEST(Rle, EmptyAndFull) {
  EXPECT_EQ(encode_rle(BitMask(3, 4))["runs"], json::array());
  EXPECT_EQ(encode_rle(BitMask(3, 4, 1))["runs"], (json{0, 12}));
  BitMask m(2, 3);
  m.set(0, 2);
  m.set(1, 0);
  m.set(1, 2);
  EXPECT_EQ(encode_rle(m), (json{{"h", 2}, {"w", 3}, {"runs", {2, 2, 5, 1}}}));
}

TEST(Rle, RandomRoundTrip) {
  Rng rng(31);
  for (int t = 0; t < 200; ++t) {
    const auto h = 1 + rng.below(20), w = 1 + rng.below(20);
    const BitMask m = random_mask(h, w, rng, rng.uniform());
    const json j = encode_rle(m);
    EXPECT_EQ(decode_rle(json::parse(j.dump())), m);
    std::size_t area = 0;
    for (std::size_t k = 1; k < j["runs"].size(); k += 2) area += j["runs"][k].get<std::size_t>();
    EXPECT_EQ(area, m.area());
  }
  EXPECT_THROW(decode_rle(json{{"h", 2}, {"w", 2}, {"runs", {3, 2}}}), DataError);
  EXPECT_THROW(decode_rle(json{{"h", 2}}), DataError);
}

TEST(Store, CreateEchoesDimensionsAndRejectsBadInput) {
  EmptySegmenter seg;
  SessionStore store(seg, side(32));
  auto c = store.create(rgb_png(40, 24));
  EXPECT_EQ(c.width, 40u);
  EXPECT_EQ(c.height, 24u);
  EXPECT_EQ(store.size(), 1u);

  std::string png = rgb_png(8, 8);
  try {
    store.create(png.substr(0, png.size() / 2));
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status, 400);
  }
  try {
    store.create(rgb_png(2049, 4));
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status, 413);
  }
  const std::string gt = encode_png(mask_to_gray(BitMask(7, 8)));
  try {
    store.create(png, &gt);
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status, 400);
  }
  EXPECT_EQ(store.size(), 1u);
}

TEST(Store, OracleClickReproducesGroundTruthAtOriginalSize) {
  OracleSegmenter seg;
  SessionStore store(seg, side(128));
  const BitMask gt = blob(100, 50);
  const std::string gt_png = encode_png(mask_to_gray(gt));
  auto c = store.create(rgb_png(50, 100), &gt_png);
  const json r = store.add_click(c.id, {50, 17, true, 0});
  EXPECT_EQ(r["iou"], 1.0);
  EXPECT_EQ(r["mask_summary"]["area"], gt.area());
  EXPECT_EQ(store.mask(c.id), gt);
  const Image8 back = decode_png(store.mask_png(c.id), 1);
  EXPECT_EQ(back.width, 50u);
  EXPECT_EQ(back.height, 100u);
  EXPECT_EQ(gray_to_mask(back), gt);
  EXPECT_EQ(decode_rle(store.mask_rle(c.id)), gt);
}

TEST(Store, DownscaledMaskKeepsOriginalShape) {
  OracleSegmenter seg;
  SessionStore store(seg, side(32));
  const BitMask gt = blob(100, 50);
  const std::string gt_png = encode_png(mask_to_gray(gt));
  auto c = store.create(rgb_png(50, 100), &gt_png);
  const json r = store.add_click(c.id, {50, 17, true, 0});
  const BitMask m = store.mask(c.id);
  EXPECT_EQ(m.height, 100u);
  EXPECT_EQ(m.width, 50u);
  EXPECT_GT(r["iou"].get<double>(), 0.9);
}

TEST(Store, ClickContracts) {
  DiskSegmenter seg;
  SessionStore store(seg, side(32));
  auto c = store.create(rgb_png(20, 10));
  try {
    store.add_click(c.id, {3, 3, false, 0});
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status, 422);
    EXPECT_STREQ(e.what(), "first click must be positive");
  }
  try {
    store.add_click(c.id, {10, 3, true, 0});
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status, 422);
    EXPECT_NE(std::string(e.what()).find("(10, 3)"), std::string::npos);
  }
  EXPECT_EQ(store.summary(c.id)["clicks"], 0);
  try {
    store.mask(c.id);
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status, 409);
  }
  try {
    store.undo(c.id);
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status, 409);
  }
  try {
    store.add_click("feed", {0, 0, true, 0});
    FAIL();
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status, 404);
  }
  EXPECT_FALSE(store.add_click(c.id, {3, 3, true, 0}).contains("iou"));
}

TEST(Store, FailedInferenceLeavesSessionUnchanged) {
  OracleSegmenter seg;  // no ground truth attached, so predict throws
  SessionStore store(seg, side(16));
  auto c = store.create(rgb_png(16, 16));
  EXPECT_THROW(store.add_click(c.id, {1, 1, true, 0}), ServiceError);
  EXPECT_EQ(store.summary(c.id), (json{{"clicks", 0}, {"has_mask", false}}));
}

TEST(Store, UndoRestoresTheEarlierStateExactly) {
  DiskSegmenter seg;
  SessionStore store(seg, side(32));
  auto c = store.create(rgb_png(32, 32));
  const json after1 = store.add_click(c.id, {8, 8, true, 0});
  const std::string png1 = store.mask_png(c.id);
  store.add_click(c.id, {24, 24, true, 0});
  EXPECT_NE(store.mask_png(c.id), png1);
  EXPECT_EQ(store.undo(c.id), after1);
  EXPECT_EQ(store.mask_png(c.id), png1);

  // add / undo / add the same click replays bytewise
  store.add_click(c.id, {20, 10, false, 0});
  const std::string again = store.mask_png(c.id);
  store.undo(c.id);
  store.add_click(c.id, {20, 10, false, 0});
  EXPECT_EQ(store.mask_png(c.id), again);

  store.undo(c.id);
  store.undo(c.id);
  EXPECT_EQ(store.summary(c.id), (json{{"clicks", 0}, {"has_mask", false}}));
  EXPECT_THROW(store.mask(c.id), ServiceError);
}

TEST(Store, ResetMatchesFreshSession) {
  DiskSegmenter seg;
  SessionStore store(seg, side(32));
  auto a = store.create(rgb_png(30, 20));
  auto b = store.create(rgb_png(30, 20));
  store.add_click(a.id, {5, 5, true, 0});
  store.add_click(a.id, {6, 9, false, 0});
  EXPECT_EQ(store.reset(a.id), store.summary(b.id));
  EXPECT_THROW(store.undo(a.id), ServiceError);
  EXPECT_EQ(store.add_click(a.id, {10, 10, true, 0}), store.add_click(b.id, {10, 10, true, 0}));
  EXPECT_EQ(store.mask_png(a.id), store.mask_png(b.id));
}

TEST(Store, SessionsAreIsolated) {
  DiskSegmenter seg;
  SessionStore store(seg, side(32));
  auto a = store.create(rgb_png(32, 32));
  auto b = store.create(rgb_png(32, 32));
  store.add_click(b.id, {16, 16, true, 0});
  const std::string b_mask = store.mask_png(b.id);
  const json b_sum = store.summary(b.id);
  store.add_click(a.id, {4, 4, true, 0});
  store.add_click(a.id, {5, 5, false, 0});
  store.undo(a.id);
  store.reset(a.id);
  store.remove(a.id);
  EXPECT_EQ(store.mask_png(b.id), b_mask);
  EXPECT_EQ(store.summary(b.id), b_sum);
  EXPECT_THROW(store.remove(a.id), ServiceError);
}

TEST(Store, ConcurrentClicksOnOneSessionAreSerialized) {
  SlowSegmenter seg;
  SessionStore store(seg, side(32));
  auto c = store.create(rgb_png(32, 32));
  std::vector<std::thread> pool;
  for (int t = 0; t < 6; ++t)
    pool.emplace_back([&, t] {
      for (int k = 0; k < 4; ++k) store.add_click(c.id, {t * 5, k * 7, true, 0});
    });
  for (auto& t : pool) t.join();
  EXPECT_EQ(seg.peak.load(), 1);
  EXPECT_EQ(store.summary(c.id)["clicks"], 24);
  for (int k = 0; k < 24; ++k) store.undo(c.id);
  EXPECT_THROW(store.undo(c.id), ServiceError);
}

TEST(Store, SharedModelGivesSameMasksInParallel) {
  Rng rng(5);
  ModelConfig cfg = ModelConfig::tiny();
  cfg.image_side = 32;
  ICMFormer model(cfg, rng);
  ModelSegmenter seg(model);
  SessionStore store(seg, side(32));
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i) ids.push_back(store.create(rgb_png(32, 32, static_cast<std::uint8_t>(40 * i))).id);
  auto clicks = [&](const std::string& id) {
    store.add_click(id, {10, 10, true, 0});
    store.add_click(id, {20, 5, false, 0});
  };
  clicks(ids[0]);
  std::thread t1(clicks, ids[1]), t2(clicks, ids[2]);
  t1.join();
  t2.join();
  SessionStore serial(seg, side(32));
  for (int i = 1; i < 3; ++i) {
    auto id = serial.create(rgb_png(32, 32, static_cast<std::uint8_t>(40 * i))).id;
    serial.add_click(id, {10, 10, true, 0});
    serial.add_click(id, {20, 5, false, 0});
    EXPECT_EQ(serial.mask_png(id), store.mask_png(ids[i]));
  }
}

TEST(Store, IdleSessionsExpireAndCapacityEvictsLeastRecentlyUsed) {
  EmptySegmenter seg;
  auto t = std::chrono::steady_clock::time_point{};
  ServiceOptions o = side(8);
  o.max_sessions = 3;
  SessionStore store(seg, o, [&t] { return t; });
  auto a = store.create(rgb_png(8, 8));
  t += std::chrono::minutes(1);
  auto b = store.create(rgb_png(8, 8));
  t += std::chrono::minutes(1);
  auto c = store.create(rgb_png(8, 8));
  t += std::chrono::minutes(1);
  store.summary(a.id);  // a is now the most recently used
  auto d = store.create(rgb_png(8, 8));
  EXPECT_EQ(store.size(), 3u);
  EXPECT_THROW(store.summary(b.id), ServiceError);
  EXPECT_NO_THROW(store.summary(a.id));

  t += std::chrono::minutes(30);
  EXPECT_NO_THROW(store.summary(d.id));  // exactly at the TTL: still alive
  t += std::chrono::seconds(1);
  EXPECT_EQ(store.purge_expired(), 2u);  // a and c idle too long
  EXPECT_THROW(store.summary(c.id), ServiceError);
  t += std::chrono::minutes(31);
  EXPECT_THROW(store.summary(d.id), ServiceError);
  EXPECT_EQ(store.size(), 0u);
}

// HTTP ----------------------------------------------------------------------

class Http : public ::testing::Test {
 protected:
  void SetUp() override {
    install_routes(server_, store_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() { return httplib::Client("127.0.0.1", port_); }

  OracleSegmenter seg_;
  SessionStore store_{seg_, side(128)};
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST_F(Http, FullSessionLifecycle) {
  auto cli = client();
  auto health = cli.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["status"], "ok");

  const BitMask gt = blob(100, 50);
  httplib::MultipartFormDataItems form{{"image", rgb_png(50, 100), "img.png", "image/png"},
                                       {"gt", encode_png(mask_to_gray(gt)), "gt.png", "image/png"}};
  auto created = cli.Post("/sessions", form);
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 201) << created->body;
  const json cj = json::parse(created->body);
  EXPECT_EQ(cj["width"], 50);
  EXPECT_EQ(cj["height"], 100);
  const std::string base = "/sessions/" + cj["session_id"].get<std::string>();

  auto early = cli.Get(base + "/mask");
  EXPECT_EQ(early->status, 409);
  EXPECT_EQ(json::parse(early->body)["code"], "no_mask");

  auto neg = cli.Post(base + "/clicks", R"({"row": 50, "col": 17, "positive": false})", "application/json");
  EXPECT_EQ(neg->status, 422);
  EXPECT_EQ(json::parse(neg->body)["message"], "first click must be positive");

  auto click = cli.Post(base + "/clicks", R"({"row": 50, "col": 17, "positive": true})", "application/json");
  ASSERT_EQ(click->status, 200) << click->body;
  EXPECT_EQ(json::parse(click->body)["iou"], 1.0);

  auto png = cli.Get(base + "/mask?format=png");
  ASSERT_EQ(png->status, 200);
  EXPECT_EQ(png->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(gray_to_mask(decode_png(png->body, 1)), gt);
  auto rle = cli.Get(base + "/mask?format=rle");
  EXPECT_EQ(decode_rle(json::parse(rle->body)), gt);
  EXPECT_EQ(cli.Get(base + "/mask?format=bmp")->status, 400);

  EXPECT_EQ(json::parse(cli.Post(base + "/undo")->body)["clicks"], 0);
  EXPECT_EQ(cli.Post(base + "/undo")->status, 409);
  EXPECT_EQ(cli.Post(base + "/reset")->status, 200);
  EXPECT_EQ(cli.Delete(base)->status, 204);
  auto gone = cli.Post(base + "/clicks", R"({"row": 1, "col": 1})", "application/json");
  EXPECT_EQ(gone->status, 404);
  EXPECT_EQ(json::parse(gone->body)["code"], "not_found");
}

TEST_F(Http, RawUploadAndErrorBodies) {
  auto cli = client();
  auto created = cli.Post("/sessions", rgb_png(20, 30), "image/png");
  ASSERT_EQ(created->status, 201);
  const std::string base = "/sessions/" + json::parse(created->body)["session_id"].get<std::string>();

  auto bad = cli.Post("/sessions", "definitely not a png", "image/png");
  EXPECT_EQ(bad->status, 400);
  const json e = json::parse(bad->body);
  EXPECT_TRUE(e.contains("code") && e.contains("message"));

  EXPECT_EQ(cli.Post("/sessions", rgb_png(3000, 2), "image/png")->status, 413);
  EXPECT_EQ(cli.Post(base + "/clicks", "{not json", "application/json")->status, 400);
  EXPECT_EQ(cli.Post(base + "/clicks", R"({"row": 1})", "application/json")->status, 400);
  auto oob = cli.Post(base + "/clicks", R"({"row": 30, "col": 0})", "application/json");
  EXPECT_EQ(oob->status, 422);
  EXPECT_NE(json::parse(oob->body)["message"].get<std::string>().find("(30, 0)"), std::string::npos);
  auto nowhere = cli.Get("/nowhere");
  EXPECT_EQ(nowhere->status, 404);
  EXPECT_EQ(json::parse(nowhere->body)["code"], "not_found");
  EXPECT_EQ(store_.size(), 1u);
}
