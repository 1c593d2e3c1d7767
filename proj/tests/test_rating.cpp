#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "criteria.hpp"
#include "galaxyedit/image.hpp"
#include "test_util.hpp"

// After Eigen: <resolv.h> defines _res, which Eigen uses as a parameter name.
#include <httplib.h>

using namespace galaxyedit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::map<std::pair<std::string, std::string>, int>& expected_tenths() {
  static const std::map<std::pair<std::string, std::string>, int> m = {
      {{"IP2P", "remove"}, 16}, {{"IP2P", "add"}, 19},          {{"Inst-Inpaint", "remove"}, 29},
      {{"PIPE", "add"}, 38},    {{"GalaxyEdit", "remove"}, 40}, {{"GalaxyEdit", "add"}, 41}};
  return m;
}

struct Server {
  RatingService svc;
  RatingHttpServer http;
  int port = 0;
  std::thread th;

  Server(SampleSet s, const fs::path& data, std::string token) : svc(std::move(s), data), http(svc, std::move(token)) {
    port = http.bind("127.0.0.1", 0);
    th = std::thread([this] { http.run(); });
  }
  ~Server() {
    http.stop();
    th.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_connection_timeout(5);
    c.set_read_timeout(10);
    return c;
  }
};

}  // namespace

TEST(Rounding, HalfUpTenths) {
  EXPECT_EQ(round_half_up_tenths(31, 20), 16);
  EXPECT_EQ(round_half_up_tenths(145, 100), 15);
  EXPECT_EQ(round_half_up_tenths(144, 100), 14);
  EXPECT_EQ(round_half_up_tenths(1, 20), 1);
  EXPECT_EQ(round_half_up_tenths(5, 1), 50);
  EXPECT_EQ(round_half_up_tenths(190, 40), 48);
  EXPECT_THROW(round_half_up_tenths(1, 0), std::invalid_argument);
  EXPECT_EQ(format_tenths(48), "4.8");
  EXPECT_EQ(format_tenths(40), "4.0");
  EXPECT_EQ(format_tenths(7), "0.7");
}

TEST(Rounding, AgreesWithLongDivisionOracle) {
  for (long long count = 1; count <= 60; ++count)
    for (long long sum = count; sum <= 5 * count; ++sum) {
      long long tenths = 10 * sum / count;
      if (2 * (10 * sum % count) >= count) ++tenths;
      ASSERT_EQ(round_half_up_tenths(sum, count), tenths) << sum << "/" << count;
    }
}

TEST(Aggregation, PlantedFixtureReproducesTheTable) {
  testutil::TempDir d;
  const auto& plant = criteria::paper_rating_plant();
  RatingService svc(criteria::write_fixture_samples(d.path(), plant), d / "data");
  const auto rep = criteria::submit_plant(svc, plant);
  EXPECT_EQ(rep.unmapped, 0);
  ASSERT_EQ(rep.rows.size(), expected_tenths().size());
  for (const auto& row : rep.rows) {
    const auto it = expected_tenths().find({row.model, row.task});
    ASSERT_NE(it, expected_tenths().end()) << row.model << "/" << row.task;
    EXPECT_EQ(row.tenths, it->second) << row.model << "/" << row.task;
  }
  ASSERT_TRUE(rep.ground_truth);
  EXPECT_EQ(rep.ground_truth->tenths, 48);
  EXPECT_EQ(rep.ground_truth->task, "all");
  EXPECT_NE(rep.to_text().find("4.8"), std::string::npos);
}

TEST(Aggregation, ReportMatchesBruteForceOverTheRawLog) {
  testutil::TempDir d;
  const auto& plant = criteria::paper_rating_plant();
  const auto samples = criteria::write_fixture_samples(d.path(), plant);
  RatingService svc(samples, d / "data");
  const auto rep = criteria::submit_plant(svc, plant);

  std::string secret = testutil::slurp(d / "data/secret");
  secret.erase(secret.find_last_not_of("\r\n") + 1);
  std::map<std::pair<std::string, std::string>, std::pair<long long, long long>> acc;
  std::ifstream in(d / "data/ratings.log");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = decode_log_line(line);
    ASSERT_TRUE(j) << line;
    const auto r = RatingRecord::from_json(*j);
    const auto* item = samples.find(r.item_id);
    ASSERT_NE(item, nullptr);
    std::string model;
    for (const auto& c : item->candidates)
      if (blind_token(secret, r.session_id, r.item_id, c.model) == r.blind_id) model = c.model;
    ASSERT_FALSE(model.empty());
    auto& a = acc[{model, model == kGroundTruthTag ? "all" : item->task}];
    a.first += r.rating;
    a.second += 1;
    ++n;
  }
  EXPECT_EQ(n, rep.n_ratings);
  for (const auto& row : rep.rows) {
    const auto [sum, count] = acc.at({row.model, row.task});
    EXPECT_EQ(row.sum, sum);
    EXPECT_EQ(row.count, count);
    EXPECT_EQ(row.tenths, static_cast<int>(std::floor(10.0 * sum / count + 0.5 + 1e-12)));
  }
  EXPECT_EQ(rep.ground_truth->sum, acc.at({kGroundTruthTag, "all"}).first);
}

TEST(Store, IdempotentResubmitAndConflict) {
  testutil::TempDir d;
  const auto& plant = criteria::paper_rating_plant();
  RatingService svc(criteria::write_fixture_samples(d.path(), plant), d / "data");
  const auto s = svc.create_session("ev", 5);
  const std::string sid = s.at("session_id");
  const auto next = svc.next_item(sid);
  const auto& item = next.at("item");
  const json body = {{"session_id", sid}, {"item_id", item.at("item_id")}, {"blind_id", item.at("candidates")[0].at("blind_id")},
                     {"rating", 4}};
  EXPECT_EQ(svc.submit_rating(body).at("status"), "stored");
  EXPECT_EQ(svc.submit_rating(body).at("status"), "duplicate");
  json other = body;
  other["rating"] = 2;
  try {
    svc.submit_rating(other);
    FAIL() << "conflicting rating accepted";
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.status(), 409);
  }
  auto status_of = [&](json b) {
    try {
      svc.submit_rating(b);
      return 200;
    } catch (const ServiceError& e) {
      return e.status();
    }
  };
  json bad = body;
  bad["rating"] = 0;
  EXPECT_EQ(status_of(bad), 400);
  bad["rating"] = 6;
  EXPECT_EQ(status_of(bad), 400);
  bad["rating"] = 3.5;
  EXPECT_EQ(status_of(bad), 400);
  bad = body;
  bad["session_id"] = "nope";
  EXPECT_EQ(status_of(bad), 404);
  bad = body;
  bad["blind_id"] = "0000";
  EXPECT_EQ(status_of(bad), 404);
  bad = body;
  bad["model"] = "IP2P";
  EXPECT_EQ(status_of(bad), 400);
  EXPECT_EQ(svc.store().ratings().size(), 1u);
}

TEST(Store, ReopenKeepsEverythingAndDropsATornTail) {
  testutil::TempDir d;
  const auto& plant = criteria::paper_rating_plant();
  const auto samples = criteria::write_fixture_samples(d.path(), plant);
  std::size_t before = 0;
  {
    RatingService svc(samples, d / "data");
    criteria::submit_plant(svc, plant);
    before = svc.store().ratings().size();
  }
  {
    std::ofstream out(d / "data/ratings.log", std::ios::app | std::ios::binary);
    out << "deadbeef\t{\"session_id\":\"s1\",\"ite";
  }
  RatingService again(samples, d / "data");
  EXPECT_EQ(again.store().ratings().size(), before);
  const auto rep = again.report();
  EXPECT_EQ(rep.ground_truth->tenths, 48);
  // The torn tail is gone after the next append.
  const auto s = again.create_session("late", 3);
  const auto next = again.next_item(s.at("session_id"));
  again.submit_rating({{"session_id", s.at("session_id")},
                       {"item_id", next.at("item").at("item_id")},
                       {"blind_id", next.at("item").at("candidates")[0].at("blind_id")},
                       {"rating", 5}});
  RatingService third(samples, d / "data");
  EXPECT_EQ(third.store().ratings().size(), before + 1);
}

TEST(Store, CorruptMiddleLineIsAnError) {
  testutil::TempDir d;
  const auto& plant = criteria::paper_rating_plant();
  const auto samples = criteria::write_fixture_samples(d.path(), plant);
  {
    RatingService svc(samples, d / "data");
    criteria::submit_plant(svc, plant);
  }
  std::string log = testutil::slurp(d / "data/ratings.log");
  const auto mid = log.find("\"rating\":", log.size() / 2);
  ASSERT_NE(mid, std::string::npos);
  log[mid + 9] = log[mid + 9] == '1' ? '2' : '1';
  write_file(d / "data/ratings.log", log);
  EXPECT_THROW(RatingService(samples, d / "data"), ConfigError);
}

TEST(Store, CompactPreservesRatings) {
  testutil::TempDir d;
  const auto& plant = criteria::paper_rating_plant();
  const auto samples = criteria::write_fixture_samples(d.path(), plant);
  RatingService svc(samples, d / "data");
  criteria::submit_plant(svc, plant);
  const auto before = svc.report().to_json();
  svc.store().compact();
  EXPECT_EQ(RatingService(samples, d / "data").report().to_json(), before);
}

TEST(CrashRecovery, KilledWriterLosesNoAckedRating) {
  testutil::TempDir d;
  const auto r = criteria::crash_recovery(d.path(), 25);
  EXPECT_TRUE(r.killed);
  EXPECT_GE(r.acked, 25);
  EXPECT_EQ(r.lost, 0);
}

TEST(Http, FullSessionFlowAndReportAuth) {
  testutil::TempDir d;
  const auto& plant = criteria::paper_rating_plant();
  Server srv(criteria::write_fixture_samples(d.path(), plant), d / "data", "tok3n");
  auto cli = srv.client();

  auto created = cli.Post("/sessions", json{{"evaluator_id", "alice"}, {"max_items", 3}}.dump(), "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 201);
  const std::string sid = json::parse(created->body).at("session_id");

  int submitted = 0;
  for (;;) {
    auto next = cli.Get("/sessions/" + sid + "/next");
    ASSERT_TRUE(next);
    ASSERT_EQ(next->status, 200);
    const auto j = json::parse(next->body);
    if (j.at("done").get<bool>()) break;
    const auto& item = j.at("item");
    auto media = cli.Get(item.at("source").get<std::string>());
    ASSERT_TRUE(media);
    EXPECT_EQ(media->status, 200);
    EXPECT_EQ(media->get_header_value("Content-Type"), "image/png");
    EXPECT_NO_THROW(decode_png({media->body.begin(), media->body.end()}));
    for (const auto& c : item.at("candidates")) {
      const json body = {{"session_id", sid}, {"item_id", item.at("item_id")}, {"blind_id", c.at("blind_id")}, {"rating", 4}};
      auto r = cli.Post("/ratings", body.dump(), "application/json");
      ASSERT_TRUE(r);
      EXPECT_EQ(r->status, 201) << r->body;
      auto again = cli.Post("/ratings", body.dump(), "application/json");
      EXPECT_EQ(again->status, 200);
      ++submitted;
    }
  }
  EXPECT_GT(submitted, 3);

  auto bad = cli.Post("/ratings", json{{"session_id", sid}, {"item_id", "r0"}, {"blind_id", "x"}, {"rating", 0}}.dump(),
                      "application/json");
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(cli.Post("/ratings", "not json", "application/json")->status, 400);
  EXPECT_EQ(cli.Get("/sessions/nope/next")->status, 404);
  EXPECT_EQ(cli.Get("/media/mdeadbeef")->status, 404);
  EXPECT_EQ(cli.Get("/no/such/route")->status, 404);

  EXPECT_EQ(cli.Get("/report")->status, 401);
  EXPECT_EQ(cli.Get("/report", {{"Authorization", "Bearer wrong"}})->status, 401);
  auto rep = cli.Get("/report", {{"Authorization", "Bearer tok3n"}});
  ASSERT_EQ(rep->status, 200);
  EXPECT_EQ(json::parse(rep->body).at("n_ratings"), submitted);
}

TEST(Http, ReportDisabledWithoutToken) {
  testutil::TempDir d;
  Server srv(criteria::write_fixture_samples(d.path(), criteria::paper_rating_plant()), d / "data", "");
  auto cli = srv.client();
  EXPECT_EQ(cli.Get("/report", {{"Authorization", "Bearer "}})->status, 403);
}

TEST(Http, SerializationAuditFindsNoModelNames) {
  testutil::TempDir d;
  const auto r = criteria::serialization_audit(d.path());
  EXPECT_GT(r.responses, 50);
  for (const auto& l : r.leaks) ADD_FAILURE() << l;
  // The admin report is the one place names are allowed.
  EXPECT_TRUE(r.report_has_names);
}

TEST(Http, ConcurrentSessionsAllLand) {
  testutil::TempDir d;
  const auto& plant = criteria::paper_rating_plant();
  Server srv(criteria::write_fixture_samples(d.path(), plant), d / "data", "tok");
  constexpr int kSessions = 25, kItems = 3;
  std::atomic<int> stored{0}, errors{0};
  std::vector<std::thread> workers;
  for (int w = 0; w < kSessions; ++w)
    workers.emplace_back([&, w] {
      auto cli = srv.client();
      auto created = cli.Post("/sessions", json{{"evaluator_id", "ev" + std::to_string(w)}, {"max_items", kItems}}.dump(),
                              "application/json");
      if (!created || created->status != 201) {
        ADD_FAILURE() << "create failed: " << (created ? std::to_string(created->status) : httplib::to_string(created.error()));
        ++errors;
        return;
      }
      const std::string sid = json::parse(created->body).at("session_id");
      for (int guard = 0; guard < 50; ++guard) {
        auto next = cli.Get("/sessions/" + sid + "/next");
        if (!next || next->status != 200) {
          ++errors;
          return;
        }
        const auto j = json::parse(next->body);
        if (j.at("done").get<bool>()) return;
        for (const auto& c : j.at("item").at("candidates")) {
          const json body = {{"session_id", sid}, {"item_id", j.at("item").at("item_id")}, {"blind_id", c.at("blind_id")},
                             {"rating", 1 + (w % 5)}};
          auto r = cli.Post("/ratings", body.dump(), "application/json");
          if (r && r->status == 201) ++stored;
          else ++errors;
        }
      }
    });
  for (auto& t : workers) t.join();
  EXPECT_EQ(errors.load(), 0);
  const auto rep = srv.svc.report();
  EXPECT_EQ(rep.n_ratings, stored.load());
  EXPECT_EQ(srv.svc.store().sessions().size(), static_cast<std::size_t>(kSessions));
  EXPECT_EQ(RatingStore(d / "data").ratings().size(), static_cast<std::size_t>(stored.load()));
}
