#include <doctest.h>

#include <set>

#include "../support/tempdir.hpp"
#include "moralmatch/annotation.hpp"
#include "moralmatch/common.hpp"
#include "moralmatch/io.hpp"

// after Eigen: resolv.h defines a macro named _res
#include <httplib.h>

using namespace moralmatch;
using namespace moralmatch::annotation;
using json = nlohmann::json;

namespace {

std::vector<AnnotationPair> make_pairs(std::size_t n) {
  std::vector<AnnotationPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = std::to_string(i);
    out.push_back({"pair" + s, {"t" + s, "AITA for t" + s, "treated body " + s}, {"c" + s, "AITA for c" + s, "control body " + s}});
  }
  return out;
}

const std::vector<std::string> kAnnotators{"ann1", "ann2", "ann3", "ann4", "ann5"};

// Rating that depends only on the pair, so agreement is perfect.
int pair_score(const std::string& pair_id, int step) {
  return 1 + static_cast<int>((fnv1a(pair_id) + static_cast<std::uint64_t>(step)) % 5);
}

json post(httplib::Client& cli, const std::string& path, const json& body, int& status) {
  auto res = cli.Post(path, body.dump(), "application/json");
  REQUIRE(res);
  status = res->status;
  return json::parse(res->body);
}

json get(httplib::Client& cli, const std::string& path, int& status) {
  auto res = cli.Get(path);
  REQUIRE(res);
  status = res->status;
  return json::parse(res->body);
}

// Completes every assignment of `annotator` through the service.
void complete(AnnotationService& s, const std::string& annotator, int (*score)(const std::string&, int)) {
  for (;;) {
    const auto r = s.next(annotator);
    REQUIRE(r.status == 200);
    if (r.body["status"] == "done") return;
    const std::string pid = r.body["pair_id"];
    const int step = r.body["step"];
    REQUIRE(s.submit({{"annotator", annotator}, {"pair_id", pid}, {"step", step}, {"score", score(pid, step)}}).status == 200);
  }
}

}  // namespace

TEST_CASE("assignment: balanced loads, distinct raters per pair") {
  AnnotationService s(make_pairs(100), kAnnotators, {}, {3, 1, ""});
  std::size_t lo = 1000, hi = 0, total = 0;
  for (const auto& [name, load] : s.loads()) {
    lo = std::min(lo, load);
    hi = std::max(hi, load);
    total += load;
  }
  CHECK(total == 300);
  CHECK(hi - lo <= 1);
  std::map<std::string, std::set<std::string>> raters;
  for (const auto& a : kAnnotators)
    for (const auto& p : s.assigned(a)) raters[p].insert(a);
  CHECK(raters.size() == 100);
  for (const auto& [p, r] : raters) CHECK(r.size() == 3);

  CHECK_THROWS_AS(AnnotationService(make_pairs(3), {"a", "b"}, {}, {3, 0, ""}), Error);
  CHECK_THROWS_AS(AnnotationService(make_pairs(3), {"a", "a", "b"}, {}, {}), Error);
}

TEST_CASE("blinding: only ids and texts are shown, order is per annotator") {
  AnnotationService s(make_pairs(40), kAnnotators, {}, {3, 2, ""});
  const std::set<std::string> allowed{"status", "annotator", "pair_id", "step", "task", "document", "documents",
                                      "remaining_pairs"};
  std::size_t second_first = 0;
  for (const auto& a : kAnnotators) {
    const auto r = s.next(a);
    for (const auto& [key, _] : r.body.items()) CHECK(allowed.count(key) == 1);
    CHECK(r.body["task"] == "agency");
    for (const auto& [key, _] : r.body["document"].items()) CHECK((key == "id" || key == "title" || key == "body"));
  }
  // which document comes first is drawn per annotator and pair
  for (std::size_t i = 0; i < 40; ++i) {
    AnnotationService one(make_pairs(40), {"x" + std::to_string(i)}, {}, {1, 2, ""});
    const auto r = one.next("x" + std::to_string(i));
    second_first += r.body["document"]["id"].get<std::string>()[0] == 'c';
  }
  CHECK(second_first > 5);
  CHECK(second_first < 35);
  CHECK(s.assigned("ann1") != s.assigned("ann2"));
}

TEST_CASE("protocol errors") {
  AnnotationService s(make_pairs(10), kAnnotators, {}, {3, 3, ""});
  const auto first = s.next("ann1");
  const std::string pid = first.body["pair_id"];
  CHECK(s.next("nobody").status == 403);
  CHECK(s.submit({{"annotator", "ann1"}, {"pair_id", pid}, {"step", 2}, {"score", 3}}).status == 409);
  CHECK(s.submit({{"annotator", "ann1"}, {"pair_id", pid}, {"step", 1}, {"score", 9}}).status == 400);
  CHECK(s.submit({{"annotator", "ann1"}, {"pair_id", pid}, {"step", 1}}).status == 400);
  CHECK(s.submit({{"annotator", "ghost"}, {"pair_id", pid}, {"step", 1}, {"score", 3}}).status == 403);
  std::string foreign;
  for (std::size_t i = 0; i < 10 && foreign.empty(); ++i) {
    const auto& mine = s.assigned("ann1");
    const std::string cand = "pair" + std::to_string(i);
    if (std::find(mine.begin(), mine.end(), cand) == mine.end()) foreign = cand;
  }
  REQUIRE_FALSE(foreign.empty());
  CHECK(s.submit({{"annotator", "ann1"}, {"pair_id", foreign}, {"step", 1}, {"score", 3}}).status == 403);
  for (int step = 1; step <= 3; ++step)
    CHECK(s.submit({{"annotator", "ann1"}, {"pair_id", pid}, {"step", step}, {"score", 3}}).status == 200);
  CHECK(s.submit({{"annotator", "ann1"}, {"pair_id", pid}, {"step", 1}, {"score", 3}}).status == 409);
}

TEST_CASE("practice records are kept out of the data") {
  testing_support::TempDir dir;
  AnnotationService s(make_pairs(5), kAnnotators, dir / "log.jsonl", {3, 4, ""});
  const auto p = s.next("ann2", true);
  CHECK(p.body["practice"] == true);
  CHECK(s.submit({{"annotator", "ann2"}, {"pair_id", p.body["pair_id"]}, {"step", 1}, {"score", 2}, {"practice", true}}).status ==
        200);
  const auto prog = s.progress().body;
  CHECK(prog["practice_records"] == 1);
  CHECK(prog["agency_records"] == 0);
  const auto sum = s.export_to(dir / "export");
  CHECK(sum.agency_records == 0);
  CHECK(sum.similarity_records == 0);
}

TEST_CASE("replay restores state and rerating needs the key") {
  testing_support::TempDir dir;
  const auto log = dir / "log.jsonl";
  {
    AnnotationService s(make_pairs(12), kAnnotators, log, {3, 5, "secret"});
    complete(s, "ann1", pair_score);
    const auto r = s.next("ann2");
    CHECK(s.submit({{"annotator", "ann2"}, {"pair_id", r.body["pair_id"]}, {"step", 1}, {"score", 4}}).status == 200);
    const std::string pid = s.assigned("ann1").front();
    CHECK(s.rerate({{"annotator", "ann1"}, {"pair_id", pid}, {"step", 2}, {"score", 1}}).status == 403);
    CHECK(s.rerate({{"annotator", "ann1"}, {"pair_id", pid}, {"step", 2}, {"score", 1}, {"admin_key", "nope"}}).status == 403);
    CHECK(s.rerate({{"annotator", "ann1"}, {"pair_id", pid}, {"step", 2}, {"score", 1}, {"admin_key", "secret"}, {"reason", "typo"}})
              .status == 200);
  }
  AnnotationService again(make_pairs(12), kAnnotators, log, {3, 5, "secret"});
  CHECK(again.next("ann1").body["status"] == "done");
  const auto r = again.next("ann2");
  CHECK(r.body["step"] == 2);
  const auto m = again.similarity_matrix();
  const std::string pid = again.assigned("ann1").front();
  const auto idx = static_cast<std::size_t>(std::stoi(pid.substr(4)));
  CHECK(m[idx][0] == 1);

  io::write_file_atomic(dir / "bad.jsonl", "{\"annotator\": \"ann1\", \"pair_id\": \"pair0\", \"step\": 3, \"score\": 2}\n");
  CHECK_THROWS_AS(AnnotationService(make_pairs(12), kAnnotators, dir / "bad.jsonl", {3, 5, ""}), Error);
}

TEST_CASE("sample_pairs keeps file order and is deterministic") {
  const auto all = make_pairs(50);
  const auto a = sample_pairs(all, 10, 1);
  CHECK(a.size() == 10);
  for (std::size_t i = 1; i < a.size(); ++i)
    CHECK(std::stoi(a[i - 1].pair_id.substr(4)) < std::stoi(a[i].pair_id.substr(4)));
  const auto b = sample_pairs(all, 10, 1);
  for (std::size_t i = 0; i < 10; ++i) CHECK(a[i].pair_id == b[i].pair_id);
  CHECK(sample_pairs(all, 80, 1).size() == 50);
}

TEST_CASE("http round trip with five annotators") {
  testing_support::TempDir dir;
  AnnotationService service(make_pairs(100), kAnnotators, dir / "log.jsonl", {3, 7, ""});
  AnnotationServer server(service, dir / "export");
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);
  int status = 0;

  get(cli, "/api/next", status);
  CHECK(status == 400);
  get(cli, "/api/next?annotator=stranger", status);
  CHECK(status == 403);
  {
    auto res = cli.Post("/api/annotation", "{not json", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
  }

  const auto first = get(cli, "/api/next?annotator=ann3", status);
  CHECK(status == 200);
  post(cli, "/api/annotation", {{"annotator", "ann3"}, {"pair_id", first["pair_id"]}, {"step", 3}, {"score", 2}}, status);
  CHECK(status == 409);

  for (const auto& a : kAnnotators) {
    for (;;) {
      const auto task = get(cli, "/api/next?annotator=" + a, status);
      REQUIRE(status == 200);
      if (task["status"] == "done") break;
      const std::string pid = task["pair_id"];
      const int step = task["step"];
      if (step == 2) CHECK(task["documents"].size() == 2);
      const auto reply =
          post(cli, "/api/annotation", {{"annotator", a}, {"pair_id", pid}, {"step", step}, {"score", pair_score(pid, step)}}, status);
      REQUIRE(status == 200);
      CHECK(reply["status"] == "ok");
    }
  }
  const auto prog = get(cli, "/api/progress", status);
  CHECK(prog["similarity_records"] == 300);
  CHECK(prog["agency_records"] == 600);
  CHECK(prog["completed_tasks"] == prog["total_tasks"]);

  const auto exported = post(cli, "/api/export", json::object(), status);
  CHECK(status == 200);
  CHECK(exported["similarity_records"] == 300);
  CHECK(exported["agency_records"] == 600);
  server.stop();

  const auto sim = io::read_csv(dir / "export/similarity.csv");
  CHECK(sim.rows.size() == 300);
  CHECK(io::read_csv(dir / "export/agency.csv").rows.size() == 600);

  // agreement from the exported table equals the in-memory one
  const auto ratings = io::read_csv(dir / "export/ratings.csv");
  stats::RatingsMatrix from_file;
  for (const auto& row : ratings.rows) {
    std::vector<std::optional<int>> u;
    for (std::size_t c = 1; c < row.size(); ++c) u.push_back(row[c].empty() ? std::nullopt : std::optional<int>(std::stoi(row[c])));
    from_file.push_back(u);
  }
  const double alpha = stats::krippendorff_alpha_ordinal(service.similarity_matrix());
  CHECK(stats::krippendorff_alpha_ordinal(from_file) == alpha);
  CHECK(alpha == 1.0);

  // the log alone rebuilds the same state
  AnnotationService replay(make_pairs(100), kAnnotators, dir / "log.jsonl", {3, 7, ""});
  CHECK(replay.similarity_matrix() == service.similarity_matrix());
  CHECK(replay.progress().body == service.progress().body);
}
