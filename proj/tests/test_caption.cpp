#include <doctest.h>

#include <thread>

#include "smart/caption.hpp"
#include "smart/dataset.hpp"
#include "smart/errors.hpp"
#include "smart/render.hpp"
#include "support.hpp"

// After the Eigen-based headers: <resolv.h> defines a `_res` macro.
#include <httplib.h>
#include <json.hpp>

using namespace smart;
using testing_support::TempDir;

namespace {

PuzzleInstance disks_puzzle(const std::string& id) {
  PuzzleInstance p;
  p.id = id;
  p.image = Image(32, 32, render::kPaper);
  render::draw_shape(p.image, render::ShapeKind::disk, 2, 2, 7, render::kPalette[0].rgb);
  render::draw_shape(p.image, render::ShapeKind::disk, 12, 12, 5, render::kPalette[2].rgb);
  render::draw_shape(p.image, render::ShapeKind::disk, 22, 22, 5, render::kPalette[2].rgb);
  p.question = "How many shapes are there?";
  p.options = {"1", "2", "3", "4", "5"};
  return p;
}

}  // namespace

TEST_CASE("generate_vqa_pairs") {
  const Image image(8, 8);
  const auto probes = default_probe_questions();
  ScriptedBackend backend({"A", "B", "C"});
  const auto pairs = generate_vqa_pairs(image, backend, 3);
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0] == QaPair{probes[0], "A"});
  CHECK(pairs[1] == QaPair{probes[1], "B"});
  CHECK(pairs[2] == QaPair{probes[2], "C"});

  ScriptedBackend one({"A"});
  const auto single = generate_vqa_pairs(image, one, 1);
  REQUIRE(single.size() == 1);
  CHECK(single[0].first == probes[0]);

  CHECK_THROWS_AS(generate_vqa_pairs(image, one, 0), PreconditionError);
  CHECK_THROWS_AS(generate_vqa_pairs(image, one, 4), ConfigError);

  ScriptedBackend failing({"A"});
  failing.fail_on_call = 1;
  CHECK_THROWS_AS(generate_vqa_pairs(image, failing, 3), BackendError);
}

TEST_CASE("caption prompt assembly") {
  const Image image(8, 8);
  ScriptedBackend echo;
  CHECK(generate_caption(image, {}, echo) == kCaptionInstruction);

  const std::vector<QaPair> history{{"q1", "a1"}, {"q2", "a2"}, {"q3", "a3"}};
  const auto text = generate_caption(image, history, echo);
  const auto p1 = text.find("Q: q1\nA: a1\n");
  const auto p2 = text.find("Q: q2\nA: a2\n");
  const auto p3 = text.find("Q: q3\nA: a3\n");
  const auto pi = text.find(kCaptionInstruction);
  CHECK(p1 < p2);
  CHECK(p2 < p3);
  CHECK(p3 < pi);
  CHECK(pi != std::string::npos);
  CHECK(generate_caption(image, history, echo) == text);
}

TEST_CASE("mock backend describes segmented regions") {
  MockBackend mock;
  const auto p = disks_puzzle("d");
  CHECK(mock.generate_text(p.image, "") == "3 objects red blue blue");
  CHECK(mock.answer_visual_question(p.image, "How many objects are there?") == "3 objects");
  CHECK(mock.answer_visual_question(p.image, "What text is visible?") == "none");
  CHECK(mock.generate_text(p.image, "x") == mock.generate_text(p.image, "x"));
}

TEST_CASE("enhance uses the cache") {
  TempDir dir;
  const auto p = disks_puzzle("p1");
  ScriptedBackend backend({"A", "B", "C"}, std::string("caption"));

  CaptionCache cache(dir / "captions.jsonl");
  const auto cold = enhance(p, backend, cache, 3);
  CHECK(backend.vqa_calls() == 3);
  CHECK(backend.text_calls() == 1);
  CHECK(cold.vqa_pairs.size() == 3);
  CHECK(cold.caption == "caption");

  backend.reset_counts();
  const auto warm = enhance(p, backend, cache, 3);
  CHECK(backend.total_calls() == 0);
  CHECK(warm == cold);

  SUBCASE("persisted and reloaded") {
    CaptionCache reloaded(dir / "captions.jsonl");
    CHECK(reloaded.size() == 1);
    backend.reset_counts();
    CHECK(enhance(p, backend, reloaded, 3) == cold);
    CHECK(backend.total_calls() == 0);
  }
  SUBCASE("changed image bytes regenerate") {
    auto changed = p;
    changed.image.set(0, 0, {0, 0, 0});
    backend.reset_counts();
    const auto regenerated = enhance(changed, backend, cache, 3);
    CHECK(backend.total_calls() == 4);
    CHECK(regenerated.image_digest != cold.image_digest);
  }
  SUBCASE("different k is a different key") {
    backend.reset_counts();
    CHECK(enhance(p, backend, cache, 2).vqa_pairs.size() == 2);
    CHECK(backend.total_calls() == 3);
  }
  SUBCASE("backend failure stores nothing") {
    ScriptedBackend failing({"A"}, std::nullopt, "other");
    failing.fail_on_call = 2;
    CHECK_THROWS_AS(enhance(p, failing, cache, 3), BackendError);
    CHECK(cache.size() == 1);
  }
}

TEST_CASE("cache soundness over a sequence of calls") {
  TempDir dir;
  const auto puzzles = generate_synthetic_puzzles(2, 32, 3);
  MockBackend mock;
  CaptionCache warm_cache(dir / "warm.jsonl");
  for (const auto& p : puzzles) enhance(p, mock, warm_cache, 3);
  for (int round = 0; round < 2; ++round) {
    for (const auto& p : puzzles) {
      TempDir fresh;
      CaptionCache cold_cache(fresh / "c.jsonl");
      const auto cold = enhance(p, mock, cold_cache, 3);
      const auto warm = enhance(p, mock, warm_cache, 3);
      CHECK(caption_record_line(cold) == caption_record_line(warm));
      CHECK(warm.vqa_pairs.size() == 3);
    }
  }
}

TEST_CASE("caption record lines round trip") {
  CaptionRecord r{"id", "abc", {{"q", "a"}, {"q2", "a\"2"}}, "cap\nline", "mock"};
  CHECK(parse_caption_record(caption_record_line(r)) == r);
}

TEST_CASE("http backend talks the JSON protocol") {
  httplib::Server server;
  std::string seen_prompt;
  bool saw_image = false;
  server.Post("/caption", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    seen_prompt = body.at("prompt").get<std::string>();
    saw_image = !body.at("image_base64").get<std::string>().empty();
    res.set_content(nlohmann::json{{"text", "reply:" + seen_prompt}}.dump(), "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  HttpBackend backend(base + "/caption", 5);
  CHECK(backend.id() == "http:" + base + "/caption");
  CHECK(backend.answer_visual_question(Image(8, 8), "how many?") == "reply:how many?");
  CHECK(seen_prompt == "how many?");
  CHECK(saw_image);

  HttpBackend broken(base + "/broken", 5);
  CHECK_THROWS_AS(broken.generate_text(Image(8, 8), "x"), BackendError);

  server.stop();
  thread.join();
  CHECK_THROWS_AS(HttpBackend("ftp://host/x"), ConfigError);
}
