#include "smart/caption.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "smart/errors.hpp"
#include "smart/render.hpp"
#include "smart/vision.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro that
// collides with Eigen parameter names.
#include <httplib.h>

namespace smart {

using nlohmann::json;

// ---- mock backend ----------------------------------------------------------

namespace {

std::string nearest_color_name(const std::array<double, 3>& rgb) {
  std::string best = "gray";
  double best_d = 1e18;
  auto consider = [&](std::string_view name, Rgb c) {
    double d = 0;
    for (int i = 0; i < 3; ++i) {
      const double diff = 255.0 * rgb[i] - c[i];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = std::string(name);
    }
  };
  for (const auto& named : render::kPalette) consider(named.name, named.rgb);
  consider("black", render::kInk);
  consider("white", render::kPaper);
  return best;
}

struct Summary {
  std::size_t count = 0;
  std::vector<std::string> colors;
  bool ink = false;
};

Summary summarize(const Image& image) {
  const auto regions = extract_regions(image, 48, 4);
  Summary s;
  s.count = regions.size();
  for (const auto& r : regions) {
    auto name = nearest_color_name(r.mean_color);
    if (name == "black") s.ink = true;
    if (s.colors.size() < 6) s.colors.push_back(std::move(name));
  }
  return s;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

bool contains_any(const std::string& text, std::initializer_list<std::string_view> needles) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  return std::any_of(needles.begin(), needles.end(), [&](std::string_view n) { return lower.find(n) != std::string::npos; });
}

}  // namespace

std::string MockBackend::answer_visual_question(const Image& image, const std::string& question) {
  const Summary s = summarize(image);
  if (contains_any(question, {"text", "number", "digit"})) return s.ink ? "black text" : "none";
  if (contains_any(question, {"how many", "count"})) return std::to_string(s.count) + " objects";
  return s.colors.empty() ? "none" : join(s.colors);
}

std::string MockBackend::generate_text(const Image& image, const std::string&) {
  const Summary s = summarize(image);
  std::string out = std::to_string(s.count) + " objects";
  if (!s.colors.empty()) out += " " + join(s.colors);
  return out;
}

// ---- scripted backend ----------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<std::string> answers, std::optional<std::string> caption, std::string id)
    : answers_(std::move(answers)), caption_(std::move(caption)), id_(std::move(id)) {}

void ScriptedBackend::maybe_fail() {
  if (fail_on_call && total_calls() == *fail_on_call) throw BackendError("scripted failure");
}

std::string ScriptedBackend::answer_visual_question(const Image&, const std::string& question) {
  maybe_fail();
  const std::size_t n = vqa_calls_++;
  if (answers_.empty()) return "answer to: " + question;
  return answers_[n % answers_.size()];
}

std::string ScriptedBackend::generate_text(const Image&, const std::string& prompt) {
  maybe_fail();
  ++text_calls_;
  return caption_ ? *caption_ : prompt;
}

// ---- http backend ----------------------------------------------------------

HttpBackend::HttpBackend(std::string url, int timeout_seconds) : url_(std::move(url)), timeout_seconds_(timeout_seconds) {
  const auto scheme = url_.find("://");
  if (scheme == std::string::npos || url_.compare(0, scheme, "http") != 0) {
    throw ConfigError("captioner.url must be an http:// URL, got '" + url_ + "'");
  }
  const auto path_start = url_.find('/', scheme + 3);
  host_ = url_.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url_.substr(path_start);
}

std::string HttpBackend::post(const Image& image, const std::string& prompt) {
  httplib::Client client(host_);
  client.set_connection_timeout(timeout_seconds_);
  client.set_read_timeout(timeout_seconds_);
  const json body{{"image_base64", base64_encode(encode_png(image))}, {"prompt", prompt}};
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res) throw BackendError("request to " + url_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw BackendError("request to " + url_ + " returned HTTP " + std::to_string(res->status));
  try {
    return json::parse(res->body).at("text").get<std::string>();
  } catch (const std::exception& e) {
    throw BackendError("malformed response from " + url_ + ": " + e.what());
  }
}

std::string HttpBackend::answer_visual_question(const Image& image, const std::string& question) {
  return post(image, question);
}

std::string HttpBackend::generate_text(const Image& image, const std::string& prompt) { return post(image, prompt); }

// ---- two-stage enhancement ---------------------------------------------------

std::vector<std::string> default_probe_questions() {
  return {
      "What objects and shapes are in the image, and what colors are they?",
      "How many objects are there, and how are they arranged?",
      "What text or numbers are visible in the image?",
  };
}

std::vector<QaPair> generate_vqa_pairs(const Image& image, CaptionerBackend& backend, int k,
                                       const std::vector<std::string>& probes) {
  if (k < 1) throw PreconditionError("k must be >= 1, got " + std::to_string(k));
  if (static_cast<std::size_t>(k) > probes.size()) {
    throw ConfigError("k=" + std::to_string(k) + " exceeds the " + std::to_string(probes.size()) + " configured probes");
  }
  std::vector<QaPair> pairs;
  for (int i = 0; i < k; ++i) {
    const auto& q = probes[static_cast<std::size_t>(i)];
    try {
      pairs.emplace_back(q, backend.answer_visual_question(image, q));
    } catch (const std::exception& e) {
      throw BackendError("probe " + std::to_string(i) + " failed: " + e.what());
    }
  }
  return pairs;
}

std::string caption_prompt(const std::vector<QaPair>& history) {
  std::string prompt;
  for (const auto& [q, a] : history) prompt += "Q: " + q + "\nA: " + a + "\n";
  prompt += kCaptionInstruction;
  return prompt;
}

std::string generate_caption(const Image& image, const std::vector<QaPair>& history, CaptionerBackend& backend) {
  try {
    return backend.generate_text(image, caption_prompt(history));
  } catch (const std::exception& e) {
    throw BackendError(std::string("caption generation failed: ") + e.what());
  }
}

// ---- cache -----------------------------------------------------------------

std::string caption_record_line(const CaptionRecord& r) {
  json pairs = json::array();
  for (const auto& [q, a] : r.vqa_pairs) pairs.push_back(json::array({q, a}));
  return json{{"puzzle_id", r.puzzle_id},
              {"image_digest", r.image_digest},
              {"backend_id", r.backend_id},
              {"k", r.vqa_pairs.size()},
              {"vqa_pairs", pairs},
              {"caption", r.caption}}
      .dump();
}

CaptionRecord parse_caption_record(const std::string& line) {
  const json j = json::parse(line);
  CaptionRecord r;
  r.puzzle_id = j.at("puzzle_id").get<std::string>();
  r.image_digest = j.at("image_digest").get<std::string>();
  r.backend_id = j.at("backend_id").get<std::string>();
  r.caption = j.at("caption").get<std::string>();
  for (const auto& p : j.at("vqa_pairs")) r.vqa_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  if (j.at("k").get<std::size_t>() != r.vqa_pairs.size()) throw CacheError("k does not match vqa_pairs length");
  return r;
}

namespace {

CaptionCache::Key key_of(const CaptionRecord& r) {
  return {r.puzzle_id, r.image_digest, r.backend_id, static_cast<int>(r.vqa_pairs.size())};
}

}  // namespace

CaptionCache::CaptionCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) {
    std::error_code ec;
    if (std::filesystem::exists(path_, ec)) throw CacheError("cannot read caption cache " + path_.string());
    return;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto record = parse_caption_record(line);
      records_[key_of(record)] = std::move(record);
    } catch (const std::exception& e) {
      throw CacheError(path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::optional<CaptionRecord> CaptionCache::find(const Key& key) const {
  std::lock_guard lock(mutex_);
  auto it = records_.find(key);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void CaptionCache::store(const CaptionRecord& record) {
  const std::string line = caption_record_line(record);
  std::lock_guard lock(mutex_);
  if (path_.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path_.parent_path(), ec);
  }
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw CacheError("cannot open caption cache " + path_.string() + " for append");
  out << line << '\n';
  out.flush();
  if (!out) throw CacheError("write to caption cache " + path_.string() + " failed");
  records_[key_of(record)] = record;
}

std::size_t CaptionCache::size() const {
  std::lock_guard lock(mutex_);
  return records_.size();
}

CaptionRecord enhance(const PuzzleInstance& puzzle, CaptionerBackend& backend, CaptionCache& cache, int k,
                      const std::vector<std::string>& probes) {
  if (k < 1) throw PreconditionError("k must be >= 1, got " + std::to_string(k));
  const std::string digest = image_digest(puzzle.image);
  if (auto hit = cache.find({puzzle.id, digest, backend.id(), k})) return *hit;

  CaptionRecord record;
  record.puzzle_id = puzzle.id;
  record.image_digest = digest;
  record.backend_id = backend.id();
  record.vqa_pairs = generate_vqa_pairs(puzzle.image, backend, k, probes);
  record.caption = generate_caption(puzzle.image, record.vqa_pairs, backend);
  cache.store(record);
  return record;
}

}  // namespace smart
