#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "smart/image.hpp"
#include "smart/puzzle_core.hpp"

namespace smart {

// Implementations must be deterministic for identical inputs; the caption
// cache relies on it.
class CaptionerBackend {
 public:
  virtual ~CaptionerBackend() = default;
  virtual std::string id() const = 0;
  virtual std::string answer_visual_question(const Image& image, const std::string& question) = 0;
  virtual std::string generate_text(const Image& image, const std::string& prompt) = 0;
};

// Offline stand-in for a captioning model: answers from a segmentation of the
// image (region count, colors, whether ink is present).
class MockBackend final : public CaptionerBackend {
 public:
  std::string id() const override { return "mock"; }
  std::string answer_visual_question(const Image& image, const std::string& question) override;
  std::string generate_text(const Image& image, const std::string& prompt) override;
};

// Test double. VQA answers come from `answers` in call order (cycling); text
// generation echoes the prompt unless `caption` is set. `fail_on_call`
// (0-based, across both methods) makes that call throw BackendError.
class ScriptedBackend final : public CaptionerBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> answers = {}, std::optional<std::string> caption = std::nullopt,
                           std::string id = "scripted");

  std::string id() const override { return id_; }
  std::string answer_visual_question(const Image& image, const std::string& question) override;
  std::string generate_text(const Image& image, const std::string& prompt) override;

  std::size_t vqa_calls() const { return vqa_calls_; }
  std::size_t text_calls() const { return text_calls_; }
  std::size_t total_calls() const { return vqa_calls_ + text_calls_; }
  void reset_counts() { vqa_calls_ = text_calls_ = 0; }

  std::optional<std::size_t> fail_on_call;

 private:
  void maybe_fail();

  std::vector<std::string> answers_;
  std::optional<std::string> caption_;
  std::string id_;
  std::atomic<std::size_t> vqa_calls_{0};
  std::atomic<std::size_t> text_calls_{0};
};

// POSTs {"image_base64", "prompt"} to `url` and reads {"text"} back. VQA
// questions are sent as the prompt.
class HttpBackend final : public CaptionerBackend {
 public:
  explicit HttpBackend(std::string url, int timeout_seconds = 60);
  std::string id() const override { return "http:" + url_; }
  std::string answer_visual_question(const Image& image, const std::string& question) override;
  std::string generate_text(const Image& image, const std::string& prompt) override;

 private:
  std::string post(const Image& image, const std::string& prompt);

  std::string url_;
  std::string host_;
  std::string path_;
  int timeout_seconds_;
};

using QaPair = std::pair<std::string, std::string>;

struct CaptionRecord {
  std::string puzzle_id;
  std::string image_digest;
  std::vector<QaPair> vqa_pairs;
  std::string caption;
  std::string backend_id;

  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

inline constexpr const char* kCaptionInstruction =
    "Describe this puzzle image in detail, including all shapes, numbers, text, and their arrangement.";

std::vector<std::string> default_probe_questions();

// Asks probes[0..k) in order. k must be >= 1 and no larger than the probe set.
std::vector<QaPair> generate_vqa_pairs(const Image& image, CaptionerBackend& backend, int k,
                                       const std::vector<std::string>& probes = default_probe_questions());

std::string caption_prompt(const std::vector<QaPair>& history);
std::string generate_caption(const Image& image, const std::vector<QaPair>& history, CaptionerBackend& backend);

// captions.jsonl-backed cache. Later lines shadow earlier ones with the same
// key. Thread-safe; every store is appended and flushed before returning.
class CaptionCache {
 public:
  using Key = std::tuple<std::string, std::string, std::string, int>;  // id, digest, backend, k

  explicit CaptionCache(std::filesystem::path path);

  std::optional<CaptionRecord> find(const Key& key) const;
  void store(const CaptionRecord& record);
  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<Key, CaptionRecord> records_;
};

std::string caption_record_line(const CaptionRecord& record);
CaptionRecord parse_caption_record(const std::string& line);

CaptionRecord enhance(const PuzzleInstance& puzzle, CaptionerBackend& backend, CaptionCache& cache, int k = 3,
                      const std::vector<std::string>& probes = default_probe_questions());

}  // namespace smart
