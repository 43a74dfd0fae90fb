#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "smart/evaluator.hpp"
#include "smart/image.hpp"
#include "smart/puzzle_core.hpp"

namespace smart {

inline constexpr const char* kManifestName = "puzzles.jsonl";
inline constexpr const char* kTagsName = "tags.jsonl";

struct RecordError {
  std::size_t line = 0;  // 1-based manifest line
  std::string message;
};

struct LoadResult {
  std::vector<PuzzleInstance> puzzles;
  std::vector<RecordError> errors;
};

// Reads <root>/puzzles.jsonl and the images it references. Bad lines are
// skipped and reported in `errors`; a missing manifest throws LoadError.
// Images are decoded concurrently; output order is manifest order.
LoadResult load_puzzles(const std::filesystem::path& root);

// Writes images/<id>.png and puzzles.jsonl under `root`.
void write_puzzles(const std::filesystem::path& root, const std::vector<PuzzleInstance>& puzzles);

// One manifest line for a puzzle whose image lives at `image_path`.
std::string manifest_line(const PuzzleInstance& puzzle, const std::string& image_path);

std::map<std::string, ModalityTag> load_modality_tags(const std::filesystem::path& path);
void write_modality_tags(const std::filesystem::path& path, const std::vector<PuzzleInstance>& puzzles);

// Rendered-expression categories count as text puzzles, the rest as
// vision-language puzzles.
ModalityTag default_modality(SkillCategory category) noexcept;

struct SplitSpec {
  std::set<int> test_root_ids;
  std::set<int> train_root_ids;
  std::uint64_t seed = 0;

  bool is_test(const PuzzleInstance& p) const { return test_root_ids.count(p.root_id) != 0; }
};

// Zero-shot split by root puzzle: ceil(test_fraction * #roots) roots go to
// test, chosen by a seeded shuffle of the sorted root ids.
SplitSpec make_puzzle_split(const std::vector<PuzzleInstance>& instances, double test_fraction, std::uint64_t seed);

struct ExternalRecord {
  std::string question;
  std::vector<std::string> options;
  std::string answer;
  std::string source;
  std::optional<std::string> image;  // path, relative to the manifest
};

std::vector<ExternalRecord> load_external_records(const std::filesystem::path& manifest);
std::string external_record_line(const ExternalRecord& record);

// At least two options and the normalized answer equals a normalized option.
bool is_multiple_choice(const ExternalRecord& record);
std::vector<ExternalRecord> filter_multiple_choice(const std::vector<ExternalRecord>& records);

// Eight categories x n_per_category puzzles with known answers. Each
// category has four root puzzles (ids 4*c+1 .. 4*c+4); instance i of a
// category belongs to root i mod 4. Deterministic per seed, and each
// category's stream is independent of the others.
std::vector<PuzzleInstance> generate_synthetic_puzzles(int n_per_category, int image_size, std::uint64_t seed);

inline constexpr int kRootsPerCategory = 4;

}  // namespace smart
