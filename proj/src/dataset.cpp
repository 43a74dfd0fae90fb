#include "smart/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <thread>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "smart/errors.hpp"
#include "smart/random.hpp"
#include "smart/render.hpp"

namespace smart {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- manifest I/O -----------------------------------------------------------

namespace {

struct ParsedLine {
  PuzzleInstance puzzle;
  fs::path image_path;
};

ParsedLine parse_manifest_line(const std::string& line, const fs::path& root) {
  const json j = json::parse(line);
  ParsedLine out;
  auto& p = out.puzzle;
  p.id = j.at("id").get<std::string>();
  p.root_id = j.at("root_id").get<int>();
  p.question = j.at("question").get<std::string>();
  const auto& options = j.at("options");
  if (!options.is_array() || options.size() != kNumOptions) {
    throw InvalidPuzzle("expected exactly 5 options, got " + std::to_string(options.is_array() ? options.size() : 0));
  }
  for (std::size_t i = 0; i < kNumOptions; ++i) p.options[i] = options[i].get<std::string>();
  p.gold_option_index = j.at("answer_index").get<int>();
  const auto category = j.at("category").get<std::string>();
  auto parsed = parse_category(category);
  if (!parsed) throw InvalidPuzzle("unknown category '" + category + "'");
  p.category = *parsed;
  if (j.contains("weight")) p.weight = j.at("weight").get<double>();
  validate(p);
  out.image_path = root / j.at("image").get<std::string>();
  return out;
}

}  // namespace

LoadResult load_puzzles(const fs::path& root) {
  const fs::path manifest = root / kManifestName;
  std::ifstream in(manifest);
  if (!in) throw LoadError("cannot open manifest " + manifest.string());

  struct Pending {
    std::size_t line;
    ParsedLine parsed;
  };
  LoadResult result;
  std::vector<Pending> pending;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      pending.push_back({line_no, parse_manifest_line(line, root)});
    } catch (const std::exception& e) {
      result.errors.push_back({line_no, e.what()});
    }
  }

  // Decode images in parallel chunks; results are collected in manifest order.
  const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t chunk = (pending.size() + workers - 1) / std::max<std::size_t>(workers, 1);
  std::vector<std::future<std::vector<std::optional<std::string>>>> jobs;
  for (std::size_t begin = 0; begin < pending.size(); begin += std::max<std::size_t>(chunk, 1)) {
    const std::size_t end = std::min(pending.size(), begin + std::max<std::size_t>(chunk, 1));
    jobs.push_back(std::async(std::launch::async, [&pending, begin, end] {
      std::vector<std::optional<std::string>> errors;
      for (std::size_t i = begin; i < end; ++i) {
        try {
          pending[i].parsed.puzzle.image = read_png(pending[i].parsed.image_path);
          errors.emplace_back(std::nullopt);
        } catch (const std::exception& e) {
          errors.emplace_back(e.what());
        }
      }
      return errors;
    }));
  }
  std::size_t index = 0;
  for (auto& job : jobs) {
    for (auto& error : job.get()) {
      if (error) {
        result.errors.push_back({pending[index].line, *error});
      } else {
        result.puzzles.push_back(std::move(pending[index].parsed.puzzle));
      }
      ++index;
    }
  }
  std::stable_sort(result.errors.begin(), result.errors.end(),
                   [](const RecordError& a, const RecordError& b) { return a.line < b.line; });
  return result;
}

std::string manifest_line(const PuzzleInstance& puzzle, const std::string& image_path) {
  json j;
  j["id"] = puzzle.id;
  j["root_id"] = puzzle.root_id;
  j["image"] = image_path;
  j["question"] = puzzle.question;
  j["options"] = json::array();
  for (const auto& o : puzzle.options) j["options"].push_back(o);
  j["answer_index"] = puzzle.gold_option_index;
  j["category"] = std::string(category_name(puzzle.category));
  if (puzzle.weight != 1.0) j["weight"] = puzzle.weight;
  return j.dump();
}

void write_puzzles(const fs::path& root, const std::vector<PuzzleInstance>& puzzles) {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw LoadError("cannot create " + (root / "images").string() + ": " + ec.message());
  std::ofstream out(root / kManifestName, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write manifest under " + root.string());
  for (const auto& p : puzzles) {
    const std::string rel = "images/" + p.id + ".png";
    write_png(root / rel, p.image);
    out << manifest_line(p, rel) << '\n';
  }
  if (!out) throw LoadError("short write on manifest under " + root.string());
}

ModalityTag default_modality(SkillCategory category) noexcept {
  return category == SkillCategory::arithmetic || category == SkillCategory::algebra ? ModalityTag::text
                                                                                      : ModalityTag::vl;
}

std::map<std::string, ModalityTag> load_modality_tags(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open tags file " + path.string());
  std::map<std::string, ModalityTag> tags;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    tags[j.at("puzzle_id").get<std::string>()] = parse_modality(j.at("tag").get<std::string>());
  }
  return tags;
}

void write_modality_tags(const fs::path& path, const std::vector<PuzzleInstance>& puzzles) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write tags file " + path.string());
  for (const auto& p : puzzles) {
    out << json{{"puzzle_id", p.id}, {"tag", std::string(modality_name(default_modality(p.category)))}}.dump()
        << '\n';
  }
}

// ---- split ------------------------------------------------------------------

SplitSpec make_puzzle_split(const std::vector<PuzzleInstance>& instances, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw SplitError("test fraction must lie in (0,1)");
  std::set<int> roots;
  for (const auto& p : instances) roots.insert(p.root_id);
  if (roots.size() < 2) throw SplitError("puzzle split needs at least 2 root puzzles, got " + std::to_string(roots.size()));

  std::vector<int> order(roots.begin(), roots.end());
  Rng rng(seed);
  rng.shuffle(order);
  auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(order.size()) - 1e-12));
  n_test = std::clamp<std::size_t>(n_test, 1, order.size() - 1);

  SplitSpec split;
  split.seed = seed;
  split.test_root_ids.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.train_root_ids.insert(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  return split;
}

// ---- external records ---------------------------------------------------------

std::vector<ExternalRecord> load_external_records(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw LoadError("cannot open external manifest " + manifest.string());
  std::vector<ExternalRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ExternalRecord r;
      r.question = j.at("question").get<std::string>();
      r.options = j.value("options", std::vector<std::string>{});
      r.answer = j.at("answer").get<std::string>();
      r.source = j.at("source").get<std::string>();
      if (r.source.empty()) throw LoadError("empty source");
      if (j.contains("image") && !j["image"].is_null()) r.image = j["image"].get<std::string>();
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw LoadError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::string external_record_line(const ExternalRecord& record) {
  json j{{"question", record.question}, {"options", record.options}, {"answer", record.answer},
         {"source", record.source}};
  if (record.image) j["image"] = *record.image;
  return j.dump();
}

bool is_multiple_choice(const ExternalRecord& record) {
  if (record.options.size() < 2) return false;
  const std::string answer = normalize_answer(record.answer);
  return std::any_of(record.options.begin(), record.options.end(),
                     [&](const std::string& o) { return normalize_answer(o) == answer; });
}

std::vector<ExternalRecord> filter_multiple_choice(const std::vector<ExternalRecord>& records) {
  std::vector<ExternalRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out), is_multiple_choice);
  return out;
}

// ---- synthetic puzzles ----------------------------------------------------------

namespace {

using render::ShapeKind;

struct Box {
  int top = 0;
  int left = 0;
  int size = 0;
};

bool separated(const Box& a, const Box& b) {
  return a.left + a.size + 1 <= b.left || b.left + b.size + 1 <= a.left || a.top + a.size + 1 <= b.top ||
         b.top + b.size + 1 <= a.top;
}

// Non-touching placement with a one-pixel gap between boxes and to the border.
std::vector<Box> place_boxes(Rng& rng, int image_size, const std::vector<int>& sizes) {
  for (int restart = 0; restart < 200; ++restart) {
    std::vector<Box> boxes;
    bool ok = true;
    for (int size : sizes) {
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        Box b{rng.uniform_int(1, image_size - size - 1), rng.uniform_int(1, image_size - size - 1), size};
        if (std::all_of(boxes.begin(), boxes.end(), [&](const Box& o) { return separated(b, o); })) {
          boxes.push_back(b);
          placed = true;
        }
      }
      if (!placed) {
        ok = false;
        break;
      }
    }
    if (ok) return boxes;
  }
  throw std::logic_error("synthetic generator could not place shapes");
}

struct Draft {
  Image image;
  std::string question;
  std::string gold;
  std::vector<std::string> distractors;  // in preference order, >= 4 distinct
};

std::vector<int> palette_order(Rng& rng) {
  std::vector<int> order(render::kPaletteSize);
  for (int i = 0; i < render::kPaletteSize; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  return order;
}

std::string color_name(int i) { return std::string(render::kPalette[i].name); }
Rgb color_rgb(int i) { return render::kPalette[i].rgb; }

// Preferred colors first, then the rest of the palette in random order.
std::vector<std::string> color_distractors(Rng& rng, int gold, const std::vector<int>& preferred) {
  std::vector<std::string> out;
  auto push = [&](int c) {
    const auto name = color_name(c);
    if (c != gold && std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  };
  for (int c : preferred) push(c);
  for (int c : palette_order(rng)) push(c);
  return out;
}

std::vector<std::string> numeric_distractors(Rng& rng, int gold, int lo, int hi) {
  std::vector<int> near;
  for (int radius = 4; near.size() < 4; radius += 2) {
    near.clear();
    for (int v = std::max(lo, gold - radius); v <= std::min(hi, gold + radius); ++v) {
      if (v != gold) near.push_back(v);
    }
    if (radius > 100) throw std::logic_error("numeric distractor range too small");
  }
  rng.shuffle(near);
  std::vector<std::string> out;
  for (int v : near) out.push_back(std::to_string(v));
  return out;
}

ShapeKind kind_for(int v) {
  static constexpr ShapeKind kinds[] = {ShapeKind::disk, ShapeKind::square, ShapeKind::diamond, ShapeKind::triangle};
  return kinds[v % 4];
}

int text_scale(std::string_view text, int image_size) {
  int scale = 1;
  while (render::text_width(text, scale + 1) <= image_size - 2 && scale < 3) ++scale;
  return scale;
}

void draw_centered_text(Rng& rng, Image& image, std::string_view text) {
  const int s = image.width;
  const int scale = text_scale(text, s);
  const int w = render::text_width(text, scale);
  const int h = render::text_height(scale);
  const int left = rng.uniform_int(1, std::max(1, s - w - 1));
  const int top = rng.uniform_int(1, std::max(1, s - h - 1));
  render::draw_text(image, text, top, left, scale, render::kInk);
}

Draft make_counting(Rng& rng, int s, int variant) {
  const int unit = std::max(1, s / 16);
  const int k = rng.uniform_int(1, s >= 32 ? 6 : 4);
  std::vector<int> sizes(static_cast<std::size_t>(k));
  for (auto& sz : sizes) sz = rng.uniform_int(3, 3 + 2 * unit - 1);
  const auto boxes = place_boxes(rng, s, sizes);
  Draft d;
  d.image = Image(s, s, render::kPaper);
  const int shared_color = rng.uniform_int(0, render::kPaletteSize - 1);
  for (const auto& b : boxes) {
    ShapeKind kind = variant == 0 ? ShapeKind::disk : variant == 1 ? ShapeKind::square : kind_for(rng.uniform_int(0, 3));
    const int color = variant == 3 ? rng.uniform_int(0, render::kPaletteSize - 1) : shared_color;
    render::draw_shape(d.image, kind, b.top, b.left, b.size, color_rgb(color));
  }
  d.question = "How many shapes are there?";
  d.gold = std::to_string(k);
  d.distractors = numeric_distractors(rng, k, 0, 9);
  return d;
}

Draft make_logic(Rng& rng, int s, int variant) {
  const int unit = std::max(1, s / 16);
  const int n = rng.uniform_int(3, 5);
  const int size = 3 + 2 * unit - 1;
  const auto boxes = place_boxes(rng, s, std::vector<int>(static_cast<std::size_t>(n), size));
  const auto colors = palette_order(rng);
  const int majority = colors[0];
  const int odd = colors[1];
  const int odd_index = rng.uniform_int(0, n - 1);
  Draft d;
  d.image = Image(s, s, render::kPaper);
  for (int i = 0; i < n; ++i) {
    const auto& b = boxes[static_cast<std::size_t>(i)];
    render::draw_shape(d.image, kind_for(variant), b.top, b.left, b.size, color_rgb(i == odd_index ? odd : majority));
  }
  d.question = "Which color is the shape that is different?";
  d.gold = color_name(odd);
  d.distractors = color_distractors(rng, odd, {majority});
  return d;
}

Draft make_spatial(Rng& rng, int s, int variant) {
  static constexpr ShapeKind kinds[] = {ShapeKind::square, ShapeKind::disk, ShapeKind::diamond, ShapeKind::triangle};
  std::vector<int> size_pool{3, 5, 7};
  if (s >= 32) size_pool.push_back(9);
  rng.shuffle(size_pool);
  const int n = rng.uniform_int(2, std::min<int>(4, static_cast<int>(size_pool.size())));
  std::vector<int> sizes(size_pool.begin(), size_pool.begin() + n);
  const auto boxes = place_boxes(rng, s, sizes);
  const auto colors = palette_order(rng);
  Draft d;
  d.image = Image(s, s, render::kPaper);
  int largest = 0;
  for (int i = 0; i < n; ++i) {
    const auto& b = boxes[static_cast<std::size_t>(i)];
    render::draw_shape(d.image, kinds[variant], b.top, b.left, b.size, color_rgb(colors[static_cast<std::size_t>(i)]));
    if (sizes[static_cast<std::size_t>(i)] > sizes[static_cast<std::size_t>(largest)]) largest = i;
  }
  const int gold = colors[static_cast<std::size_t>(largest)];
  d.question = "What color is the largest shape?";
  d.gold = color_name(gold);
  d.distractors = color_distractors(rng, gold, std::vector<int>(colors.begin(), colors.begin() + n));
  return d;
}

Draft make_path(Rng& rng, int s, int variant) {
  const int unit = std::max(1, s / 16);
  const int markers = variant % 2 == 0 ? 3 : 4;
  const int ms = 2 * unit + 1;
  const auto colors = palette_order(rng);
  std::vector<int> centers(static_cast<std::size_t>(markers));
  for (int i = 0; i < markers; ++i) centers[static_cast<std::size_t>(i)] = (i + 1) * s / (markers + 1);
  const int marker_top = s - ms - 1;

  Draft d;
  d.image = Image(s, s, render::kPaper);
  for (int i = 0; i < markers; ++i) {
    render::fill_rect(d.image, marker_top, centers[static_cast<std::size_t>(i)] - ms / 2, ms, ms,
                      color_rgb(colors[static_cast<std::size_t>(i)]));
  }
  const int start = centers[static_cast<std::size_t>(rng.uniform_int(0, markers - 1))];
  const int target = rng.uniform_int(0, markers - 1);
  const int end = centers[static_cast<std::size_t>(target)];
  render::fill_rect(d.image, 1, start - ms / 2, ms, ms, render::kInk);

  // Vertical run, horizontal jog(s), final vertical run touching the marker.
  int row = 1 + ms;
  int col = start;
  const int last_row = marker_top - 1;
  std::vector<int> turns;
  const int jogs = variant < 2 ? 1 : 2;
  for (int j = 0; j < jogs; ++j) turns.push_back(rng.uniform_int(row + 1, last_row - 2));
  std::sort(turns.begin(), turns.end());
  std::vector<int> waypoints;
  for (int j = 0; j + 1 < jogs; ++j) waypoints.push_back(rng.uniform_int(1, s - 2));
  waypoints.push_back(end);
  for (int j = 0; j < jogs; ++j) {
    render::fill_rect(d.image, row, col, turns[static_cast<std::size_t>(j)] - row + 1, 1, render::kInk);
    row = turns[static_cast<std::size_t>(j)];
    const int next = waypoints[static_cast<std::size_t>(j)];
    render::fill_rect(d.image, row, std::min(col, next), 1, std::abs(next - col) + 1, render::kInk);
    col = next;
  }
  render::fill_rect(d.image, row, col, last_row - row + 1, 1, render::kInk);

  const int gold = colors[static_cast<std::size_t>(target)];
  d.question = "Which color is the marker at the end of the path?";
  d.gold = color_name(gold);
  d.distractors = color_distractors(rng, gold, std::vector<int>(colors.begin(), colors.begin() + markers));
  return d;
}

Draft make_pattern(Rng& rng, int s, int variant) {
  const int period = variant % 2 == 0 ? 2 : 3;
  const bool disks = variant >= 2;
  const int visible = s >= 32 ? 5 : 4;
  const int cell = s >= 32 ? 4 : 2;
  const auto colors = palette_order(rng);
  const int width = (visible + 1) * (cell + 1) - 1;
  const int left = rng.uniform_int(1, std::max(1, s - width - 1));
  const int top = rng.uniform_int(1, s - cell - 1);
  Draft d;
  d.image = Image(s, s, render::kPaper);
  for (int i = 0; i < visible; ++i) {
    const Rgb c = color_rgb(colors[static_cast<std::size_t>(i % period)]);
    render::draw_shape(d.image, disks && cell >= 3 ? ShapeKind::disk : ShapeKind::square, top, left + i * (cell + 1),
                       cell, c);
  }
  render::outline_rect(d.image, top, left + visible * (cell + 1), cell, cell, render::kInk);
  const int gold = colors[static_cast<std::size_t>(visible % period)];
  d.question = "Which color comes next in the pattern?";
  d.gold = color_name(gold);
  d.distractors = color_distractors(rng, gold, std::vector<int>(colors.begin(), colors.begin() + period));
  return d;
}

Draft make_arithmetic(Rng& rng, int s, int variant) {
  int answer = 0;
  std::string text;
  if (variant == 1) {
    const int a = rng.uniform_int(2, 9);
    const int b = rng.uniform_int(1, a - 1);
    answer = a - b;
    text = std::to_string(a) + "-" + std::to_string(b);
  } else if (variant == 3) {
    const int a = rng.uniform_int(1, 4), b = rng.uniform_int(1, 4), c = rng.uniform_int(1, 4);
    answer = a + b + c;
    text = std::to_string(a) + "+" + std::to_string(b) + "+" + std::to_string(c);
  } else {
    const int a = rng.uniform_int(1, 9);
    const int b = rng.uniform_int(1, 9);
    answer = a + b;
    text = std::to_string(a) + "+" + std::to_string(b);
  }
  if (variant != 3 || render::text_width(text + "=?", 1) <= s - 2) text += "=?";
  Draft d;
  d.image = Image(s, s, render::kPaper);
  draw_centered_text(rng, d.image, text);
  d.question = "What is the result of the expression?";
  d.gold = std::to_string(answer);
  d.distractors = numeric_distractors(rng, answer, 0, 18);
  return d;
}

Draft make_measurement(Rng& rng, int s, int variant) {
  const int unit = std::max(2, s / 10);
  const int max_len = std::min(9, (s - 4) / unit);
  const int length = rng.uniform_int(1, max_len);
  const int x0 = 2;
  const int baseline = s - 4;
  Draft d;
  d.image = Image(s, s, render::kPaper);
  render::fill_rect(d.image, baseline, x0, 1, max_len * unit + 1, render::kInk);
  for (int t = 0; t <= max_len; ++t) render::fill_rect(d.image, baseline + 1, x0 + t * unit, 2, 1, render::kInk);
  const int thickness = 2 + variant % 3;
  const int bar_top = rng.uniform_int(2, baseline - thickness - 2);
  const int color = rng.uniform_int(0, render::kPaletteSize - 1);
  render::fill_rect(d.image, bar_top, x0, thickness, length * unit + 1, color_rgb(color));
  d.question = "How many units long is the bar?";
  d.gold = std::to_string(length);
  d.distractors = numeric_distractors(rng, length, 0, 10);
  return d;
}

Draft make_algebra(Rng& rng, int s, int variant) {
  const int x = rng.uniform_int(1, 9);
  const int a = rng.uniform_int(1, 9);
  const int b = x + a;
  std::string text;
  switch (variant) {
    case 1: text = std::to_string(a) + "+x=" + std::to_string(b); break;
    case 2: text = std::to_string(b) + "-x=" + std::to_string(a); break;
    default: text = "x+" + std::to_string(a) + "=" + std::to_string(b); break;
  }
  Draft d;
  d.image = Image(s, s, render::kPaper);
  draw_centered_text(rng, d.image, text);
  d.question = "What is the value of x?";
  d.gold = std::to_string(x);
  d.distractors = numeric_distractors(rng, x, 0, 18);
  return d;
}

Draft make_draft(SkillCategory category, Rng& rng, int s, int variant) {
  switch (category) {
    case SkillCategory::logic: return make_logic(rng, s, variant);
    case SkillCategory::counting: return make_counting(rng, s, variant);
    case SkillCategory::spatial_reasoning: return make_spatial(rng, s, variant);
    case SkillCategory::path_tracing: return make_path(rng, s, variant);
    case SkillCategory::pattern_finding: return make_pattern(rng, s, variant);
    case SkillCategory::arithmetic: return make_arithmetic(rng, s, variant);
    case SkillCategory::measurement: return make_measurement(rng, s, variant);
    case SkillCategory::algebra: return make_algebra(rng, s, variant);
  }
  throw std::logic_error("unhandled category");
}

}  // namespace

std::vector<PuzzleInstance> generate_synthetic_puzzles(int n_per_category, int image_size, std::uint64_t seed) {
  if (n_per_category < 1) throw PreconditionError("n_per_category must be >= 1");
  if (image_size < 16) throw PreconditionError("image_size must be >= 16");
  std::vector<PuzzleInstance> out;
  out.reserve(static_cast<std::size_t>(n_per_category) * kNumCategories);
  for (SkillCategory category : kAllCategories) {
    const int c = category_index(category);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    for (int i = 0; i < n_per_category; ++i) {
      const int variant = i % kRootsPerCategory;
      Draft draft = make_draft(category, rng, image_size, variant);
      PuzzleInstance p;
      std::ostringstream id;
      id << category_name(category) << '-' << std::setw(4) << std::setfill('0') << i;
      p.id = id.str();
      p.root_id = c * kRootsPerCategory + variant + 1;
      p.image = std::move(draft.image);
      p.question = draft.question;
      p.category = category;
      p.gold_option_index = static_cast<int>(rng.below(kNumOptions));
      std::size_t next = 0;
      for (std::size_t slot = 0; slot < kNumOptions; ++slot) {
        p.options[slot] = static_cast<int>(slot) == p.gold_option_index ? draft.gold : draft.distractors.at(next++);
      }
      validate(p);
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace smart
