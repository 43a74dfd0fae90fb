#include "smart/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "smart/caption.hpp"
#include "smart/dataset.hpp"
#include "smart/errors.hpp"
#include "smart/evaluator.hpp"
#include "smart/router.hpp"

namespace smart {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      "seed",
      "vision.image_size", "vision.patch_size", "vision.segments", "vision.dim", "vision.color_threshold",
      "vision.min_area",
      "qformer.queries", "qformer.dim", "qformer.layers", "qformer.heads", "qformer.ff_hidden",
      "decoder.dim", "decoder.layers", "decoder.heads", "decoder.ff_hidden", "decoder.max_prompt",
      "decoder.max_generated", "decoder.caption_tokens", "decoder.question_tokens", "decoder.option_slot",
      "trainer.base_lr", "trainer.lora_lr", "trainer.batch_size", "trainer.epochs", "trainer.mix_ratio",
      "trainer.max_steps", "trainer.eval_every", "trainer.all_categories", "trainer.classifier_weight",
      "trainer.additional", "trainer.shuffle_options",
      "lora.enabled", "lora.rank", "lora.alpha", "lora.targets", "lora.freeze_base", "lora.init_std",
      "router.prompt", "router.train_classifier",
      "captioner.backend", "captioner.url", "captioner.k", "captioner.probes", "captioner.timeout",
      "split.test_fraction",
  };
  return keys;
}

ModelConfig model_config_from(const Config& c) {
  ModelConfig m;
  m.vision.image_size = c.get_int("vision.image_size", m.vision.image_size);
  m.vision.patch_size = c.get_int("vision.patch_size", m.vision.patch_size);
  m.vision.segments = c.get_int("vision.segments", m.vision.segments);
  m.vision.dim = c.get_int("vision.dim", m.vision.dim);
  m.vision.color_threshold = c.get_int("vision.color_threshold", m.vision.color_threshold);
  m.vision.min_area = c.get_int("vision.min_area", m.vision.min_area);
  m.qformer.queries = c.get_int("qformer.queries", m.qformer.queries);
  m.qformer.dim = c.get_int("qformer.dim", m.qformer.dim);
  m.qformer.layers = c.get_int("qformer.layers", m.qformer.layers);
  m.qformer.heads = c.get_int("qformer.heads", m.qformer.heads);
  m.qformer.ff_hidden = c.get_int("qformer.ff_hidden", m.qformer.ff_hidden);
  m.decoder.dim = c.get_int("decoder.dim", m.decoder.dim);
  m.decoder.layers = c.get_int("decoder.layers", m.decoder.layers);
  m.decoder.heads = c.get_int("decoder.heads", m.decoder.heads);
  m.decoder.ff_hidden = c.get_int("decoder.ff_hidden", m.decoder.ff_hidden);
  m.decoder.max_prompt = c.get_int("decoder.max_prompt", m.decoder.max_prompt);
  m.decoder.max_generated = c.get_int("decoder.max_generated", m.decoder.max_generated);
  m.decoder.caption_tokens = c.get_int("decoder.caption_tokens", m.decoder.caption_tokens);
  m.decoder.question_tokens = c.get_int("decoder.question_tokens", m.decoder.question_tokens);
  m.decoder.option_slot = c.get_int("decoder.option_slot", m.decoder.option_slot);
  m.reconcile();
  m.validate();
  return m;
}

TrainConfig train_config_from(const Config& c) {
  TrainConfig t;
  t.base_lr = c.get_double("trainer.base_lr", t.base_lr);
  t.lora_lr = c.get_double("trainer.lora_lr", t.lora_lr);
  t.batch_size = c.get_int("trainer.batch_size", t.batch_size);
  t.epochs = c.get_double("trainer.epochs", t.epochs);
  t.mix_ratio = c.get_double("trainer.mix_ratio", t.mix_ratio);
  t.max_steps = c.get_int("trainer.max_steps", t.max_steps);
  t.eval_every = c.get_int("trainer.eval_every", t.eval_every);
  t.all_categories = c.get_bool("trainer.all_categories", t.all_categories);
  t.classifier_weight = c.get_double("trainer.classifier_weight", t.classifier_weight);
  t.shuffle_options = c.get_bool("trainer.shuffle_options", t.shuffle_options);
  t.train_classifier = c.get_bool("router.train_classifier", t.train_classifier);
  t.seed = c.get_u64("seed", 0);
  t.validate();
  return t;
}

LoraConfig lora_config_from(const Config& c) {
  LoraConfig l;
  l.enabled = c.get_bool("lora.enabled", l.enabled);
  l.rank = c.get_int("lora.rank", l.rank);
  l.alpha = c.get_double("lora.alpha", l.alpha);
  l.targets = c.get_list("lora.targets", l.targets);
  l.freeze_base = c.get_bool("lora.freeze_base", l.freeze_base);
  l.init_std = c.get_double("lora.init_std", l.init_std);
  l.validate();
  return l;
}

namespace {

struct Context {
  Config config;
  std::uint64_t seed = 0;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;

  json snapshot() const {
    json j = config.to_json();
    j["seed"] = std::to_string(seed);
    return j;
  }
};

struct CommandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CommandError("cannot write " + path.string());
  out << text;
  if (!out) throw CommandError("short write on " + path.string());
}

std::vector<PuzzleInstance> load_dataset(const Context& ctx, const fs::path& data) {
  LoadResult loaded = load_puzzles(data);
  for (const auto& e : loaded.errors) *ctx.err << "warning: " << (data / kManifestName).string() << ":" << e.line << ": " << e.message << "\n";
  if (!loaded.errors.empty()) {
    throw CommandError(std::to_string(loaded.errors.size()) + " manifest record(s) could not be loaded");
  }
  if (loaded.puzzles.empty()) throw CommandError("no puzzles in " + data.string());
  return std::move(loaded.puzzles);
}

std::vector<std::string> probe_list(const Config& c) {
  auto raw = c.raw("captioner.probes");
  if (!raw) return default_probe_questions();
  std::vector<std::string> probes;
  std::istringstream in(*raw);
  std::string item;
  while (std::getline(in, item, '|')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    probes.push_back(item.substr(b, item.find_last_not_of(" \t") - b + 1));
  }
  if (probes.empty()) throw ConfigError("captioner.probes is empty");
  return probes;
}

std::unique_ptr<CaptionerBackend> make_backend(const Config& c) {
  const std::string name = c.get_string("captioner.backend", "mock");
  if (name == "mock") return std::make_unique<MockBackend>();
  if (name == "http") {
    auto url = c.raw("captioner.url");
    if (!url) throw ConfigError("captioner.backend = http needs captioner.url");
    return std::make_unique<HttpBackend>(*url, c.get_int("captioner.timeout", 60));
  }
  throw ConfigError("unknown captioner backend '" + name + "' (expected mock or http)");
}

// Puzzle id -> caption from the cache, for the configured backend and k.
// Without a cache file every caption is empty.
std::map<std::string, std::string> load_captions(const Context& ctx, const std::vector<PuzzleInstance>& puzzles,
                                                 const std::optional<fs::path>& explicit_path, const fs::path& data) {
  fs::path path = explicit_path.value_or(data / "captions.jsonl");
  std::map<std::string, std::string> captions;
  if (!explicit_path && !fs::exists(path)) {
    *ctx.err << "note: no caption cache at " << path.string() << "; training and inference use empty captions\n";
    for (const auto& p : puzzles) captions[p.id] = "";
    return captions;
  }
  if (!fs::exists(path)) throw CommandError("caption cache " + path.string() + " does not exist; run `caption` first");
  CaptionCache cache(path);
  const std::string backend_id = make_backend(ctx.config)->id();
  const int k = ctx.config.get_int("captioner.k", 3);
  std::vector<std::string> missing;
  for (const auto& p : puzzles) {
    auto rec = cache.find({p.id, image_digest(p.image), backend_id, k});
    if (!rec) {
      missing.push_back(p.id);
    } else {
      captions[p.id] = rec->caption;
    }
  }
  if (!missing.empty()) {
    throw CommandError(std::to_string(missing.size()) + " puzzle(s) have no caption for backend '" + backend_id +
                       "' (first: " + missing.front() + "); run `caption` first");
  }
  return captions;
}

SplitSpec dataset_split(const Context& ctx, const std::vector<PuzzleInstance>& puzzles) {
  return make_puzzle_split(puzzles, ctx.config.get_double("split.test_fraction", 0.25), ctx.seed);
}

std::vector<PuzzleInstance> select_split(const Context& ctx, const std::vector<PuzzleInstance>& puzzles,
                                         const std::string& which) {
  if (which == "all") return puzzles;
  if (which != "train" && which != "test") throw ConfigError("--split must be train, test or all");
  const SplitSpec split = dataset_split(ctx, puzzles);
  std::vector<PuzzleInstance> out;
  for (const auto& p : puzzles) {
    if (split.is_test(p) == (which == "test")) out.push_back(p);
  }
  if (out.empty()) throw CommandError("the " + which + " split is empty");
  return out;
}

// ---- commands ----------------------------------------------------------------

int cmd_synth(const Context& ctx, const fs::path& out_dir, int n_per_category, std::optional<int> image_size) {
  const int size = image_size.value_or(ctx.config.get_int("vision.image_size", 32));
  const auto puzzles = generate_synthetic_puzzles(n_per_category, size, ctx.seed);
  write_puzzles(out_dir, puzzles);
  write_modality_tags(out_dir / kTagsName, puzzles);
  json run{{"command", "synth"}, {"n_per_category", n_per_category}, {"image_size", size}, {"run_config", ctx.snapshot()}};
  write_text(out_dir / "synth.json", run.dump(2) + "\n");
  *ctx.out << "wrote " << puzzles.size() << " puzzles to " << out_dir.string() << "\n";
  return 0;
}

int cmd_caption(const Context& ctx, const fs::path& data, const std::optional<fs::path>& cache_path) {
  const auto puzzles = load_dataset(ctx, data);
  auto backend = make_backend(ctx.config);
  const int k = ctx.config.get_int("captioner.k", 3);
  const auto probes = probe_list(ctx.config);
  CaptionCache cache(cache_path.value_or(data / "captions.jsonl"));
  std::size_t hits = 0, misses = 0;
  for (const auto& p : puzzles) {
    const bool cached = cache.find({p.id, image_digest(p.image), backend->id(), k}).has_value();
    enhance(p, *backend, cache, k, probes);
    (cached ? hits : misses)++;
  }
  *ctx.out << "hits=" << hits << " misses=" << misses << "\n";
  return 0;
}

int cmd_train(const Context& ctx, const std::string& role_text, const fs::path& data,
              const std::optional<fs::path>& captions_path, const fs::path& out_path) {
  const ModelRole role = parse_role(role_text);
  const ModelConfig model_cfg = model_config_from(ctx.config);
  TrainConfig train_cfg = train_config_from(ctx.config);
  train_cfg.seed = ctx.seed;
  const LoraConfig lora_cfg = lora_config_from(ctx.config);

  const auto puzzles = load_dataset(ctx, data);
  const auto train_puzzles = select_split(ctx, puzzles, "train");
  const auto captions = load_captions(ctx, train_puzzles, captions_path, data);

  std::vector<TrainExample> examples;
  for (const auto& p : train_puzzles) examples.push_back(make_example(p, captions.at(p.id)));
  VectorSource train_source(examples);

  VectorSource additional_source;
  if (auto extra = ctx.config.raw("trainer.additional")) {
    const fs::path manifest(*extra);
    auto records = load_external_records(manifest);
    if (role == ModelRole::key_model) records = filter_multiple_choice(records);
    additional_source = VectorSource(
        examples_from_external(records, manifest.parent_path(), role, model_cfg.vision.image_size));
  }

  FitData fit_data;
  fit_data.train = &train_source;
  if (additional_source.size() > 0) fit_data.additional = &additional_source;
  if (role == ModelRole::key_model) fit_data.classifier = &train_source;

  FitOptions options;
  options.checkpoint_path = out_path;
  options.metrics_path = fs::path(out_path.string() + ".metrics.jsonl");
  options.run_config = ctx.snapshot();
  options.instruction = ctx.config.get_string("router.prompt", std::string(kDefaultRouterPrompt));
  options.on_step = [&](int step, const StepResult& r) {
    if ((step + 1) % 50 == 0) {
      *ctx.err << "step " << step + 1 << " loss " << std::setprecision(5) << r.loss;
      if (r.classifier_loss > 0) *ctx.err << " classifier " << r.classifier_loss;
      *ctx.err << "\n";
    }
  };

  ModelAssembly assembly(role, model_cfg, mix_seed(ctx.seed, role == ModelRole::key_model ? 11 : 12));
  const FitResult result = fit(assembly, fit_data, train_cfg, lora_cfg, options);
  const auto& last = result.metrics.back();
  json summary{{"role", std::string(role_name(role))},
               {"steps", result.losses.size()},
               {"best_step", result.best.step},
               {"final_loss", result.losses.back()},
               {"final_o_acc", last.o_acc},
               {"split", last.split},
               {"checkpoint", out_path.string()}};
  *ctx.out << summary.dump() << "\n";
  return 0;
}

int cmd_infer(const Context& ctx, const fs::path& data, const fs::path& key_ckpt, const fs::path& value_ckpt,
              const std::optional<fs::path>& captions_path, const fs::path& out_path, const std::string& split) {
  for (const auto& p : {key_ckpt, value_ckpt}) {
    if (!fs::exists(p)) throw CommandError("checkpoint " + p.string() + " not found; run `train` first");
  }
  const ModelAssembly key = assembly_from_checkpoint(load_checkpoint(key_ckpt));
  const ModelAssembly value = assembly_from_checkpoint(load_checkpoint(value_ckpt));
  if (key.role() != ModelRole::key_model) throw CommandError(key_ckpt.string() + " is not a key-model checkpoint");
  if (value.role() != ModelRole::value_model) throw CommandError(value_ckpt.string() + " is not a value-model checkpoint");

  const auto puzzles = select_split(ctx, load_dataset(ctx, data), split);
  const auto captions = load_captions(ctx, puzzles, captions_path, data);
  const std::string instruction = ctx.config.get_string("router.prompt", std::string(kDefaultRouterPrompt));

  std::ostringstream lines;
  lines << json{{"run_config", ctx.snapshot()}, {"split", split}}.dump() << "\n";
  int category_hits = 0, kind_hits = 0, correct = 0;
  for (const auto& p : puzzles) {
    const RoutedAnswer routed = route_and_answer(key, value, p, captions.at(p.id), instruction);
    category_hits += routed.decision.predicted_category == p.category;
    kind_hits += routed.decision.predicted_kind == answer_kind_for_category(p.category);
    correct += routed.option_index == p.gold_option_index;
    lines << json{{"puzzle_id", p.id},
                  {"option_index", routed.option_index},
                  {"predicted_category", std::string(category_name(routed.decision.predicted_category))},
                  {"chosen_model", std::string(role_name(routed.decision.chosen_model))}}
                 .dump()
          << "\n";
  }
  write_text(out_path, lines.str());
  const double n = static_cast<double>(puzzles.size());
  *ctx.out << json{{"puzzles", puzzles.size()},
                   {"category_accuracy", category_hits / n},
                   {"kind_accuracy", kind_hits / n},
                   {"o_acc", correct / n},
                   {"predictions", out_path.string()}}
                  .dump()
           << "\n";
  return 0;
}

int cmd_eval(const Context& ctx, const fs::path& predictions_path, const fs::path& data,
             const std::optional<fs::path>& tags_path, const std::optional<fs::path>& out_path,
             const std::string& split) {
  std::ifstream in(predictions_path);
  if (!in) throw CommandError("cannot open predictions " + predictions_path.string());
  std::map<std::string, int> predictions;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    if (!j.contains("puzzle_id")) continue;  // header line
    predictions[j.at("puzzle_id").get<std::string>()] = j.at("option_index").get<int>();
  }

  const auto puzzles = select_split(ctx, load_dataset(ctx, data), split);
  std::map<std::string, ModalityTag> tags;
  const fs::path tags_file = tags_path.value_or(data / kTagsName);
  if (tags_path || fs::exists(tags_file)) tags = load_modality_tags(tags_file);

  const EvalReport report = eval_report(predictions, puzzles, tags);
  json j = to_json(report);
  j["split"] = split;
  j["run_config"] = ctx.snapshot();
  if (out_path) write_text(*out_path, j.dump(2) + "\n");
  *ctx.out << format_wosa_table({{"ours", report}});
  *ctx.out << "O_acc " << std::fixed << std::setprecision(4) << report.o_acc << " over " << report.n << " puzzles\n";
  return 0;
}

int cmd_simulate(const Context& ctx, int n_key, int n_value, RoutingSimulation sim) {
  if (n_key < 0 || n_value < 0 || n_key + n_value == 0) throw ConfigError("need at least one simulated puzzle");
  sim.true_kinds.assign(static_cast<std::size_t>(n_key), AnswerKind::key);
  sim.true_kinds.insert(sim.true_kinds.end(), static_cast<std::size_t>(n_value), AnswerKind::value);
  sim.seed = ctx.seed;
  const double estimate = simulate_routing(sim);
  *ctx.out << json{{"estimate", estimate},
                   {"expected", expected_routing_accuracy(sim)},
                   {"trials", sim.trials},
                   {"seed", ctx.seed}}
                  .dump()
           << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SMART puzzle pipeline: synthetic data, captioning, training, routed inference, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  std::optional<std::string> config_path;
  app.add_option("--seed", seed, "Global seed (overrides the config file)");
  app.add_option("--config", config_path, "Config file with [section] key = value lines");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic puzzle set");
  std::string synth_out;
  int n_per_category = 32;
  std::optional<int> image_size;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--n-per-category", n_per_category, "Puzzles per category");
  synth->add_option("--image-size", image_size, "Image side in pixels");

  // caption
  auto* caption = app.add_subcommand("caption", "Enhance every puzzle with VQA pairs and a caption");
  std::string caption_data;
  std::optional<std::string> caption_cache, backend, url;
  std::optional<int> k;
  caption->add_option("--data", caption_data, "Dataset directory")->required();
  caption->add_option("--cache", caption_cache, "Caption cache (default <data>/captions.jsonl)");
  caption->add_option("--backend", backend, "mock or http");
  caption->add_option("--url", url, "Endpoint for the http backend");
  caption->add_option("--k", k, "Number of VQA pairs");

  // train
  auto* train = app.add_subcommand("train", "Train the key or value model");
  std::string role, train_data, train_out;
  std::optional<std::string> train_captions;
  train->add_option("--role", role, "key or value")->required();
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--captions", train_captions, "Caption cache (default <data>/captions.jsonl)");
  train->add_option("--out", train_out, "Checkpoint path")->required();

  // infer
  auto* infer = app.add_subcommand("infer", "Route and answer puzzles");
  std::string infer_data, key_ckpt, value_ckpt, infer_out, infer_split = "all";
  std::optional<std::string> infer_captions;
  infer->add_option("--data", infer_data, "Dataset directory")->required();
  infer->add_option("--key-ckpt", key_ckpt, "Key model checkpoint")->required();
  infer->add_option("--value-ckpt", value_ckpt, "Value model checkpoint")->required();
  infer->add_option("--captions", infer_captions, "Caption cache (default <data>/captions.jsonl)");
  infer->add_option("--out", infer_out, "Predictions JSONL")->required();
  infer->add_option("--split", infer_split, "train, test or all");

  // eval
  auto* eval = app.add_subcommand("eval", "Score predictions");
  std::string eval_predictions, eval_data, eval_split = "all";
  std::optional<std::string> eval_tags, eval_out;
  eval->add_option("--predictions", eval_predictions, "Predictions JSONL")->required();
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--tags", eval_tags, "Modality tags JSONL (default <data>/tags.jsonl)");
  eval->add_option("--out", eval_out, "Report JSON");
  eval->add_option("--split", eval_split, "train, test or all");

  // simulate-routing
  auto* simulate = app.add_subcommand("simulate-routing", "Monte-Carlo routing accuracy");
  RoutingSimulation sim;
  int n_key = 500, n_value = 500;
  simulate->add_option("--n-key", n_key, "Key-kind puzzles in the simulated set");
  simulate->add_option("--n-value", n_value, "Value-kind puzzles in the simulated set");
  simulate->add_option("--p-kind", sim.p_kind, "Probability the router picks the right model");
  simulate->add_option("--key-acc", sim.key_acc, "Key model accuracy on key puzzles");
  simulate->add_option("--value-acc", sim.value_acc, "Value model accuracy on value puzzles");
  simulate->add_option("--misrouted-key-acc", sim.misrouted_key_acc, "Accuracy on key puzzles sent to the value model");
  simulate->add_option("--misrouted-value-acc", sim.misrouted_value_acc,
                       "Accuracy on value puzzles sent to the key model");
  simulate->add_option("--trials", sim.trials, "Monte-Carlo trials");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    Context ctx;
    ctx.out = &out;
    ctx.err = &err;
    if (config_path) ctx.config = Config::load(*config_path);
    if (backend) ctx.config.set("captioner.backend", *backend);
    if (url) ctx.config.set("captioner.url", *url);
    if (k) ctx.config.set("captioner.k", std::to_string(*k));
    if (image_size && synth->parsed()) ctx.config.set("vision.image_size", std::to_string(*image_size));
    ctx.config.check_known(known_config_keys());
    ctx.seed = seed.value_or(ctx.config.get_u64("seed", 0));
    ctx.config.set("seed", std::to_string(ctx.seed));

    if (synth->parsed()) return cmd_synth(ctx, synth_out, n_per_category, image_size);
    if (caption->parsed()) {
      return cmd_caption(ctx, caption_data, caption_cache ? std::optional<fs::path>(*caption_cache) : std::nullopt);
    }
    if (train->parsed()) {
      return cmd_train(ctx, role, train_data,
                       train_captions ? std::optional<fs::path>(*train_captions) : std::nullopt, train_out);
    }
    if (infer->parsed()) {
      return cmd_infer(ctx, infer_data, key_ckpt, value_ckpt,
                       infer_captions ? std::optional<fs::path>(*infer_captions) : std::nullopt, infer_out,
                       infer_split);
    }
    if (eval->parsed()) {
      return cmd_eval(ctx, eval_predictions, eval_data, eval_tags ? std::optional<fs::path>(*eval_tags) : std::nullopt,
                      eval_out ? std::optional<fs::path>(*eval_out) : std::nullopt, eval_split);
    }
    if (simulate->parsed()) return cmd_simulate(ctx, n_key, n_value, sim);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace smart
