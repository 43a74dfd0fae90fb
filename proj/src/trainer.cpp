#include "smart/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "smart/errors.hpp"
#include "smart/layers.hpp"
#include "smart/random.hpp"
#include "smart/tokenizer.hpp"

namespace smart {

using nlohmann::json;

namespace {

const Tokenizer& tok() { return Tokenizer::instance(); }

}  // namespace

// ---- configs ---------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !(lora_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(epochs > 0.0)) throw ConfigError("epochs must be positive");
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw ConfigError("mix_ratio must lie in [0,1]");
  if (max_steps < 0 || eval_every < 0) throw ConfigError("max_steps and eval_every must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
  if (!(classifier_weight >= 0.0)) throw ConfigError("classifier_weight must be >= 0");
}

void LoraConfig::validate() const {
  if (rank < 1) throw ConfigError("lora rank must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("lora alpha must be positive");
  if (targets.empty()) throw ConfigError("lora targets must not be empty");
  if (!(init_std >= 0.0)) throw ConfigError("lora init_std must be >= 0");
}

json to_json(const TrainConfig& c) {
  return json{{"base_lr", c.base_lr},
              {"lora_lr", c.lora_lr},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"mix_ratio", c.mix_ratio},
              {"max_steps", c.max_steps},
              {"eval_every", c.eval_every},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"all_categories", c.all_categories},
              {"train_classifier", c.train_classifier},
              {"classifier_weight", c.classifier_weight},
              {"shuffle_options", c.shuffle_options}};
}

json to_json(const LoraConfig& c) {
  return json{{"enabled", c.enabled},         {"rank", c.rank},     {"alpha", c.alpha},
              {"targets", c.targets},         {"freeze_base", c.freeze_base}, {"init_std", c.init_std}};
}

json to_json(const ModelConfig& c) {
  return json{
      {"vision",
       {{"image_size", c.vision.image_size},
        {"patch_size", c.vision.patch_size},
        {"segments", c.vision.segments},
        {"dim", c.vision.dim},
        {"color_threshold", c.vision.color_threshold},
        {"min_area", c.vision.min_area}}},
      {"qformer",
       {{"queries", c.qformer.queries},
        {"dim", c.qformer.dim},
        {"layers", c.qformer.layers},
        {"heads", c.qformer.heads},
        {"ff_hidden", c.qformer.ff_hidden},
        {"visual_dim", c.qformer.visual_dim},
        {"output_dim", c.qformer.output_dim}}},
      {"decoder",
       {{"dim", c.decoder.dim},
        {"layers", c.decoder.layers},
        {"heads", c.decoder.heads},
        {"ff_hidden", c.decoder.ff_hidden},
        {"max_prompt", c.decoder.max_prompt},
        {"max_generated", c.decoder.max_generated},
        {"caption_tokens", c.decoder.caption_tokens},
        {"question_tokens", c.decoder.question_tokens},
        {"option_slot", c.decoder.option_slot}}},
  };
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  const auto& v = j.at("vision");
  c.vision.image_size = v.at("image_size");
  c.vision.patch_size = v.at("patch_size");
  c.vision.segments = v.at("segments");
  c.vision.dim = v.at("dim");
  c.vision.color_threshold = v.at("color_threshold");
  c.vision.min_area = v.at("min_area");
  const auto& q = j.at("qformer");
  c.qformer.queries = q.at("queries");
  c.qformer.dim = q.at("dim");
  c.qformer.layers = q.at("layers");
  c.qformer.heads = q.at("heads");
  c.qformer.ff_hidden = q.at("ff_hidden");
  c.qformer.visual_dim = q.at("visual_dim");
  c.qformer.output_dim = q.at("output_dim");
  const auto& d = j.at("decoder");
  c.decoder.dim = d.at("dim");
  c.decoder.layers = d.at("layers");
  c.decoder.heads = d.at("heads");
  c.decoder.ff_hidden = d.at("ff_hidden");
  c.decoder.max_prompt = d.at("max_prompt");
  c.decoder.max_generated = d.at("max_generated");
  c.decoder.caption_tokens = d.at("caption_tokens");
  c.decoder.question_tokens = d.at("question_tokens");
  c.decoder.option_slot = d.at("option_slot");
  c.validate();
  return c;
}

// ---- LoRA ------------------------------------------------------------------

std::size_t lora_wrap(nn::ParamStore& params, const LoraConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto matches = [](const std::string& name, const std::string& target) {
    if (name.size() < target.size() || name.compare(name.size() - target.size(), target.size(), target) != 0) {
      return false;
    }
    return name.size() == target.size() || name[name.size() - target.size() - 1] == '.';
  };

  std::vector<std::size_t> hits;
  for (const auto& target : cfg.targets) {
    bool found = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params.at(i);
      if (p.group != nn::ParamGroup::base || !matches(p.name, target)) continue;
      if (p.value.rows() < 1 || p.value.cols() < 1) continue;
      found = true;
      if (std::find(hits.begin(), hits.end(), i) == hits.end()) hits.push_back(i);
    }
    if (!found) throw ConfigError("lora target '" + target + "' matches no weight matrix");
  }

  Rng rng(seed);
  std::size_t added = 0;
  const double scale = cfg.alpha / cfg.rank;
  for (std::size_t i : hits) {
    if (params.lora_for(i)) throw ConfigError("weight '" + params.at(i).name + "' already has an adapter");
    const std::string name = params.at(i).name;
    const auto m = params.at(i).value.rows();
    const auto n = params.at(i).value.cols();
    const std::size_t b = params.add(name + ".lora_b", nn::Matrix::Zero(m, cfg.rank), nn::ParamGroup::lora);
    const std::size_t a = params.add(name + ".lora_a", layers::gaussian(rng, cfg.rank, n, cfg.init_std),
                                     nn::ParamGroup::lora);
    params.attach_lora({i, a, b, scale});
    if (cfg.freeze_base) params.at(i).trainable = false;
    added += static_cast<std::size_t>(cfg.rank * (m + n));
  }
  return added;
}

// ---- examples --------------------------------------------------------------

TrainExample make_example(PuzzleInstance puzzle, std::string caption) {
  TrainExample ex;
  ex.role = role_for_kind(answer_kind_for_category(puzzle.category));
  ex.puzzle = std::move(puzzle);
  ex.caption = std::move(caption);
  return ex;
}

std::vector<TrainExample> examples_from_external(const std::vector<ExternalRecord>& records,
                                                 const std::filesystem::path& base_dir, ModelRole role,
                                                 int image_size) {
  std::vector<TrainExample> out;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.options.size() > kNumOptions) continue;
    const std::string answer = normalize_answer(rec.answer);
    int gold = -1;
    for (std::size_t i = 0; i < rec.options.size(); ++i) {
      if (normalize_answer(rec.options[i]) == answer) {
        gold = static_cast<int>(i);
        break;
      }
    }
    if (role == ModelRole::key_model && (rec.options.size() < 2 || gold < 0)) continue;
    if (role == ModelRole::value_model && !parse_number(answer)) continue;

    TrainExample ex;
    ex.role = role;
    ex.additional = true;
    ex.puzzle.id = rec.source + "-" + std::to_string(r);
    ex.puzzle.root_id = -1;
    ex.puzzle.question = rec.question;
    ex.puzzle.category = role == ModelRole::key_model ? SkillCategory::logic : SkillCategory::arithmetic;
    for (std::size_t i = 0; i < rec.options.size(); ++i) ex.puzzle.options[i] = rec.options[i];
    if (role == ModelRole::value_model && gold < 0) {
      // The answer becomes the gold option so that the value target is defined.
      gold = static_cast<int>(std::min(rec.options.size(), kNumOptions - 1));
      ex.puzzle.options[static_cast<std::size_t>(gold)] = answer;
    }
    ex.puzzle.gold_option_index = gold;
    ex.puzzle.image = rec.image ? read_png(base_dir / *rec.image) : Image(image_size, image_size);
    if (ex.puzzle.image.height != image_size || ex.puzzle.image.width != image_size) {
      throw LoadError("external image for record " + std::to_string(r) + " is not " + std::to_string(image_size) +
                      "x" + std::to_string(image_size));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// ---- sampler ---------------------------------------------------------------

std::size_t MixedSampler::Stream::next() {
  if (cursor >= order.size()) {
    rng.shuffle(order);
    cursor = 0;
  }
  return order[cursor++];
}

MixedSampler::MixedSampler(std::size_t n_primary, std::size_t n_additional, int batch_size, double mix_ratio,
                           std::uint64_t seed)
    : batch_size_(batch_size), n_add_batch_(0), primary_(mix_seed(seed, 1)), additional_(mix_seed(seed, 2)) {
  if (n_primary == 0) throw ConfigError("mixed sampler: primary dataset is empty");
  if (batch_size < 1) throw ConfigError("mixed sampler: batch_size must be >= 1");
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw ConfigError("mixed sampler: mix_ratio must lie in [0,1]");
  if (n_additional > 0) n_add_batch_ = static_cast<int>(std::lround(mix_ratio * batch_size));
  primary_.order.resize(n_primary);
  for (std::size_t i = 0; i < n_primary; ++i) primary_.order[i] = i;
  primary_.cursor = n_primary;  // forces the first shuffle
  additional_.order.resize(n_additional);
  for (std::size_t i = 0; i < n_additional; ++i) additional_.order[i] = i;
  additional_.cursor = n_additional;
}

std::vector<MixedSampler::Item> MixedSampler::next_batch() {
  std::vector<Item> batch;
  batch.reserve(static_cast<std::size_t>(batch_size_));
  for (int i = 0; i < batch_size_ - n_add_batch_; ++i) batch.push_back({false, primary_.next()});
  for (int i = 0; i < n_add_batch_; ++i) batch.push_back({true, additional_.next()});
  return batch;
}

// ---- optimizer -------------------------------------------------------------

Adam::Adam(const nn::ParamStore& params, const TrainConfig& cfg)
    : base_lr_(cfg.base_lr), lora_lr_(cfg.lora_lr), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = nn::Matrix::Zero(params.at(i).value.rows(), params.at(i).value.cols());
    v_[i] = m_[i];
  }
}

void Adam::step(nn::ParamStore& params, const nn::Gradients& grads) {
  if (params.size() != m_.size()) throw ShapeError("Adam: parameter count changed since construction");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i);
    if (!p.trainable || !grads.has(i)) continue;
    const nn::Matrix& g = grads.grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const double lr = p.group == nn::ParamGroup::lora ? lora_lr_ : base_lr_;
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

TrainExample permute_options(const TrainExample& example, Rng& rng) {
  std::vector<int> order{0, 1, 2, 3, 4};
  rng.shuffle(order);
  TrainExample out = example;
  for (std::size_t slot = 0; slot < kNumOptions; ++slot) {
    out.puzzle.options[slot] = example.puzzle.options[static_cast<std::size_t>(order[slot])];
    if (order[slot] == example.puzzle.gold_option_index) out.puzzle.gold_option_index = static_cast<int>(slot);
  }
  return out;
}

// ---- losses ----------------------------------------------------------------

nn::Var example_loss(nn::Tape& tape, const ModelConfig& cfg, ModelRole role, const TrainExample& ex) {
  const auto prompt = build_prompt(ex.puzzle.question, ex.caption, ex.puzzle.options, role, cfg.decoder);
  if (role == ModelRole::key_model) {
    nn::Var logits = first_position_logits(tape, cfg, ex.puzzle, prompt);
    static const std::vector<int> options = [] {
      std::vector<int> ids;
      for (int i = 0; i < static_cast<int>(kNumOptions); ++i) ids.push_back(Tokenizer::option_token(i));
      return ids;
    }();
    return nn::cross_entropy(logits, {0}, {Tokenizer::option_token(ex.puzzle.gold_option_index)}, options);
  }

  const auto targets = tok().encode_value(ex.puzzle.options[static_cast<std::size_t>(ex.puzzle.gold_option_index)]);
  const std::vector<int> generated(targets.begin(), targets.end() - 1);  // drop EOS
  nn::Var prefix = encode_visual_prefix(tape, cfg, ex.puzzle);
  const int first = static_cast<int>(prefix.rows() + prompt.size()) - 1;
  std::vector<int> rows(targets.size());
  std::vector<int> local(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    rows[i] = first + static_cast<int>(i);
    local[i] = static_cast<int>(i);
  }
  nn::Var logits = decoder_logits(tape, cfg.decoder, prefix, prompt, generated, rows);
  return nn::cross_entropy(logits, local, targets, Tokenizer::numeric_vocabulary());
}

nn::Var classification_loss(nn::Tape& tape, const ModelConfig& cfg, const TrainExample& ex,
                            std::string_view instruction) {
  const auto prompt = build_classification_prompt(ex.puzzle.question, ex.caption, instruction, cfg.decoder);
  nn::Var logits = first_position_logits(tape, cfg, ex.puzzle, prompt);
  static const std::vector<int> categories = [] {
    std::vector<int> ids;
    for (SkillCategory c : kAllCategories) ids.push_back(Tokenizer::category_token(c));
    return ids;
  }();
  return nn::cross_entropy(logits, {0}, {Tokenizer::category_token(ex.puzzle.category)}, categories);
}

StepResult train_step(ModelAssembly& assembly, const std::vector<const TrainExample*>& batch, const TrainConfig& cfg,
                      Adam& optimizer, int step_index, const std::vector<const TrainExample*>& classifier_batch,
                      std::string_view instruction) {
  if (batch.empty()) throw PreconditionError("train_step: empty batch");
  for (const auto* ex : batch) {
    if (ex->role != assembly.role()) {
      throw PreconditionError("train_step: example " + ex->puzzle.id + " does not match the " +
                              std::string(role_name(assembly.role())) + " role");
    }
  }
  auto fail = [&](const std::string& why) {
    std::string ids;
    for (const auto* ex : batch) ids += (ids.empty() ? "" : ",") + ex->puzzle.id;
    return NumericError("non-finite loss at step " + std::to_string(step_index) + " (batch: " + ids + "): " + why);
  };

  nn::Tape tape(&assembly.params());
  StepResult result;
  nn::Var total;
  try {
    std::vector<nn::Var> losses;
    for (const auto* ex : batch) losses.push_back(example_loss(tape, assembly.config(), assembly.role(), *ex));
    nn::Var answer_loss = nn::scale(nn::sum(nn::concat_rows(losses)), 1.0 / static_cast<double>(batch.size()));
    result.loss = answer_loss.value()(0, 0);
    total = answer_loss;
    if (!classifier_batch.empty()) {
      std::vector<nn::Var> cls;
      for (const auto* ex : classifier_batch) {
        cls.push_back(classification_loss(tape, assembly.config(), *ex, instruction));
      }
      nn::Var cls_loss = nn::scale(nn::sum(nn::concat_rows(cls)), 1.0 / static_cast<double>(classifier_batch.size()));
      result.classifier_loss = cls_loss.value()(0, 0);
      total = nn::add(total, nn::scale(cls_loss, cfg.classifier_weight));
    }
  } catch (const NumericError& e) {
    throw fail(e.what());
  }
  if (!std::isfinite(result.loss) || !std::isfinite(result.classifier_loss)) throw fail("loss is not finite");

  nn::Gradients grads(assembly.params().size());
  tape.backward(total, grads);
  optimizer.step(assembly.params(), grads);
  return result;
}

json to_json(const MetricRecord& m) {
  return json{{"step", m.step}, {"split", m.split}, {"o_acc", m.o_acc}, {"wosa", m.wosa}, {"loss", m.loss}};
}

// ---- checkpoints -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'M', 'R', 'T', 'C', 'K', 'P', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_matrix(std::string& payload, const nn::Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_u64(payload, std::bit_cast<std::uint64_t>(m(r, c)));
  }
}

nn::Matrix get_matrix(const std::string& payload, std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
  const std::size_t bytes = static_cast<std::size_t>(rows * cols) * 8;
  if (offset + bytes > payload.size()) throw LoadError("checkpoint payload truncated");
  nn::Matrix m(rows, cols);
  std::size_t pos = offset;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c, pos += 8) m(r, c) = std::bit_cast<double>(get_u64(payload, pos));
  }
  return m;
}

MetricRecord metric_from_json(const json& j) {
  return {j.at("step").get<int>(), j.at("split").get<std::string>(), j.at("o_acc").get<double>(),
          j.at("wosa").get<double>(), j.at("loss").get<double>()};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string payload;
  json tensors = json::array();
  for (const auto& p : ckpt.params.all()) {
    tensors.push_back({{"name", p.name},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()},
                       {"dtype", "f64le"},
                       {"group", p.group == nn::ParamGroup::lora ? "lora" : "base"},
                       {"trainable", p.trainable},
                       {"offset", payload.size()}});
    put_matrix(payload, p.value);
  }
  json adapters = json::array();
  for (const auto& a : ckpt.params.adapters()) {
    adapters.push_back({{"base", ckpt.params.at(a.base).name},
                        {"a", ckpt.params.at(a.a).name},
                        {"b", ckpt.params.at(a.b).name},
                        {"scale", a.scale}});
  }
  json optimizer = nullptr;
  if (!ckpt.adam_m.empty()) {
    if (ckpt.adam_m.size() != ckpt.params.size() || ckpt.adam_v.size() != ckpt.params.size()) {
      throw ShapeError("checkpoint optimizer state does not match parameters");
    }
    json moments = json::array();
    for (std::size_t i = 0; i < ckpt.adam_m.size(); ++i) {
      const std::size_t m_off = payload.size();
      put_matrix(payload, ckpt.adam_m[i]);
      const std::size_t v_off = payload.size();
      put_matrix(payload, ckpt.adam_v[i]);
      moments.push_back({{"m_offset", m_off}, {"v_offset", v_off}});
    }
    optimizer = {{"steps", ckpt.optimizer_steps}, {"moments", moments}};
  }
  json metrics = json::array();
  for (const auto& m : ckpt.metrics) metrics.push_back(to_json(m));

  const json manifest{{"format", "smart-checkpoint"},
                      {"version", 1},
                      {"role", std::string(role_name(ckpt.role))},
                      {"model", to_json(ckpt.model)},
                      {"step", ckpt.step},
                      {"train_config", ckpt.train_config},
                      {"run_config", ckpt.run_config},
                      {"metrics", metrics},
                      {"tensors", tensors},
                      {"adapters", adapters},
                      {"optimizer", optimizer}};
  const std::string header = manifest.dump();

  std::string blob(kMagic, sizeof kMagic);
  put_u64(blob, header.size());
  blob += header;
  blob += payload;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot write checkpoint " + tmp.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw LoadError("short write on checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw LoadError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string blob = ss.str();
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) {
    throw LoadError(path.string() + " is not a checkpoint");
  }
  const std::uint64_t header_len = get_u64(blob, 8);
  if (16 + header_len > blob.size()) throw LoadError("checkpoint manifest truncated");
  const std::string payload = blob.substr(16 + header_len);

  Checkpoint ckpt;
  try {
    const json manifest = json::parse(blob.substr(16, header_len));
    ckpt.role = parse_role(manifest.at("role").get<std::string>());
    ckpt.model = model_config_from_json(manifest.at("model"));
    ckpt.step = manifest.at("step").get<int>();
    ckpt.train_config = manifest.at("train_config");
    ckpt.run_config = manifest.at("run_config");
    for (const auto& m : manifest.at("metrics")) ckpt.metrics.push_back(metric_from_json(m));
    for (const auto& t : manifest.at("tensors")) {
      const auto group = t.at("group").get<std::string>() == "lora" ? nn::ParamGroup::lora : nn::ParamGroup::base;
      const std::size_t i =
          ckpt.params.add(t.at("name").get<std::string>(),
                          get_matrix(payload, t.at("offset").get<std::size_t>(), t.at("rows").get<Eigen::Index>(),
                                     t.at("cols").get<Eigen::Index>()),
                          group);
      ckpt.params.at(i).trainable = t.at("trainable").get<bool>();
    }
    for (const auto& a : manifest.at("adapters")) {
      ckpt.params.attach_lora({ckpt.params.index(a.at("base").get<std::string>()),
                               ckpt.params.index(a.at("a").get<std::string>()),
                               ckpt.params.index(a.at("b").get<std::string>()), a.at("scale").get<double>()});
    }
    const auto& opt = manifest.at("optimizer");
    if (!opt.is_null()) {
      ckpt.optimizer_steps = opt.at("steps").get<int>();
      const auto& moments = opt.at("moments");
      if (moments.size() != ckpt.params.size()) throw LoadError("optimizer state does not match parameters");
      for (std::size_t i = 0; i < moments.size(); ++i) {
        const auto& value = ckpt.params.at(i).value;
        ckpt.adam_m.push_back(get_matrix(payload, moments[i].at("m_offset"), value.rows(), value.cols()));
        ckpt.adam_v.push_back(get_matrix(payload, moments[i].at("v_offset"), value.rows(), value.cols()));
      }
    }
  } catch (const LoadError&) {
    throw;
  } catch (const std::exception& e) {
    throw LoadError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return ckpt;
}

ModelAssembly assembly_from_checkpoint(const Checkpoint& ckpt) { return ModelAssembly(ckpt.role, ckpt.model, ckpt.params); }

// ---- fit -------------------------------------------------------------------

double source_o_acc(const ModelAssembly& assembly, const ExampleSource& source, std::vector<std::size_t> indices) {
  if (indices.empty()) throw EvalError("O_acc over an empty set");
  int correct = 0;
  for (std::size_t i : indices) {
    const auto& ex = source.at(i);
    correct += answer_puzzle(assembly, ex.puzzle, ex.caption) == ex.puzzle.gold_option_index ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

namespace {

std::vector<std::size_t> role_indices(const ExampleSource* source, ModelRole role, bool all) {
  std::vector<std::size_t> out;
  if (!source) return out;
  for (std::size_t i = 0; i < source->size(); ++i) {
    if (all || source->role(i) == role) out.push_back(i);
  }
  return out;
}

MetricRecord validate_on(const ModelAssembly& assembly, const ExampleSource& source,
                         const std::vector<std::size_t>& indices, const std::string& split, int step, double loss) {
  double correct_w = 0.0, total_w = 0.0;
  int correct = 0;
  for (std::size_t i : indices) {
    const auto& ex = source.at(i);
    const bool ok = answer_puzzle(assembly, ex.puzzle, ex.caption) == ex.puzzle.gold_option_index;
    correct += ok ? 1 : 0;
    correct_w += ok ? ex.puzzle.weight : 0.0;
    total_w += ex.puzzle.weight;
  }
  MetricRecord m;
  m.step = step;
  m.split = split;
  m.o_acc = static_cast<double>(correct) / static_cast<double>(indices.size());
  m.wosa = 100.0 * correct_w / total_w;
  m.loss = loss;
  return m;
}

}  // namespace

FitResult fit(ModelAssembly& assembly, const FitData& data, const TrainConfig& cfg, const LoraConfig& lora,
              const FitOptions& options) {
  cfg.validate();
  if (!data.train) throw ConfigError("fit: no training data");
  const ModelRole role = assembly.role();
  const auto train_idx = role_indices(data.train, role, cfg.all_categories);
  const auto add_idx = role_indices(data.additional, role, cfg.all_categories);
  if (train_idx.empty()) throw ConfigError("fit: no training instances for the " + std::string(role_name(role)) + " role");

  const ExampleSource* val_source = data.validation ? data.validation : data.train;
  auto val_idx = role_indices(val_source, role, cfg.all_categories);
  if (val_idx.empty()) {
    val_source = data.train;
    val_idx = train_idx;
  }
  const std::string val_split = val_source == data.train ? "train" : "validation";

  std::vector<std::size_t> cls_idx;
  if (role == ModelRole::key_model && cfg.train_classifier && data.classifier) {
    for (std::size_t i = 0; i < data.classifier->size(); ++i) cls_idx.push_back(i);
  }

  if (options.resume) {
    assembly.params() = options.resume->params;
  } else if (lora.enabled && assembly.params().adapters().empty()) {
    lora_wrap(assembly.params(), lora, mix_seed(cfg.seed, 0x10a));
  }

  Adam optimizer(assembly.params(), cfg);
  int start = 0;
  FitResult result;
  if (options.resume) {
    start = options.resume->step;
    result.metrics = options.resume->metrics;
    if (!options.resume->adam_m.empty()) {
      optimizer.first_moments() = options.resume->adam_m;
      optimizer.second_moments() = options.resume->adam_v;
      optimizer.set_steps(options.resume->optimizer_steps);
    }
  }

  MixedSampler sampler(train_idx.size(), add_idx.size(), cfg.batch_size, cfg.mix_ratio, cfg.seed);
  std::optional<MixedSampler> cls_sampler;
  if (!cls_idx.empty()) cls_sampler.emplace(cls_idx.size(), 0, cfg.batch_size, 0.0, mix_seed(cfg.seed, 3));

  const bool primary_driven = sampler.primary_per_batch() > 0;
  const double per_pass = primary_driven ? static_cast<double>(train_idx.size()) / sampler.primary_per_batch()
                                         : static_cast<double>(add_idx.size()) / sampler.additional_per_batch();
  const int steps_per_epoch = std::max(1, static_cast<int>(std::ceil(per_pass)));
  int total_steps = std::max(1, static_cast<int>(std::ceil(cfg.epochs * per_pass)));
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);
  const int eval_every = cfg.eval_every > 0 ? cfg.eval_every : steps_per_epoch;

  std::ofstream metrics_out;
  if (!options.metrics_path.empty()) {
    if (options.metrics_path.has_parent_path()) std::filesystem::create_directories(options.metrics_path.parent_path());
    metrics_out.open(options.metrics_path, options.resume ? std::ios::app : std::ios::trunc);
    if (!metrics_out) throw LoadError("cannot write metrics log " + options.metrics_path.string());
  }

  auto snapshot = [&](int step) {
    Checkpoint c;
    c.role = role;
    c.model = assembly.config();
    c.params = assembly.params();
    c.step = step;
    c.train_config = to_json(cfg);
    c.train_config["lora"] = to_json(lora);
    c.run_config = options.run_config;
    c.metrics = result.metrics;
    c.optimizer_steps = optimizer.steps_taken();
    c.adam_m = optimizer.first_moments();
    c.adam_v = optimizer.second_moments();
    return c;
  };

  // Replay the sampler streams so a resumed run sees the same batches.
  for (int s = 0; s < start; ++s) {
    sampler.next_batch();
    if (cls_sampler) cls_sampler->next_batch();
  }

  std::optional<double> best_score;
  if (options.resume) {
    for (const auto& m : result.metrics) {
      if (!best_score || m.o_acc > *best_score) best_score = m.o_acc;
    }
    result.best = *options.resume;
  }
  double window_loss = 0.0;
  int window = 0;
  for (int s = start; s < total_steps; ++s) {
    std::vector<const TrainExample*> batch;
    std::vector<TrainExample> permuted;
    const auto items = sampler.next_batch();
    permuted.reserve(items.size());
    Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, 4), static_cast<std::uint64_t>(s)));
    for (const auto& item : items) {
      const TrainExample& ex =
          item.additional ? data.additional->at(add_idx[item.index]) : data.train->at(train_idx[item.index]);
      if (cfg.shuffle_options) {
        permuted.push_back(permute_options(ex, shuffle_rng));
        batch.push_back(&permuted.back());
      } else {
        batch.push_back(&ex);
      }
    }
    std::vector<const TrainExample*> cls_batch;
    if (cls_sampler) {
      for (const auto& item : cls_sampler->next_batch()) cls_batch.push_back(&data.classifier->at(cls_idx[item.index]));
    }
    const StepResult step = train_step(assembly, batch, cfg, optimizer, s, cls_batch, options.instruction);
    result.losses.push_back(step.loss);
    window_loss += step.loss;
    ++window;
    if (options.on_step) options.on_step(s, step);

    if ((s + 1) % eval_every == 0 || s + 1 == total_steps) {
      const MetricRecord m = validate_on(assembly, *val_source, val_idx, val_split, s + 1, window_loss / window);
      window_loss = 0.0;
      window = 0;
      result.metrics.push_back(m);
      if (metrics_out) metrics_out << to_json(m).dump() << '\n' << std::flush;
      if (!best_score || m.o_acc > *best_score) {
        best_score = m.o_acc;
        result.best = snapshot(s + 1);
        if (!options.checkpoint_path.empty()) save_checkpoint(options.checkpoint_path, result.best);
      }
    }
  }
  result.best.metrics = result.metrics;
  if (!options.checkpoint_path.empty() && !result.metrics.empty()) save_checkpoint(options.checkpoint_path, result.best);
  return result;
}

}  // namespace smart
