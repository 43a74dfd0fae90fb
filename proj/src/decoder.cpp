#include "smart/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "smart/errors.hpp"
#include "smart/layers.hpp"

namespace smart {

std::string_view role_name(ModelRole role) noexcept {
  return role == ModelRole::key_model ? "key" : "value";
}

ModelRole parse_role(std::string_view name) {
  if (name == "key" || name == "key_model") return ModelRole::key_model;
  if (name == "value" || name == "value_model") return ModelRole::value_model;
  throw ConfigError("unknown model role '" + std::string(name) + "' (expected key or value)");
}

ModelRole role_for_kind(AnswerKind kind) noexcept {
  return kind == AnswerKind::key ? ModelRole::key_model : ModelRole::value_model;
}

void DecoderConfig::validate() const {
  if (dim < 1 || layers < 0 || heads < 1 || ff_hidden < 1 || max_prompt < 1 || max_generated < 1) {
    throw ConfigError("decoder: dimensions must be positive");
  }
  if (dim % heads != 0) throw ConfigError("decoder: dim must be divisible by heads");
  if (caption_tokens < 0 || question_tokens < 1 || option_slot < 1) {
    throw ConfigError("decoder: invalid prompt budgets");
  }
}

void ModelConfig::reconcile() {
  qformer.visual_dim = vision.dim;
  qformer.output_dim = decoder.dim;
}

void ModelConfig::validate() const {
  vision.validate();
  qformer.validate();
  decoder.validate();
  if (qformer.visual_dim != vision.dim || qformer.output_dim != decoder.dim) {
    throw ConfigError("model: bridge dimensions do not match vision/decoder dimensions");
  }
}

namespace {

const Tokenizer& tok() { return Tokenizer::instance(); }

// Exactly `width` tokens: truncated, or PAD-filled on the right.
void append_fixed(std::vector<int>& out, std::vector<int> tokens, int width) {
  tokens.resize(static_cast<std::size_t>(width), Tokenizer::kPad);
  out.insert(out.end(), tokens.begin(), tokens.end());
}

std::vector<int> prompt_header(std::string_view question, std::string_view caption, const DecoderConfig& cfg) {
  std::vector<int> out{Tokenizer::kBos};
  const auto caption_tokens = tok().encode(caption);
  if (!caption_tokens.empty() && cfg.caption_tokens > 0) {
    out.push_back(Tokenizer::kCaptionBlock);
    append_fixed(out, caption_tokens, cfg.caption_tokens);
  }
  out.push_back(Tokenizer::kQuestionBlock);
  append_fixed(out, tok().encode(question), cfg.question_tokens);
  return out;
}

// Keeps the output inside -?[0-9]*(\.[0-9]+)?: '-' only first, one '.',
// a digit after '.', and no '.' on the last step.
bool numeric_token_allowed(const std::string& out, int token, bool last_step) {
  const bool has_dot = out.find('.') != std::string::npos;
  const bool after_dot = !out.empty() && out.back() == '.';
  if (token == Tokenizer::kEos) return !after_dot;
  if (token == Tokenizer::kMinus) return out.empty();
  if (token == Tokenizer::kDot) return !has_dot && !last_step;
  return true;
}

}  // namespace

std::vector<int> build_prompt(std::string_view question, std::string_view caption, const Options& options,
                              ModelRole role, const DecoderConfig& cfg) {
  std::vector<int> out = prompt_header(question, caption, cfg);
  if (role == ModelRole::key_model) {
    out.push_back(Tokenizer::kOptionsBlock);
    for (std::size_t i = 0; i < kNumOptions; ++i) {
      out.push_back(Tokenizer::option_token(static_cast<int>(i)));
      auto slot = tok().encode(options[i]);
      slot.resize(static_cast<std::size_t>(cfg.option_slot), Tokenizer::kPad);
      out.insert(out.end(), slot.begin(), slot.end());
    }
  } else {
    out.push_back(Tokenizer::kValueBlock);
    const auto instruction = tok().encode("answer with a number");
    out.insert(out.end(), instruction.begin(), instruction.end());
  }
  out.push_back(Tokenizer::kAnswer);
  return out;
}

std::vector<int> build_classification_prompt(std::string_view question, std::string_view caption,
                                             std::string_view instruction, const DecoderConfig& cfg) {
  std::vector<int> out = prompt_header(question, caption, cfg);
  out.push_back(Tokenizer::kClassifyBlock);
  const auto tokens = tok().encode(instruction);
  out.insert(out.end(), tokens.begin(), tokens.end());
  out.push_back(Tokenizer::kAnswer);
  return out;
}

void init_decoder_params(nn::ParamStore& store, const DecoderConfig& cfg, int vocab_size, Rng& rng) {
  cfg.validate();
  store.add("decoder.token_embedding", layers::gaussian(rng, vocab_size, cfg.dim, 0.5));
  store.add("decoder.prompt_position", layers::gaussian(rng, cfg.max_prompt, cfg.dim, 0.5));
  store.add("decoder.generated_position", layers::gaussian(rng, cfg.max_generated, cfg.dim, 0.1));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    layers::add_norm(store, p + ".sa_norm", cfg.dim);
    layers::add_attention(store, p + ".sa", cfg.dim, cfg.dim, rng);
    layers::add_norm(store, p + ".ff_norm", cfg.dim);
    layers::add_feed_forward(store, p + ".ff", cfg.dim, cfg.ff_hidden, rng);
  }
  layers::add_norm(store, "decoder.final_norm", cfg.dim);
  layers::add_linear(store, "decoder.output", cfg.dim, vocab_size, rng);
}

ModelAssembly::ModelAssembly(ModelRole role, ModelConfig cfg, std::uint64_t seed) : role_(role), cfg_(cfg) {
  cfg_.reconcile();
  cfg_.validate();
  const int vocab = tok().vocab_size();
  Rng rng(seed);
  init_vision_params(params_, cfg_.vision, rng);
  init_qformer_params(params_, cfg_.qformer, vocab, rng);
  init_decoder_params(params_, cfg_.decoder, vocab, rng);
}

ModelAssembly::ModelAssembly(ModelRole role, ModelConfig cfg, nn::ParamStore params)
    : role_(role), cfg_(cfg), params_(std::move(params)) {
  cfg_.reconcile();
  cfg_.validate();
}

nn::Var encode_visual_prefix(nn::Tape& tape, const ModelConfig& cfg, const PuzzleInstance& puzzle) {
  nn::Var patches = encode_patches(tape, puzzle.image, cfg.vision);
  nn::Var segments = encode_segments(tape, puzzle.image, cfg.vision, cfg.vision.segments).tokens;
  nn::Var fused = fuse(patches, segments);

  auto question = tok().encode(puzzle.question);
  if (question.size() > static_cast<std::size_t>(cfg.decoder.question_tokens)) {
    question.resize(static_cast<std::size_t>(cfg.decoder.question_tokens));
  }
  nn::Var instruction = question.empty()
                            ? tape.constant(nn::Matrix(0, cfg.qformer.dim))
                            : nn::gather_rows(tape.param("qformer.instruction_embedding"), question);
  return qformer_forward(tape, cfg.qformer, fused, instruction);
}

nn::Var decoder_logits(nn::Tape& tape, const DecoderConfig& cfg, nn::Var prefix, const std::vector<int>& prompt,
                       const std::vector<int>& generated, const std::vector<int>& rows) {
  if (prefix.cols() != cfg.dim) throw ShapeError("decoder: prefix width differs from decoder dim");
  if (prompt.empty()) throw ShapeError("decoder: empty prompt");
  nn::Var table = tape.param("decoder.token_embedding");

  std::vector<int> prompt_positions(prompt.size());
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    prompt_positions[i] = std::min<int>(static_cast<int>(prompt.size() - 1 - i), cfg.max_prompt - 1);
  }
  std::vector<nn::Var> parts{prefix};
  parts.push_back(nn::add(nn::gather_rows(table, prompt),
                          nn::gather_rows(tape.param("decoder.prompt_position"), prompt_positions)));
  if (!generated.empty()) {
    std::vector<int> gen_positions(generated.size());
    for (std::size_t i = 0; i < generated.size(); ++i) {
      gen_positions[i] = std::min<int>(static_cast<int>(i), cfg.max_generated - 1);
    }
    parts.push_back(nn::add(nn::gather_rows(table, generated),
                            nn::gather_rows(tape.param("decoder.generated_position"), gen_positions)));
  }
  nn::Var x = nn::concat_rows(parts);

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    nn::Var normed = layers::norm(tape, p + ".sa_norm", x);
    x = nn::add(x, layers::attention(tape, p + ".sa", normed, normed, cfg.heads, true));
    normed = layers::norm(tape, p + ".ff_norm", x);
    x = nn::add(x, layers::feed_forward(tape, p + ".ff", normed));
  }

  std::vector<nn::Var> picked;
  picked.reserve(rows.size());
  for (int r : rows) picked.push_back(nn::slice_rows(x, r, 1));
  nn::Var selected = nn::concat_rows(picked);
  selected = layers::norm(tape, "decoder.final_norm", selected);
  return layers::linear(tape, "decoder.output.weight", "decoder.output.bias", selected);
}

nn::Var first_position_logits(nn::Tape& tape, const ModelConfig& cfg, const PuzzleInstance& puzzle,
                              const std::vector<int>& prompt) {
  nn::Var prefix = encode_visual_prefix(tape, cfg, puzzle);
  const int last = static_cast<int>(prefix.rows()) + static_cast<int>(prompt.size()) - 1;
  return decoder_logits(tape, cfg.decoder, prefix, prompt, {}, {last});
}

KeyPrediction decode_key(const ModelAssembly& assembly, const PuzzleInstance& puzzle, const std::string& caption) {
  if (assembly.role() != ModelRole::key_model) throw PreconditionError("decode_key needs a key model");
  const auto& cfg = assembly.config();
  nn::Tape tape(&assembly.params());
  const auto prompt = build_prompt(puzzle.question, caption, puzzle.options, ModelRole::key_model, cfg.decoder);
  const nn::Matrix& logits = first_position_logits(tape, cfg, puzzle, prompt).value();

  KeyPrediction out;
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < kNumOptions; ++i) {
    out.logits[i] = logits(0, Tokenizer::option_token(static_cast<int>(i)));
    m = std::max(m, out.logits[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < kNumOptions; ++i) {
    out.distribution[i] = std::exp(out.logits[i] - m);
    total += out.distribution[i];
  }
  for (auto& p : out.distribution) p /= total;
  out.option_index = argmax_lowest(out.logits);
  return out;
}

std::string decode_value(const ModelAssembly& assembly, const PuzzleInstance& puzzle, const std::string& caption,
                         int max_len) {
  if (assembly.role() != ModelRole::value_model) throw PreconditionError("decode_value needs a value model");
  if (max_len < 1) throw PreconditionError("decode_value: max_len must be >= 1");
  const auto& cfg = assembly.config();
  nn::Tape tape(&assembly.params());
  const auto prompt = build_prompt(puzzle.question, caption, puzzle.options, ModelRole::value_model, cfg.decoder);
  nn::Var prefix = encode_visual_prefix(tape, cfg, puzzle);
  const auto& allowed = Tokenizer::numeric_vocabulary();

  std::vector<int> generated;
  std::string out;
  for (int step = 0; step < max_len; ++step) {
    const int row = static_cast<int>(prefix.rows() + prompt.size() + generated.size()) - 1;
    const nn::Matrix& logits = decoder_logits(tape, cfg.decoder, prefix, prompt, generated, {row}).value();
    const bool last_step = step + 1 == max_len;
    int best = -1;
    for (int t : allowed) {
      if (!numeric_token_allowed(out, t, last_step)) continue;
      if (best < 0 || logits(0, t) > logits(0, best)) best = t;
    }
    if (best == Tokenizer::kEos) break;
    out.push_back(Tokenizer::numeric_char(best));
    generated.push_back(best);
  }
  return out;
}

int answer_puzzle(const ModelAssembly& assembly, const PuzzleInstance& puzzle, const std::string& caption) {
  if (assembly.role() == ModelRole::key_model) return decode_key(assembly, puzzle, caption).option_index;
  const std::string value = decode_value(assembly, puzzle, caption, assembly.config().decoder.max_generated);
  return select_option_by_value(value, puzzle.options);
}

int ModelAssembly::answer(const PuzzleInstance& puzzle, const std::string& caption) const {
  return answer_puzzle(*this, puzzle, caption);
}

std::array<double, kNumCategories> ModelAssembly::category_logits(const PuzzleInstance& puzzle,
                                                                  const std::string& caption,
                                                                  std::string_view instruction) const {
  nn::Tape tape(&params_);
  const auto prompt = build_classification_prompt(puzzle.question, caption, instruction, cfg_.decoder);
  const nn::Matrix& logits = first_position_logits(tape, cfg_, puzzle, prompt).value();
  std::array<double, kNumCategories> out{};
  for (SkillCategory c : kAllCategories) {
    out[static_cast<std::size_t>(category_index(c))] = logits(0, Tokenizer::category_token(c));
  }
  return out;
}

}  // namespace smart
