#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "smart/puzzle_core.hpp"
#include "smart/qformer.hpp"
#include "smart/tape.hpp"
#include "smart/tokenizer.hpp"
#include "smart/vision.hpp"

namespace smart {

enum class ModelRole { key_model, value_model };

std::string_view role_name(ModelRole role) noexcept;
ModelRole parse_role(std::string_view name);
ModelRole role_for_kind(AnswerKind kind) noexcept;

struct DecoderConfig {
  int dim = 32;  // d_dec
  int layers = 2;
  int heads = 4;
  int ff_hidden = 64;
  int max_prompt = 128;   // distinct prompt position embeddings
  int max_generated = 8;  // distinct generated-token position embeddings
  int caption_tokens = 24;
  int question_tokens = 16;
  int option_slot = 4;  // tokens per option in the key prompt, PAD-filled

  void validate() const;
};

struct ModelConfig {
  VisionConfig vision;
  QFormerConfig qformer;
  DecoderConfig decoder;

  // Ties qformer.visual_dim to vision.dim and qformer.output_dim to decoder.dim.
  void reconcile();
  void validate() const;
};

// Prompt layout (every block is introduced by its marker token):
//   <bos> [<caption> caption] <question> question
//   key role:   <options> <A> slot ... <E> slot <answer>
//   value role: <value> "answer with a number" <answer>
// The caption block is omitted for an empty caption. Caption, question and
// each option occupy fixed widths (`caption_tokens`, `question_tokens`,
// `option_slot`; truncated or PAD-filled), so every block sits at a fixed
// offset and a position embedding alone identifies, say, "first caption
// word" or "option C".
std::vector<int> build_prompt(std::string_view question, std::string_view caption, const Options& options,
                              ModelRole role, const DecoderConfig& cfg);

// Same header, then <classify> instruction <answer>.
std::vector<int> build_classification_prompt(std::string_view question, std::string_view caption,
                                             std::string_view instruction, const DecoderConfig& cfg);

inline constexpr std::string_view kDefaultRouterPrompt =
    "Which skill does this puzzle require? logic, counting, spatial reasoning, path tracing, "
    "pattern finding, arithmetic, measurement, algebra";

// Anything that can answer a puzzle and score its skill category; the
// router dispatches over this interface.
class Specialist {
 public:
  virtual ~Specialist() = default;
  virtual ModelRole role() const = 0;
  virtual int answer(const PuzzleInstance& puzzle, const std::string& caption) const = 0;
  virtual std::array<double, kNumCategories> category_logits(const PuzzleInstance& puzzle,
                                                             const std::string& caption,
                                                             std::string_view instruction) const = 0;
};

class ModelAssembly : public Specialist {
 public:
  ModelAssembly(ModelRole role, ModelConfig cfg, std::uint64_t seed);
  ModelAssembly(ModelRole role, ModelConfig cfg, nn::ParamStore params);

  ModelRole role() const override { return role_; }
  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  int answer(const PuzzleInstance& puzzle, const std::string& caption) const override;
  std::array<double, kNumCategories> category_logits(const PuzzleInstance& puzzle, const std::string& caption,
                                                     std::string_view instruction) const override;

 private:
  ModelRole role_;
  ModelConfig cfg_;
  nn::ParamStore params_;
};

void init_decoder_params(nn::ParamStore& store, const DecoderConfig& cfg, int vocab_size, Rng& rng);

// Vision streams -> fusion -> bridge: the N_q x d_dec prefix for the decoder.
// The question tokens serve as the bridge's instruction tokens.
nn::Var encode_visual_prefix(nn::Tape& tape, const ModelConfig& cfg, const PuzzleInstance& puzzle);

// Causal decoder over [prefix; prompt; generated]. Returns vocabulary logits
// for the requested sequence rows (indices into the concatenated sequence).
nn::Var decoder_logits(nn::Tape& tape, const DecoderConfig& cfg, nn::Var prefix, const std::vector<int>& prompt,
                       const std::vector<int>& generated, const std::vector<int>& rows);

// 1 x V logits at the first generation position.
nn::Var first_position_logits(nn::Tape& tape, const ModelConfig& cfg, const PuzzleInstance& puzzle,
                              const std::vector<int>& prompt);

struct KeyPrediction {
  int option_index = 0;
  std::array<double, kNumOptions> distribution{};
  std::array<double, kNumOptions> logits{};
};

KeyPrediction decode_key(const ModelAssembly& assembly, const PuzzleInstance& puzzle, const std::string& caption);

// Greedy decoding over digits, '-', '.', EOS; all other tokens are masked,
// and the numeric tokens are masked so the result always matches
// -?[0-9]*(\.[0-9]+)? (possibly empty).
std::string decode_value(const ModelAssembly& assembly, const PuzzleInstance& puzzle, const std::string& caption,
                         int max_len);

int answer_puzzle(const ModelAssembly& assembly, const PuzzleInstance& puzzle, const std::string& caption);

// Index of the largest entry; ties go to the lowest index.
template <class Range>
int argmax_lowest(const Range& values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(std::size(values)); ++i) {
    if (values[static_cast<std::size_t>(i)] > values[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

}  // namespace smart
