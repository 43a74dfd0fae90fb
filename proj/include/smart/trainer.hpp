#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "smart/dataset.hpp"
#include "smart/decoder.hpp"
#include "smart/random.hpp"
#include "smart/tape.hpp"

namespace smart {

struct TrainConfig {
  double base_lr = 1e-5;
  double lora_lr = 1e-6;
  int batch_size = 16;
  double epochs = 2.0;
  std::uint64_t seed = 0;
  double mix_ratio = 0.0;  // share of each batch drawn from additional data
  int max_steps = 0;       // 0: no cap beyond `epochs`
  int eval_every = 0;      // steps between validations; 0: once per epoch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool all_categories = false;    // ablation: ignore the per-role category filter
  bool train_classifier = true;   // key role: category-token loss on the router prompt
  double classifier_weight = 1.0;
  // Randomly permute the five options (and the gold index) of every sampled
  // answer example, so the model cannot tie answers to slot positions.
  bool shuffle_options = false;

  void validate() const;
};

struct LoraConfig {
  bool enabled = false;
  int rank = 4;
  double alpha = 8.0;
  // Matched as dotted name suffixes ("sa.wq" hits "qformer.layer0.sa.wq").
  std::vector<std::string> targets{"sa.wq", "sa.wv", "ca.wq", "ca.wv"};
  bool freeze_base = true;
  double init_std = 0.02;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const LoraConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Adds B (m x r, zeros) and A (r x n, Gaussian) for every weight matched by
// cfg.targets and attaches them as adapters with scale alpha / r. Returns the
// number of trainable scalars added. Throws ConfigError for a target that
// matches nothing or an already adapted weight.
std::size_t lora_wrap(nn::ParamStore& params, const LoraConfig& cfg, std::uint64_t seed);

// A puzzle prepared for training, with the caption the model will see.
struct TrainExample {
  PuzzleInstance puzzle;
  std::string caption;
  ModelRole role = ModelRole::key_model;
  bool additional = false;
};

TrainExample make_example(PuzzleInstance puzzle, std::string caption);

// Converts external records usable by `role`: key role takes multiple-choice
// records with at most five options; value role takes records whose answer
// parses as a number. Missing options are padded with "". Images are read
// relative to `base_dir`; records without one get a blank image.
std::vector<TrainExample> examples_from_external(const std::vector<ExternalRecord>& records,
                                                 const std::filesystem::path& base_dir, ModelRole role,
                                                 int image_size);

// Read access to training data. category()/role() must not count as touching
// an instance; only at() does.
class ExampleSource {
 public:
  virtual ~ExampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual ModelRole role(std::size_t i) const = 0;
  virtual const TrainExample& at(std::size_t i) const = 0;
};

class VectorSource : public ExampleSource {
 public:
  VectorSource() = default;
  explicit VectorSource(std::vector<TrainExample> items) : items_(std::move(items)) {}
  std::size_t size() const override { return items_.size(); }
  ModelRole role(std::size_t i) const override { return items_.at(i).role; }
  const TrainExample& at(std::size_t i) const override { return items_.at(i); }

 private:
  std::vector<TrainExample> items_;
};

// Deterministic batch stream. Each batch holds round(mix_ratio * batch_size)
// additional items (0 when there is no additional data) and primary items
// for the rest; both sides walk their own seeded shuffles and reshuffle at
// every pass.
class MixedSampler {
 public:
  struct Item {
    bool additional = false;
    std::size_t index = 0;
  };

  MixedSampler(std::size_t n_primary, std::size_t n_additional, int batch_size, double mix_ratio, std::uint64_t seed);

  std::vector<Item> next_batch();
  int additional_per_batch() const { return n_add_batch_; }
  int primary_per_batch() const { return batch_size_ - n_add_batch_; }

 private:
  struct Stream {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    Rng rng;
    explicit Stream(std::uint64_t seed) : rng(seed) {}
    std::size_t next();
  };

  int batch_size_;
  int n_add_batch_;
  Stream primary_;
  Stream additional_;
};

// Adam with two learning rates: LoRA factors use lora_lr, every other
// trainable parameter base_lr. Frozen parameters are never touched.
class Adam {
 public:
  Adam(const nn::ParamStore& params, const TrainConfig& cfg);

  void step(nn::ParamStore& params, const nn::Gradients& grads);
  int steps_taken() const { return t_; }

  // Optimizer state for checkpoints.
  std::vector<nn::Matrix>& first_moments() { return m_; }
  std::vector<nn::Matrix>& second_moments() { return v_; }
  const std::vector<nn::Matrix>& first_moments() const { return m_; }
  const std::vector<nn::Matrix>& second_moments() const { return v_; }
  void set_steps(int t) { t_ = t; }

 private:
  double base_lr_, lora_lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<nn::Matrix> m_, v_;
};

// Copy of `example` with its options permuted by `rng`; gold follows its option.
TrainExample permute_options(const TrainExample& example, Rng& rng);

// Per-example losses. Key role: cross-entropy over the five option tokens
// at the first answer position. Value role: cross-entropy over the numeric
// vocabulary summed over the gold answer's tokens and EOS (teacher forcing).
nn::Var example_loss(nn::Tape& tape, const ModelConfig& cfg, ModelRole role, const TrainExample& example);
// Cross-entropy over the eight category tokens on the router prompt.
nn::Var classification_loss(nn::Tape& tape, const ModelConfig& cfg, const TrainExample& example,
                            std::string_view instruction);

struct StepResult {
  double loss = 0.0;             // mean answer loss over the batch
  double classifier_loss = 0.0;  // mean, 0 without a classifier batch
};

// One optimizer step on mean(answer loss) + classifier_weight * mean(classifier loss).
// A non-finite loss throws NumericError naming the step and batch ids.
StepResult train_step(ModelAssembly& assembly, const std::vector<const TrainExample*>& batch, const TrainConfig& cfg,
                      Adam& optimizer, int step_index, const std::vector<const TrainExample*>& classifier_batch = {},
                      std::string_view instruction = kDefaultRouterPrompt);

struct MetricRecord {
  int step = 0;
  std::string split;
  double o_acc = 0.0;
  double wosa = 0.0;
  double loss = 0.0;
};

nlohmann::json to_json(const MetricRecord& m);

// Checkpoint archive layout (all integers little-endian):
//   8 bytes  magic "SMRTCKP1"
//   8 bytes  u64 manifest length N
//   N bytes  JSON manifest
//   payload  f64 tensors, row-major, at the byte offsets listed in the manifest
struct Checkpoint {
  ModelRole role = ModelRole::key_model;
  ModelConfig model;
  nn::ParamStore params;
  int step = 0;
  nlohmann::json train_config = nlohmann::json::object();
  nlohmann::json run_config = nlohmann::json::object();
  std::vector<MetricRecord> metrics;
  // Adam moments aligned with params; empty when not stored.
  int optimizer_steps = 0;
  std::vector<nn::Matrix> adam_m;
  std::vector<nn::Matrix> adam_v;
};

// Writes to a temporary sibling and renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
ModelAssembly assembly_from_checkpoint(const Checkpoint& ckpt);

struct FitData {
  const ExampleSource* train = nullptr;
  const ExampleSource* additional = nullptr;  // optional
  const ExampleSource* validation = nullptr;  // optional; falls back to train
  const ExampleSource* classifier = nullptr;  // optional, key role only
};

struct FitOptions {
  std::filesystem::path checkpoint_path;  // empty: do not save
  std::filesystem::path metrics_path;     // empty: do not log
  nlohmann::json run_config = nlohmann::json::object();
  std::string instruction = std::string(kDefaultRouterPrompt);
  const Checkpoint* resume = nullptr;
  std::function<void(int step, const StepResult&)> on_step;
};

struct FitResult {
  Checkpoint best;
  std::vector<double> losses;  // per step
  std::vector<MetricRecord> metrics;
};

// O_acc of `assembly` over a source (answers via answer_puzzle).
double source_o_acc(const ModelAssembly& assembly, const ExampleSource& source, std::vector<std::size_t> indices);

// Trains `assembly` in place on the instances matching its role (all of them
// with cfg.all_categories), validating periodically and keeping the best
// validation checkpoint (earliest on ties), which is also written to disk.
FitResult fit(ModelAssembly& assembly, const FitData& data, const TrainConfig& cfg, const LoraConfig& lora,
              const FitOptions& options = {});

}  // namespace smart
