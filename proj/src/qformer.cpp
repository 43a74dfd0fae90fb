#include "smart/qformer.hpp"

#include "smart/errors.hpp"
#include "smart/layers.hpp"

namespace smart {

void QFormerConfig::validate() const {
  if (queries < 1 || dim < 1 || layers < 0 || heads < 1 || ff_hidden < 1 || visual_dim < 1 || output_dim < 1) {
    throw ConfigError("qformer: dimensions must be positive");
  }
  if (dim % heads != 0) throw ConfigError("qformer: dim must be divisible by heads");
}

void init_qformer_params(nn::ParamStore& store, const QFormerConfig& cfg, int vocab_size, Rng& rng) {
  cfg.validate();
  store.add("qformer.queries", layers::gaussian(rng, cfg.queries, cfg.dim, 0.5));
  if (vocab_size > 0) {
    store.add("qformer.instruction_embedding", layers::gaussian(rng, vocab_size, cfg.dim, 0.5));
  }
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "qformer.layer" + std::to_string(l);
    layers::add_norm(store, p + ".sa_norm", cfg.dim);
    layers::add_attention(store, p + ".sa", cfg.dim, cfg.dim, rng);
    layers::add_norm(store, p + ".ca_norm", cfg.dim);
    layers::add_attention(store, p + ".ca", cfg.dim, cfg.visual_dim, rng);
    layers::add_norm(store, p + ".ff_norm", cfg.dim);
    layers::add_feed_forward(store, p + ".ff", cfg.dim, cfg.ff_hidden, rng);
  }
  layers::add_norm(store, "qformer.final_norm", cfg.dim);
  layers::add_linear(store, "qformer.proj", cfg.dim, cfg.output_dim, rng);
}

nn::Var qformer_forward(nn::Tape& tape, const QFormerConfig& cfg, nn::Var fused_tokens,
                        nn::Var instruction_tokens, QFormerTrace* trace) {
  if (fused_tokens.cols() != cfg.visual_dim) {
    throw ShapeError("qformer: fused tokens have " + std::to_string(fused_tokens.cols()) +
                     " columns, expected " + std::to_string(cfg.visual_dim));
  }
  const bool has_instruction = instruction_tokens.rows() > 0;
  if (has_instruction && instruction_tokens.cols() != cfg.dim) {
    throw ShapeError("qformer: instruction tokens must have d_q columns");
  }
  if (!fused_tokens.value().allFinite() || (has_instruction && !instruction_tokens.value().allFinite())) {
    throw NumericError("qformer: non-finite input tokens");
  }
  if (trace) {
    trace->self_attention.assign(static_cast<std::size_t>(cfg.layers), {});
    trace->cross_attention.assign(static_cast<std::size_t>(cfg.layers), {});
  }

  nn::Var state = tape.param("qformer.queries");
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "qformer.layer" + std::to_string(l);
    auto* sa_probe = trace ? &trace->self_attention[static_cast<std::size_t>(l)] : nullptr;
    auto* ca_probe = trace ? &trace->cross_attention[static_cast<std::size_t>(l)] : nullptr;

    nn::Var normed = layers::norm(tape, p + ".sa_norm", state);
    nn::Var context = normed;
    if (has_instruction) {
      context = nn::concat_rows({normed, layers::norm(tape, p + ".sa_norm", instruction_tokens)});
    }
    state = nn::add(state, layers::attention(tape, p + ".sa", normed, context, cfg.heads, false, sa_probe));

    normed = layers::norm(tape, p + ".ca_norm", state);
    state = nn::add(state, layers::attention(tape, p + ".ca", normed, fused_tokens, cfg.heads, false, ca_probe));

    normed = layers::norm(tape, p + ".ff_norm", state);
    state = nn::add(state, layers::feed_forward(tape, p + ".ff", normed));
  }
  nn::Var out = layers::norm(tape, "qformer.final_norm", state);
  return layers::linear(tape, "qformer.proj.weight", "qformer.proj.bias", out);
}

nn::Matrix qformer_forward(const nn::ParamStore& params, const QFormerConfig& cfg, const nn::Matrix& fused_tokens,
                           const nn::Matrix& instruction_tokens, QFormerTrace* trace) {
  nn::Tape tape(&params);
  nn::Var fused = tape.constant(fused_tokens);
  nn::Var instruction = tape.constant(instruction_tokens.size() ? instruction_tokens
                                                                : nn::Matrix(0, cfg.dim));
  return qformer_forward(tape, cfg, fused, instruction, trace).value();
}

}  // namespace smart
