#pragma once

#include <string>
#include <vector>

#include "smart/random.hpp"
#include "smart/tape.hpp"

namespace smart {

struct QFormerConfig {
  int queries = 8;      // N_q
  int dim = 32;         // d_q
  int layers = 2;       // L
  int heads = 4;        // n_h
  int ff_hidden = 64;
  int visual_dim = 32;  // column count of the fused visual tokens
  int output_dim = 32;  // d_dec

  void validate() const;
};

// Registers query embeddings, per-layer blocks and the output projection
// under "qformer.*". When vocab_size > 0 an instruction embedding table
// "qformer.instruction_embedding" (vocab x d_q) is added too.
void init_qformer_params(nn::ParamStore& store, const QFormerConfig& cfg, int vocab_size, Rng& rng);

struct QFormerTrace {
  // [layer] -> per-head probabilities of the self- and cross-attention
  std::vector<nn::AttentionProbe> self_attention;
  std::vector<nn::AttentionProbe> cross_attention;
};

// Per layer, pre-norm residual sublayers:
//   1. self-attention: queries attend over [query states; instruction tokens],
//      only query states are updated;
//   2. cross-attention: queries attend over the fused visual tokens;
//   3. feed-forward.
// A final layer norm and the d_q -> d_dec projection produce N_q x d_dec.
nn::Var qformer_forward(nn::Tape& tape, const QFormerConfig& cfg, nn::Var fused_tokens,
                        nn::Var instruction_tokens, QFormerTrace* trace = nullptr);

// Value-level convenience wrapper; `instruction_tokens` may have zero rows.
nn::Matrix qformer_forward(const nn::ParamStore& params, const QFormerConfig& cfg,
                           const nn::Matrix& fused_tokens, const nn::Matrix& instruction_tokens,
                           QFormerTrace* trace = nullptr);

}  // namespace smart
