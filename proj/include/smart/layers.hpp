#pragma once

// Transformer building blocks shared by the bridge and the decoder. Each
// block reads its parameters from the tape's store under a name prefix, so
// LoRA adapters attached to e.g. "<prefix>.wq" are picked up transparently.

#include <string>

#include "smart/random.hpp"
#include "smart/tape.hpp"

namespace smart::layers {

nn::Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std);

void add_norm(nn::ParamStore& store, const std::string& prefix, int dim);
void add_linear(nn::ParamStore& store, const std::string& prefix, int in, int out, Rng& rng);
// Projections <prefix>.{wq,wk,wv,wo} with biases b{q,k,v,o}.
void add_attention(nn::ParamStore& store, const std::string& prefix, int query_dim, int kv_dim, Rng& rng);
void add_feed_forward(nn::ParamStore& store, const std::string& prefix, int dim, int hidden, Rng& rng);

nn::Var norm(nn::Tape& tape, const std::string& prefix, nn::Var x);
nn::Var linear(nn::Tape& tape, const std::string& weight, const std::string& bias, nn::Var x);
nn::Var attention(nn::Tape& tape, const std::string& prefix, nn::Var query_input, nn::Var kv_input,
                  int heads, bool causal, nn::AttentionProbe* probe = nullptr);
nn::Var feed_forward(nn::Tape& tape, const std::string& prefix, nn::Var x);

}  // namespace smart::layers
