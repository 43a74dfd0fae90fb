#include "smart/layers.hpp"

#include <cmath>

namespace smart::layers {

nn::Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std) {
  nn::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
  return m;
}

void add_norm(nn::ParamStore& store, const std::string& prefix, int dim) {
  store.add(prefix + ".gain", nn::Matrix::Ones(1, dim));
  store.add(prefix + ".bias", nn::Matrix::Zero(1, dim));
}

void add_linear(nn::ParamStore& store, const std::string& prefix, int in, int out, Rng& rng) {
  store.add(prefix + ".weight", gaussian(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))));
  store.add(prefix + ".bias", nn::Matrix::Zero(1, out));
}

void add_attention(nn::ParamStore& store, const std::string& prefix, int query_dim, int kv_dim, Rng& rng) {
  const double q_std = 1.0 / std::sqrt(static_cast<double>(query_dim));
  const double kv_std = 1.0 / std::sqrt(static_cast<double>(kv_dim));
  store.add(prefix + ".wq", gaussian(rng, query_dim, query_dim, q_std));
  store.add(prefix + ".bq", nn::Matrix::Zero(1, query_dim));
  store.add(prefix + ".wk", gaussian(rng, kv_dim, query_dim, kv_std));
  store.add(prefix + ".bk", nn::Matrix::Zero(1, query_dim));
  store.add(prefix + ".wv", gaussian(rng, kv_dim, query_dim, kv_std));
  store.add(prefix + ".bv", nn::Matrix::Zero(1, query_dim));
  store.add(prefix + ".wo", gaussian(rng, query_dim, query_dim, q_std));
  store.add(prefix + ".bo", nn::Matrix::Zero(1, query_dim));
}

void add_feed_forward(nn::ParamStore& store, const std::string& prefix, int dim, int hidden, Rng& rng) {
  store.add(prefix + ".w1", gaussian(rng, dim, hidden, 1.0 / std::sqrt(static_cast<double>(dim))));
  store.add(prefix + ".b1", nn::Matrix::Zero(1, hidden));
  store.add(prefix + ".w2", gaussian(rng, hidden, dim, 1.0 / std::sqrt(static_cast<double>(hidden))));
  store.add(prefix + ".b2", nn::Matrix::Zero(1, dim));
}

nn::Var norm(nn::Tape& tape, const std::string& prefix, nn::Var x) {
  return nn::layer_norm(x, tape.param(prefix + ".gain"), tape.param(prefix + ".bias"));
}

nn::Var linear(nn::Tape& tape, const std::string& weight, const std::string& bias, nn::Var x) {
  return nn::add_row(nn::matmul(x, tape.weight(weight)), tape.param(bias));
}

nn::Var attention(nn::Tape& tape, const std::string& prefix, nn::Var query_input, nn::Var kv_input,
                  int heads, bool causal, nn::AttentionProbe* probe) {
  nn::Var q = linear(tape, prefix + ".wq", prefix + ".bq", query_input);
  nn::Var k = linear(tape, prefix + ".wk", prefix + ".bk", kv_input);
  nn::Var v = linear(tape, prefix + ".wv", prefix + ".bv", kv_input);
  nn::Var mixed = nn::attention(q, k, v, heads, causal, probe);
  return linear(tape, prefix + ".wo", prefix + ".bo", mixed);
}

nn::Var feed_forward(nn::Tape& tape, const std::string& prefix, nn::Var x) {
  nn::Var hidden = nn::gelu(linear(tape, prefix + ".w1", prefix + ".b1", x));
  return linear(tape, prefix + ".w2", prefix + ".b2", hidden);
}

}  // namespace smart::layers
