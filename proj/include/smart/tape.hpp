#pragma once

// Minimal reverse-mode differentiation over dense double matrices. Every
// model forward pass records onto a Tape; backward() walks it in reverse and
// deposits parameter gradients into a Gradients buffer aligned with the
// ParamStore the tape was bound to.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace smart::nn {

using Matrix = Eigen::MatrixXd;

enum class ParamGroup { base, lora };

struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
  ParamGroup group = ParamGroup::base;
};

// Low-rank adapter on a base weight W (m x n): W + scale * B * A with
// B (m x r) and A (r x n).
struct LoraAdapter {
  std::size_t base = 0;
  std::size_t a = 0;
  std::size_t b = 0;
  double scale = 1.0;
};

class ParamStore {
 public:
  std::size_t add(std::string name, Matrix value, ParamGroup group = ParamGroup::base);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index(const std::string& name) const;

  Parameter& at(std::size_t i) { return params_.at(i); }
  const Parameter& at(std::size_t i) const { return params_.at(i); }
  Parameter& at(const std::string& name) { return params_[index(name)]; }
  const Parameter& at(const std::string& name) const { return params_[index(name)]; }

  std::size_t size() const { return params_.size(); }
  const std::vector<Parameter>& all() const { return params_; }

  void attach_lora(const LoraAdapter& adapter);
  const LoraAdapter* lora_for(std::size_t base) const;
  const std::vector<LoraAdapter>& adapters() const { return adapters_; }

  // W, or W + scale * B * A when an adapter is attached.
  Matrix effective_weight(const std::string& name) const;

  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<LoraAdapter> adapters_;
  std::map<std::size_t, std::size_t> adapter_by_base_;
};

// Per-parameter gradient accumulator; empty matrices mean "no gradient".
struct Gradients {
  std::vector<Matrix> grads;

  Gradients() = default;
  explicit Gradients(std::size_t n) : grads(n) {}

  void accumulate(std::size_t i, const Matrix& g);
  void add(const Gradients& other);
  void scale(double s);
  bool has(std::size_t i) const { return i < grads.size() && grads[i].size() > 0; }
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Attention probabilities captured per head during a forward pass.
struct AttentionProbe {
  std::vector<Matrix> probabilities;
};

class Tape {
 public:
  explicit Tape(const ParamStore* store = nullptr) : store_(store) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf whose gradient is retained and readable via grad() after backward.
  Var variable(Matrix value);
  Var param(std::size_t index);
  Var param(const std::string& name);
  // Parameter with its LoRA adapter (if any) folded in differentiably.
  Var weight(const std::string& name);

  const ParamStore* store() const { return store_; }
  const Matrix& value(Var v) const;
  const Matrix& grad(Var v) const;

  void backward(Var root, Gradients& out);

  // Internal: used by op implementations.
  using BackwardFn = std::function<void(Tape&, const Matrix& upstream)>;
  Var record(Matrix value, bool needs_grad, BackwardFn fn);
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  void accumulate(Var v, const Matrix& g);
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool needs_grad = false;
    std::optional<std::size_t> param;
    BackwardFn backward;
  };

  const ParamStore* store_;
  std::vector<Node> nodes_;
  Matrix empty_;
};

// ---- ops ------------------------------------------------------------------

Var matmul(Var a, Var b);
Var matmul_transposed(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
Var scale(Var a, double s);
Var gelu(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
Var gather_rows(Var table, const std::vector<int>& ids);
Var sum(Var a);
// sum(a .* weights) for a constant weight matrix
Var weighted_sum(Var a, const Matrix& weights);

// Multi-head scaled dot-product attention on already projected inputs.
// Heads split the columns evenly; scores scale by 1/sqrt(head_dim). With
// `causal`, query row i sees key rows 0..i only.
Var attention(Var queries, Var keys, Var values, int heads, bool causal = false,
              AttentionProbe* probe = nullptr);

// Sum over `rows` of -log softmax(logits[row, allowed])[target]. `allowed`
// lists vocabulary columns taking part in the softmax; empty means all.
Var cross_entropy(Var logits, const std::vector<int>& rows, const std::vector<int>& targets,
                  const std::vector<int>& allowed = {});

// Reference numerics shared by forward code and tests.
Matrix softmax_rows(const Matrix& scores);
double gelu_value(double x);

}  // namespace smart::nn
