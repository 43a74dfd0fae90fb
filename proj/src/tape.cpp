#include "smart/tape.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "smart/errors.hpp"

namespace smart::nn {

// ---- ParamStore -------------------------------------------------------------

std::size_t ParamStore::add(std::string name, Matrix value, ParamGroup group) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  const std::size_t i = params_.size();
  index_.emplace(name, i);
  params_.push_back(Parameter{std::move(name), std::move(value), true, group});
  return i;
}

std::size_t ParamStore::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::attach_lora(const LoraAdapter& adapter) {
  if (adapter_by_base_.count(adapter.base)) {
    throw ConfigError("parameter '" + params_[adapter.base].name + "' already has an adapter");
  }
  adapter_by_base_.emplace(adapter.base, adapters_.size());
  adapters_.push_back(adapter);
}

const LoraAdapter* ParamStore::lora_for(std::size_t base) const {
  auto it = adapter_by_base_.find(base);
  return it == adapter_by_base_.end() ? nullptr : &adapters_[it->second];
}

Matrix ParamStore::effective_weight(const std::string& name) const {
  const std::size_t i = index(name);
  Matrix w = params_[i].value;
  if (const auto* adapter = lora_for(i)) {
    w += adapter->scale * (params_[adapter->b].value * params_[adapter->a].value);
  }
  return w;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

// ---- Gradients --------------------------------------------------------------

void Gradients::accumulate(std::size_t i, const Matrix& g) {
  if (i >= grads.size()) grads.resize(i + 1);
  if (grads[i].size() == 0) {
    grads[i] = g;
  } else {
    grads[i] += g;
  }
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < other.grads.size(); ++i) {
    if (other.grads[i].size() > 0) accumulate(i, other.grads[i]);
  }
}

void Gradients::scale(double s) {
  for (auto& g : grads) {
    if (g.size() > 0) g *= s;
  }
}

// ---- Tape -------------------------------------------------------------------

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::record(Matrix value, bool needs_grad, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  if (needs_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(std::size_t index) {
  if (!store_) throw ConfigError("tape is not bound to a parameter store");
  const Parameter& p = store_->at(index);
  Node node;
  node.ref = &p.value;
  node.needs_grad = p.trainable;
  node.param = index;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(const std::string& name) {
  if (!store_) throw ConfigError("tape is not bound to a parameter store");
  return param(store_->index(name));
}

Var Tape::weight(const std::string& name) {
  const std::size_t i = store_->index(name);
  Var w = param(i);
  if (const auto* adapter = store_->lora_for(i)) {
    Var delta = matmul(param(adapter->b), param(adapter->a));
    w = add(w, scale(delta, adapter->scale));
  }
  return w;
}

const Matrix& Tape::value(Var v) const {
  const Node& node = nodes_.at(static_cast<std::size_t>(v.id));
  return node.ref ? *node.ref : node.value;
}

const Matrix& Tape::grad(Var v) const {
  const Node& node = nodes_.at(static_cast<std::size_t>(v.id));
  return node.grad.size() ? node.grad : empty_;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& node = nodes_[static_cast<std::size_t>(v.id)];
  if (!node.needs_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::backward(Var root, Gradients& out) {
  const Matrix& root_value = value(root);
  if (root_value.rows() != 1 || root_value.cols() != 1) {
    throw ShapeError("backward() needs a 1x1 root");
  }
  if (out.grads.size() < (store_ ? store_->size() : 0)) out.grads.resize(store_->size());
  for (auto& node : nodes_) node.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(root.id)].grad = Matrix::Ones(1, 1);
  for (int id = root.id; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.needs_grad || node.grad.size() == 0) continue;
    if (node.backward) {
      // Copy: the closure may accumulate into other nodes but never this one.
      const Matrix upstream = node.grad;
      node.backward(*this, upstream);
    }
    if (node.param) out.accumulate(*node.param, node.grad);
  }
}

// ---- ops --------------------------------------------------------------------

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

bool any_needs_grad(Tape& t, std::initializer_list<Var> vars) {
  for (Var v : vars) {
    if (t.needs_grad(v)) return true;
  }
  return false;
}

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values produced by ") + op);
}

}  // namespace

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape& t = *a.tape;
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), any_needs_grad(t, {a, b}), [a, b](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

Var matmul_transposed(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_transposed: column counts differ");
  Tape& t = *a.tape;
  Matrix out = a.value() * b.value().transpose();
  return t.record(std::move(out), any_needs_grad(t, {a, b}), [a, b](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b));
    if (tp.needs_grad(b)) tp.accumulate(b, g.transpose() * tp.value(a));
  });
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shapes differ");
  Tape& t = *a.tape;
  Matrix out = a.value() + b.value();
  return t.record(std::move(out), any_needs_grad(t, {a, b}), [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols");
  Tape& t = *a.tape;
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return t.record(std::move(out), any_needs_grad(t, {a, row}), [a, row](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.needs_grad(row)) tp.accumulate(row, g.colwise().sum());
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.record(a.value() * s, t.needs_grad(a),
                  [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, g * s); });
}

double gelu_value(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

Var gelu(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().unaryExpr([](double x) { return gelu_value(x); });
  return t.record(std::move(out), t.needs_grad(a), [a](Tape& tp, const Matrix& g) {
    constexpr double c = 0.7978845608028654;
    Matrix d = tp.value(a).unaryExpr([](double x) {
      const double inner = c * (x + 0.044715 * x * x * x);
      const double th = std::tanh(inner);
      const double dinner = c * (1.0 + 3.0 * 0.044715 * x * x);
      return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner;
    });
    tp.accumulate(a, g.cwiseProduct(d));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm: gain must be 1 x cols");
  require(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm: bias must be 1 x cols");
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  Matrix normalized(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = normalized.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return t.record(std::move(out), any_needs_grad(t, {x, gain, bias}),
                  [x, gain, bias, normalized, inv_std](Tape& tp, const Matrix& g) {
                    if (tp.needs_grad(gain)) {
                      tp.accumulate(gain, g.cwiseProduct(normalized).colwise().sum());
                    }
                    if (tp.needs_grad(bias)) tp.accumulate(bias, g.colwise().sum());
                    if (tp.needs_grad(x)) {
                      Matrix dnorm = g.array().rowwise() * tp.value(gain).row(0).array();
                      Matrix dx(dnorm.rows(), dnorm.cols());
                      for (Eigen::Index r = 0; r < dnorm.rows(); ++r) {
                        const double mean_d = dnorm.row(r).mean();
                        const double mean_dn = dnorm.row(r).cwiseProduct(normalized.row(r)).mean();
                        dx.row(r) = inv_std(r) * (dnorm.row(r).array() - mean_d -
                                                  normalized.row(r).array() * mean_dn);
                      }
                      tp.accumulate(x, dx);
                    }
                  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  Tape& t = *parts.front().tape;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool needs = false;
  for (Var p : parts) {
    require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
    needs = needs || t.needs_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (Var p : parts) {
    if (p.rows() > 0) out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return t.record(std::move(out), needs, [parts](Tape& tp, const Matrix& g) {
    Eigen::Index off = 0;
    for (Var p : parts) {
      const Eigen::Index r = tp.value(p).rows();
      if (r > 0 && tp.needs_grad(p)) tp.accumulate(p, g.middleRows(off, r));
      off += r;
    }
  });
}

Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= a.rows(), "slice_rows: out of range");
  Tape& t = *a.tape;
  Matrix out = a.value().middleRows(begin, count);
  return t.record(std::move(out), t.needs_grad(a), [a, begin, count](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
    full.middleRows(begin, count) = g;
    tp.accumulate(a, full);
  });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
  Tape& t = *table.tape;
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tv.rows(), "gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  return t.record(std::move(out), t.needs_grad(table), [table, ids](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(tp.value(table).rows(), tp.value(table).cols());
    for (std::size_t i = 0; i < ids.size(); ++i) full.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(table, full);
  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), t.needs_grad(a), [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, Matrix::Constant(tp.value(a).rows(), tp.value(a).cols(), g(0, 0)));
  });
}

Var weighted_sum(Var a, const Matrix& weights) {
  require(a.rows() == weights.rows() && a.cols() == weights.cols(), "weighted_sum: shapes differ");
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  return t.record(std::move(out), t.needs_grad(a),
                  [a, weights](Tape& tp, const Matrix& g) { tp.accumulate(a, weights * g(0, 0)); });
}

Matrix softmax_rows(const Matrix& scores) {
  Matrix out(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      const double e = std::isinf(scores(r, c)) && scores(r, c) < 0 ? 0.0 : std::exp(scores(r, c) - m);
      out(r, c) = e;
      total += e;
    }
    out.row(r) /= total;
  }
  return out;
}

Var attention(Var queries, Var keys, Var values, int heads, bool causal, AttentionProbe* probe) {
  require(heads >= 1, "attention: heads must be >= 1");
  require(queries.cols() == keys.cols(), "attention: query/key widths differ");
  require(keys.rows() == values.rows(), "attention: key/value row counts differ");
  require(queries.cols() % heads == 0 && values.cols() % heads == 0,
          "attention: width not divisible by head count");
  require(keys.rows() > 0, "attention: no keys");
  Tape& t = *queries.tape;
  const Matrix& q = queries.value();
  const Matrix& k = keys.value();
  const Matrix& v = values.value();
  const Eigen::Index dk = q.cols() / heads;
  const Eigen::Index dv = v.cols() / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const double neg_inf = -std::numeric_limits<double>::infinity();

  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix out(q.rows(), v.cols());
  for (int h = 0; h < heads; ++h) {
    Matrix scores = q.middleCols(h * dk, dk) * k.middleCols(h * dk, dk).transpose() * inv_scale;
    if (causal) {
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < scores.cols(); ++j) scores(i, j) = neg_inf;
      }
    }
    probs[h] = softmax_rows(scores);
    out.middleCols(h * dv, dv) = probs[h] * v.middleCols(h * dv, dv);
  }
  check_finite(out, "attention");
  if (probe) probe->probabilities = probs;

  return t.record(std::move(out), any_needs_grad(t, {queries, keys, values}),
                  [queries, keys, values, heads, dk, dv, inv_scale, probs](Tape& tp, const Matrix& g) {
                    const Matrix& qv = tp.value(queries);
                    const Matrix& kv = tp.value(keys);
                    const Matrix& vv = tp.value(values);
                    Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
                    Matrix dkm = Matrix::Zero(kv.rows(), kv.cols());
                    Matrix dvm = Matrix::Zero(vv.rows(), vv.cols());
                    for (int h = 0; h < heads; ++h) {
                      const Matrix& p = probs[static_cast<std::size_t>(h)];
                      const Matrix go = g.middleCols(h * dv, dv);
                      dvm.middleCols(h * dv, dv) += p.transpose() * go;
                      const Matrix dp = go * vv.middleCols(h * dv, dv).transpose();
                      const Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
                      Matrix ds = p.cwiseProduct(dp.colwise() - row_dot) * inv_scale;
                      dq.middleCols(h * dk, dk) += ds * kv.middleCols(h * dk, dk);
                      dkm.middleCols(h * dk, dk) += ds.transpose() * qv.middleCols(h * dk, dk);
                    }
                    if (tp.needs_grad(queries)) tp.accumulate(queries, dq);
                    if (tp.needs_grad(keys)) tp.accumulate(keys, dkm);
                    if (tp.needs_grad(values)) tp.accumulate(values, dvm);
                  });
}

Var cross_entropy(Var logits, const std::vector<int>& rows, const std::vector<int>& targets,
                  const std::vector<int>& allowed) {
  require(rows.size() == targets.size(), "cross_entropy: rows/targets length mismatch");
  Tape& t = *logits.tape;
  const Matrix& lv = logits.value();
  std::vector<int> columns = allowed;
  if (columns.empty()) {
    columns.resize(static_cast<std::size_t>(lv.cols()));
    for (std::size_t c = 0; c < columns.size(); ++c) columns[c] = static_cast<int>(c);
  }
  // Position of each target inside `columns`.
  std::vector<std::size_t> target_slot(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < lv.rows(), "cross_entropy: row out of range");
    bool found = false;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (columns[c] == targets[i]) {
        target_slot[i] = c;
        found = true;
        break;
      }
    }
    require(found, "cross_entropy: target not among allowed columns");
  }

  Matrix probs(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(columns.size()));
  double loss = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int c : columns) m = std::max(m, lv(rows[i], c));
    double total = 0.0;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const double e = std::exp(lv(rows[i], columns[c]) - m);
      probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = e;
      total += e;
    }
    probs.row(static_cast<Eigen::Index>(i)) /= total;
    loss -= lv(rows[i], targets[i]) - m - std::log(total);
  }
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
  Matrix out(1, 1);
  out(0, 0) = loss;
  return t.record(std::move(out), t.needs_grad(logits),
                  [logits, rows, columns, target_slot, probs](Tape& tp, const Matrix& g) {
                    Matrix d = Matrix::Zero(tp.value(logits).rows(), tp.value(logits).cols());
                    for (std::size_t i = 0; i < rows.size(); ++i) {
                      for (std::size_t c = 0; c < columns.size(); ++c) {
                        double p = probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
                        if (c == target_slot[i]) p -= 1.0;
                        d(rows[i], columns[c]) += g(0, 0) * p;
                      }
                    }
                    tp.accumulate(logits, d);
                  });
}

}  // namespace smart::nn
