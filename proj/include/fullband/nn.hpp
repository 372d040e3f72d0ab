#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fullband/common.hpp"

namespace fullband::nn {

using Scalar = double;

// Dense row-major matrix. Vectors are 1 x D rows.
struct Tensor {
  int rows = 0, cols = 0;
  std::vector<Scalar> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  static Tensor row(const std::vector<Scalar>& values);

  Scalar& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  const Scalar& at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  void fill(Scalar v) { std::fill(data.begin(), data.end(), v); }
};

// Named learnable tensor with gradient and Adam state.
struct Parameter {
  std::string name;
  Tensor value, grad, m, v;
};

class ParamStore {
 public:
  Parameter& add(const std::string& name, int rows, int cols);
  Parameter& operator[](const std::string& name);
  const Parameter& operator[](const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  void zero_grad();
  size_t scalar_count() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, size_t> index_;
};

void xavier_init(Tensor& t, Rng& rng);
void normal_init(Tensor& t, Rng& rng, Scalar stddev);

// ---------------------------------------------------------------------------
// Dynamic computation graph, rebuilt per forward pass.
// ---------------------------------------------------------------------------

class Graph {
 public:
  using Var = int;

  explicit Graph(bool train = false, Rng* rng = nullptr) : train_(train), rng_(rng) {}

  Var input(Tensor v);         // constant
  Var param(Parameter& p);     // leaf; backward accumulates into p.grad

  const Tensor& val(Var v) const { return nodes_[static_cast<size_t>(v)].value; }

  Var add(Var a, Var b);       // same shape, or b a 1 x cols row broadcast
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);       // elementwise
  Var scale(Var a, Scalar s);
  Var add_const(Var a, Tensor c);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var rows(Var a, std::vector<int> idx);
  Var slice_rows(Var a, int begin, int len);
  Var slice_cols(Var a, int begin, int len);
  Var concat_rows(const std::vector<Var>& vs);
  Var concat_cols(const std::vector<Var>& vs);
  Var reshape(Var a, int r, int c);
  Var sum_all(Var a);    // 1x1
  Var mean_all(Var a);   // 1x1
  Var gelu(Var a);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var softmax_rows(Var a);
  Var layer_norm(Var x, Var gain, Var bias);  // gain/bias 1 x cols
  Var dropout(Var a, double rate);            // identity in eval mode

  // per-row negative log-likelihood of the target column, [rows, 1]
  Var nll_rows(Var logits, std::vector<int> targets);
  // mean binary cross-entropy against constant targets, 1x1
  Var bce_with_logits_mean(Var logits, Tensor targets);
  // same with a constant per-cell weight (class balancing)
  Var bce_with_logits_weighted(Var logits, Tensor targets, Tensor weights);
  // forward value = codes, gradient passes through to v unchanged
  Var straight_through(Var v, Tensor codes);
  // out[i][j] = q[i] . rel[j - i + center]; rel has 2*center+1 rows
  Var relative_logits(Var q, Var rel_table);

  void backward(Var root);

  size_t node_count() const { return nodes_.size(); }
  bool training() const { return train_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void()> backprop;  // empty for constants
  };

  Var emplace(Tensor value, bool needs_grad);
  Tensor& grad_of(Var v);
  void accumulate(Var v, const Tensor& g);

  std::vector<Node> nodes_;
  bool train_;
  Rng* rng_;

  friend struct GraphTestAccess;
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam(Scalar beta1 = 0.9, Scalar beta2 = 0.999, Scalar eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParamStore& params, Scalar lr);
  int64_t steps_taken() const { return t_; }

 private:
  Scalar beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Exponential decay from lr0 to lr1 over total steps.
Scalar lr_schedule(Scalar lr0, Scalar lr1, int64_t step, int64_t total_steps);

// ---------------------------------------------------------------------------
// Checkpoint container: versioned header, named float64/float32/int64 arrays
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::string kind;         // "codec", "prior", "codebook", ...
  std::string config_json;  // model configuration
  std::map<std::string, Tensor> f64;
  std::map<std::string, std::vector<float>> f32;
  std::map<std::string, std::vector<int64_t>> i64;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  void put_params(const ParamStore& params);
  void read_params(ParamStore& params) const;  // shapes must already match
};

}  // namespace fullband::nn
