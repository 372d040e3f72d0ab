#include "fullband/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace fullband::nn {

using EMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

namespace {
CMap cmap(const Tensor& t) { return CMap(t.data.data(), t.rows, t.cols); }
Map mmap(Tensor& t) { return Map(t.data.data(), t.rows, t.cols); }

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
  throw ValidationError(std::string(op) + ": bad shape " + std::to_string(a.rows) + "x" +
                        std::to_string(a.cols));
}
}  // namespace

Tensor Tensor::row(const std::vector<Scalar>& values) {
  Tensor t(1, static_cast<int>(values.size()));
  t.data = values;
  return t;
}

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

Parameter& ParamStore::add(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw ValidationError("duplicate parameter: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(rows, cols);
  p->grad = Tensor(rows, cols);
  p->m = Tensor(rows, cols);
  p->v = Tensor(rows, cols);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParamStore::operator[](const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParamStore::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return *params_[it->second];
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

size_t ParamStore::scalar_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void xavier_init(Tensor& t, Rng& rng) {
  Scalar a = std::sqrt(6.0 / (t.rows + t.cols));
  for (auto& v : t.data) v = (rng.uniform() * 2.0 - 1.0) * a;
}

void normal_init(Tensor& t, Rng& rng, Scalar stddev) {
  for (auto& v : t.data) v = rng.normal() * stddev;
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

Graph::Var Graph::emplace(Tensor value, bool needs_grad) {
  nodes_.push_back(Node{std::move(value), Tensor(), needs_grad, {}});
  return static_cast<Var>(nodes_.size() - 1);
}

Tensor& Graph::grad_of(Var v) {
  Node& n = nodes_[static_cast<size_t>(v)];
  if (n.grad.size() == 0) n.grad = Tensor(n.value.rows, n.value.cols);
  return n.grad;
}

void Graph::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_[static_cast<size_t>(v)];
  if (!n.needs_grad) return;
  Tensor& dst = grad_of(v);
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

Graph::Var Graph::input(Tensor v) { return emplace(std::move(v), false); }

Graph::Var Graph::param(Parameter& p) {
  Var out = emplace(p.value, true);
  Parameter* pp = &p;
  nodes_[static_cast<size_t>(out)].backprop = [this, out, pp]() {
    const Tensor& g = nodes_[static_cast<size_t>(out)].grad;
    for (size_t i = 0; i < g.data.size(); ++i) pp->grad.data[i] += g.data[i];
  };
  return out;
}

Graph::Var Graph::add(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  bool broadcast = tb.rows == 1 && ta.rows != 1 && tb.cols == ta.cols;
  if (!broadcast && !ta.same_shape(tb)) shape_error("add", tb);
  Tensor out = ta;
  if (broadcast) {
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out.at(r, c) += tb.at(0, c);
  } else {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
  }
  bool ng = nodes_[static_cast<size_t>(a)].needs_grad || nodes_[static_cast<size_t>(b)].needs_grad;
  Var o = emplace(std::move(out), ng);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, b, o, broadcast]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    accumulate(a, g);
    if (!nodes_[static_cast<size_t>(b)].needs_grad) return;
    if (broadcast) {
      Tensor gb(1, g.cols);
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) gb.at(0, c) += g.at(r, c);
      accumulate(b, gb);
    } else {
      accumulate(b, g);
    }
  };
  return o;
}

Graph::Var Graph::sub(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) shape_error("sub", tb);
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
  bool ng = nodes_[static_cast<size_t>(a)].needs_grad || nodes_[static_cast<size_t>(b)].needs_grad;
  Var o = emplace(std::move(out), ng);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, b, o]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    accumulate(a, g);
    if (nodes_[static_cast<size_t>(b)].needs_grad) {
      Tensor neg = g;
      for (auto& v : neg.data) v = -v;
      accumulate(b, neg);
    }
  };
  return o;
}

Graph::Var Graph::mul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (!ta.same_shape(tb)) shape_error("mul", tb);
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
  bool ng = nodes_[static_cast<size_t>(a)].needs_grad || nodes_[static_cast<size_t>(b)].needs_grad;
  Var o = emplace(std::move(out), ng);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, b, o]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    if (nodes_[static_cast<size_t>(a)].needs_grad) {
      Tensor ga = g;
      const Tensor& tb2 = val(b);
      for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= tb2.data[i];
      accumulate(a, ga);
    }
    if (nodes_[static_cast<size_t>(b)].needs_grad) {
      Tensor gb = g;
      const Tensor& ta2 = val(a);
      for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] *= ta2.data[i];
      accumulate(b, gb);
    }
  };
  return o;
}

Graph::Var Graph::scale(Var a, Scalar s) {
  Tensor out = val(a);
  for (auto& v : out.data) v *= s;
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o, s]() {
    Tensor g = nodes_[static_cast<size_t>(o)].grad;
    for (auto& v : g.data) v *= s;
    accumulate(a, g);
  };
  return o;
}

Graph::Var Graph::add_const(Var a, Tensor c) {
  const Tensor& ta = val(a);
  if (!ta.same_shape(c)) shape_error("add_const", c);
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += c.data[i];
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o]() {
    accumulate(a, nodes_[static_cast<size_t>(o)].grad);
  };
  return o;
}

Graph::Var Graph::matmul(Var a, Var b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  if (ta.cols != tb.rows) shape_error("matmul", tb);
  Tensor out(ta.rows, tb.cols);
  mmap(out) = cmap(ta) * cmap(tb);
  bool ng = nodes_[static_cast<size_t>(a)].needs_grad || nodes_[static_cast<size_t>(b)].needs_grad;
  Var o = emplace(std::move(out), ng);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, b, o]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    const Tensor& ta2 = val(a);
    const Tensor& tb2 = val(b);
    if (nodes_[static_cast<size_t>(a)].needs_grad) {
      Tensor ga(ta2.rows, ta2.cols);
      mmap(ga) = cmap(g) * cmap(tb2).transpose();
      accumulate(a, ga);
    }
    if (nodes_[static_cast<size_t>(b)].needs_grad) {
      Tensor gb(tb2.rows, tb2.cols);
      mmap(gb) = cmap(ta2).transpose() * cmap(g);
      accumulate(b, gb);
    }
  };
  return o;
}

Graph::Var Graph::transpose(Var a) {
  const Tensor& ta = val(a);
  Tensor out(ta.cols, ta.rows);
  mmap(out) = cmap(ta).transpose();
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    Tensor ga(g.cols, g.rows);
    mmap(ga) = cmap(g).transpose();
    accumulate(a, ga);
  };
  return o;
}

Graph::Var Graph::rows(Var a, std::vector<int> idx) {
  const Tensor& ta = val(a);
  Tensor out(static_cast<int>(idx.size()), ta.cols);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= ta.rows) shape_error("rows", ta);
    std::memcpy(&out.at(static_cast<int>(i), 0), &ta.at(idx[i], 0),
                sizeof(Scalar) * static_cast<size_t>(ta.cols));
  }
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o, idx = std::move(idx)]() {
    if (!nodes_[static_cast<size_t>(a)].needs_grad) return;
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    Tensor ga(val(a).rows, val(a).cols);
    for (size_t i = 0; i < idx.size(); ++i)
      for (int c = 0; c < g.cols; ++c) ga.at(idx[i], c) += g.at(static_cast<int>(i), c);
    accumulate(a, ga);
  };
  return o;
}

Graph::Var Graph::slice_rows(Var a, int begin, int len) {
  const Tensor& ta = val(a);
  if (begin < 0 || begin + len > ta.rows) shape_error("slice_rows", ta);
  Tensor out(len, ta.cols);
  std::memcpy(out.data.data(), &ta.at(begin, 0), sizeof(Scalar) * out.size());
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o, begin]() {
    if (!nodes_[static_cast<size_t>(a)].needs_grad) return;
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    Tensor ga(val(a).rows, val(a).cols);
    std::memcpy(&ga.at(begin, 0), g.data.data(), sizeof(Scalar) * g.size());
    accumulate(a, ga);
  };
  return o;
}

Graph::Var Graph::slice_cols(Var a, int begin, int len) {
  const Tensor& ta = val(a);
  if (begin < 0 || begin + len > ta.cols) shape_error("slice_cols", ta);
  Tensor out(ta.rows, len);
  for (int r = 0; r < ta.rows; ++r)
    std::memcpy(&out.at(r, 0), &ta.at(r, begin), sizeof(Scalar) * static_cast<size_t>(len));
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o, begin, len]() {
    if (!nodes_[static_cast<size_t>(a)].needs_grad) return;
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    Tensor ga(val(a).rows, val(a).cols);
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < len; ++c) ga.at(r, begin + c) = g.at(r, c);
    accumulate(a, ga);
  };
  return o;
}

Graph::Var Graph::concat_rows(const std::vector<Var>& vs) {
  if (vs.empty()) throw ValidationError("concat_rows: empty");
  int cols = val(vs[0]).cols;
  int rows_total = 0;
  bool ng = false;
  for (Var v : vs) {
    if (val(v).cols != cols) shape_error("concat_rows", val(v));
    rows_total += val(v).rows;
    ng = ng || nodes_[static_cast<size_t>(v)].needs_grad;
  }
  Tensor out(rows_total, cols);
  int at = 0;
  for (Var v : vs) {
    std::memcpy(&out.at(at, 0), val(v).data.data(), sizeof(Scalar) * val(v).size());
    at += val(v).rows;
  }
  Var o = emplace(std::move(out), ng);
  nodes_[static_cast<size_t>(o)].backprop = [this, o, vs]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    int at2 = 0;
    for (Var v : vs) {
      const Tensor& tv = val(v);
      if (nodes_[static_cast<size_t>(v)].needs_grad) {
        Tensor gv(tv.rows, tv.cols);
        std::memcpy(gv.data.data(), &g.at(at2, 0), sizeof(Scalar) * gv.size());
        accumulate(v, gv);
      }
      at2 += tv.rows;
    }
  };
  return o;
}

Graph::Var Graph::concat_cols(const std::vector<Var>& vs) {
  if (vs.empty()) throw ValidationError("concat_cols: empty");
  int rows_n = val(vs[0]).rows;
  int cols_total = 0;
  bool ng = false;
  for (Var v : vs) {
    if (val(v).rows != rows_n) shape_error("concat_cols", val(v));
    cols_total += val(v).cols;
    ng = ng || nodes_[static_cast<size_t>(v)].needs_grad;
  }
  Tensor out(rows_n, cols_total);
  int at = 0;
  for (Var v : vs) {
    const Tensor& tv = val(v);
    for (int r = 0; r < rows_n; ++r)
      std::memcpy(&out.at(r, at), &tv.at(r, 0), sizeof(Scalar) * static_cast<size_t>(tv.cols));
    at += tv.cols;
  }
  Var o = emplace(std::move(out), ng);
  nodes_[static_cast<size_t>(o)].backprop = [this, o, vs, rows_n]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    int at2 = 0;
    for (Var v : vs) {
      const Tensor& tv = val(v);
      if (nodes_[static_cast<size_t>(v)].needs_grad) {
        Tensor gv(tv.rows, tv.cols);
        for (int r = 0; r < rows_n; ++r)
          for (int c = 0; c < tv.cols; ++c) gv.at(r, c) = g.at(r, at2 + c);
        accumulate(v, gv);
      }
      at2 += tv.cols;
    }
  };
  return o;
}

Graph::Var Graph::reshape(Var a, int r, int c) {
  const Tensor& ta = val(a);
  if (static_cast<size_t>(r) * c != ta.size()) shape_error("reshape", ta);
  Tensor out(r, c);
  out.data = ta.data;
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    Tensor ga(val(a).rows, val(a).cols);
    ga.data = g.data;
    accumulate(a, ga);
  };
  return o;
}

Graph::Var Graph::sum_all(Var a) {
  Scalar s = 0;
  for (Scalar v : val(a).data) s += v;
  Tensor out(1, 1);
  out.data[0] = s;
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o]() {
    Scalar g = nodes_[static_cast<size_t>(o)].grad.data[0];
    Tensor ga(val(a).rows, val(a).cols);
    ga.fill(g);
    accumulate(a, ga);
  };
  return o;
}

Graph::Var Graph::mean_all(Var a) {
  size_t n = val(a).size();
  return scale(sum_all(a), 1.0 / static_cast<Scalar>(n));
}

Graph::Var Graph::gelu(Var a) {
  const Tensor& ta = val(a);
  Tensor out = ta;
  for (auto& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    const Tensor& x = val(a);
    Tensor ga(x.rows, x.cols);
    constexpr Scalar inv_sqrt_2pi = 0.3989422804014327;
    for (size_t i = 0; i < ga.data.size(); ++i) {
      Scalar xi = x.data[i];
      Scalar cdf = 0.5 * (1.0 + std::erf(xi * M_SQRT1_2));
      Scalar pdf = inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
      ga.data[i] = g.data[i] * (cdf + xi * pdf);
    }
    accumulate(a, ga);
  };
  return o;
}

Graph::Var Graph::sigmoid(Var a) {
  Tensor out = val(a);
  for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    const Tensor& y = val(o);
    Tensor ga(y.rows, y.cols);
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] = g.data[i] * y.data[i] * (1.0 - y.data[i]);
    accumulate(a, ga);
  };
  return o;
}

Graph::Var Graph::relu(Var a) {
  Tensor out = val(a);
  for (auto& v : out.data) v = std::max<Scalar>(0.0, v);
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    const Tensor& x = val(a);
    Tensor ga(x.rows, x.cols);
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] = x.data[i] > 0 ? g.data[i] : 0.0;
    accumulate(a, ga);
  };
  return o;
}

Graph::Var Graph::softmax_rows(Var a) {
  const Tensor& ta = val(a);
  Tensor out = ta;
  for (int r = 0; r < out.rows; ++r) {
    Scalar mx = -1e300;
    for (int c = 0; c < out.cols; ++c) mx = std::max(mx, out.at(r, c));
    Scalar sum = 0;
    for (int c = 0; c < out.cols; ++c) {
      out.at(r, c) = std::exp(out.at(r, c) - mx);
      sum += out.at(r, c);
    }
    for (int c = 0; c < out.cols; ++c) out.at(r, c) /= sum;
  }
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    const Tensor& y = val(o);
    Tensor ga(y.rows, y.cols);
    for (int r = 0; r < y.rows; ++r) {
      Scalar dot = 0;
      for (int c = 0; c < y.cols; ++c) dot += g.at(r, c) * y.at(r, c);
      for (int c = 0; c < y.cols; ++c) ga.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
    }
    accumulate(a, ga);
  };
  return o;
}

Graph::Var Graph::layer_norm(Var x, Var gain, Var bias) {
  const Tensor& tx = val(x);
  const Tensor& tg = val(gain);
  const Tensor& tb = val(bias);
  if (tg.rows != 1 || tg.cols != tx.cols || tb.rows != 1 || tb.cols != tx.cols)
    shape_error("layer_norm", tg);
  constexpr Scalar eps = 1e-5;
  Tensor out(tx.rows, tx.cols);
  Tensor xhat(tx.rows, tx.cols);
  std::vector<Scalar> inv_std(static_cast<size_t>(tx.rows));
  for (int r = 0; r < tx.rows; ++r) {
    Scalar mean = 0;
    for (int c = 0; c < tx.cols; ++c) mean += tx.at(r, c);
    mean /= tx.cols;
    Scalar var = 0;
    for (int c = 0; c < tx.cols; ++c) {
      Scalar d = tx.at(r, c) - mean;
      var += d * d;
    }
    var /= tx.cols;
    Scalar is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int c = 0; c < tx.cols; ++c) {
      xhat.at(r, c) = (tx.at(r, c) - mean) * is;
      out.at(r, c) = xhat.at(r, c) * tg.at(0, c) + tb.at(0, c);
    }
  }
  bool ng = nodes_[static_cast<size_t>(x)].needs_grad ||
            nodes_[static_cast<size_t>(gain)].needs_grad ||
            nodes_[static_cast<size_t>(bias)].needs_grad;
  Var o = emplace(std::move(out), ng);
  nodes_[static_cast<size_t>(o)].backprop = [this, x, gain, bias, o, xhat = std::move(xhat),
                                             inv_std = std::move(inv_std)]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    const Tensor& tg2 = val(gain);
    int rows_n = g.rows, cols_n = g.cols;
    if (nodes_[static_cast<size_t>(gain)].needs_grad) {
      Tensor gg(1, cols_n);
      for (int r = 0; r < rows_n; ++r)
        for (int c = 0; c < cols_n; ++c) gg.at(0, c) += g.at(r, c) * xhat.at(r, c);
      accumulate(gain, gg);
    }
    if (nodes_[static_cast<size_t>(bias)].needs_grad) {
      Tensor gb(1, cols_n);
      for (int r = 0; r < rows_n; ++r)
        for (int c = 0; c < cols_n; ++c) gb.at(0, c) += g.at(r, c);
      accumulate(bias, gb);
    }
    if (nodes_[static_cast<size_t>(x)].needs_grad) {
      Tensor gx(rows_n, cols_n);
      for (int r = 0; r < rows_n; ++r) {
        Scalar mean_u = 0, mean_ux = 0;
        for (int c = 0; c < cols_n; ++c) {
          Scalar u = g.at(r, c) * tg2.at(0, c);
          mean_u += u;
          mean_ux += u * xhat.at(r, c);
        }
        mean_u /= cols_n;
        mean_ux /= cols_n;
        for (int c = 0; c < cols_n; ++c) {
          Scalar u = g.at(r, c) * tg2.at(0, c);
          gx.at(r, c) =
              (u - mean_u - xhat.at(r, c) * mean_ux) * inv_std[static_cast<size_t>(r)];
        }
      }
      accumulate(x, gx);
    }
  };
  return o;
}

Graph::Var Graph::dropout(Var a, double rate) {
  if (!train_ || rate <= 0.0) return a;
  if (!rng_) throw ValidationError("dropout in training mode needs an rng");
  const Tensor& ta = val(a);
  Tensor mask(ta.rows, ta.cols);
  Scalar keep = 1.0 - rate;
  for (auto& m : mask.data) m = rng_->uniform() < rate ? 0.0 : 1.0 / keep;
  Tensor out = ta;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(a)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, a, o, mask = std::move(mask)]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    Tensor ga = g;
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= mask.data[i];
    accumulate(a, ga);
  };
  return o;
}

Graph::Var Graph::nll_rows(Var logits, std::vector<int> targets) {
  const Tensor& x = val(logits);
  if (static_cast<int>(targets.size()) != x.rows) shape_error("nll_rows", x);
  Tensor out(x.rows, 1);
  std::vector<Scalar> lse(static_cast<size_t>(x.rows));
  for (int r = 0; r < x.rows; ++r) {
    if (targets[static_cast<size_t>(r)] < 0 || targets[static_cast<size_t>(r)] >= x.cols)
      shape_error("nll_rows targets", x);
    Scalar mx = -1e300;
    for (int c = 0; c < x.cols; ++c) mx = std::max(mx, x.at(r, c));
    Scalar sum = 0;
    for (int c = 0; c < x.cols; ++c) sum += std::exp(x.at(r, c) - mx);
    lse[static_cast<size_t>(r)] = mx + std::log(sum);
    out.at(r, 0) = lse[static_cast<size_t>(r)] - x.at(r, targets[static_cast<size_t>(r)]);
  }
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(logits)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, logits, o, targets = std::move(targets),
                                             lse = std::move(lse)]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    const Tensor& x2 = val(logits);
    Tensor gx(x2.rows, x2.cols);
    for (int r = 0; r < x2.rows; ++r) {
      Scalar gr = g.at(r, 0);
      for (int c = 0; c < x2.cols; ++c) {
        Scalar p = std::exp(x2.at(r, c) - lse[static_cast<size_t>(r)]);
        gx.at(r, c) = gr * (p - (c == targets[static_cast<size_t>(r)] ? 1.0 : 0.0));
      }
    }
    accumulate(logits, gx);
  };
  return o;
}

Graph::Var Graph::bce_with_logits_mean(Var logits, Tensor targets) {
  const Tensor& x = val(logits);
  if (!x.same_shape(targets)) shape_error("bce_with_logits_mean", targets);
  Scalar total = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    Scalar xi = x.data[i], ti = targets.data[i];
    total += std::max<Scalar>(xi, 0.0) - xi * ti + std::log1p(std::exp(-std::abs(xi)));
  }
  Tensor out(1, 1);
  size_t n = x.size();
  out.data[0] = total / static_cast<Scalar>(n);
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(logits)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, logits, o, targets = std::move(targets), n]() {
    Scalar g = nodes_[static_cast<size_t>(o)].grad.data[0];
    const Tensor& x2 = val(logits);
    Tensor gx(x2.rows, x2.cols);
    for (size_t i = 0; i < gx.data.size(); ++i) {
      Scalar s = 1.0 / (1.0 + std::exp(-x2.data[i]));
      gx.data[i] = g * (s - targets.data[i]) / static_cast<Scalar>(n);
    }
    accumulate(logits, gx);
  };
  return o;
}

Graph::Var Graph::bce_with_logits_weighted(Var logits, Tensor targets, Tensor weights) {
  const Tensor& x = val(logits);
  if (!x.same_shape(targets) || !x.same_shape(weights))
    shape_error("bce_with_logits_weighted", targets);
  Scalar total = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    Scalar xi = x.data[i], ti = targets.data[i];
    total += weights.data[i] *
             (std::max<Scalar>(xi, 0.0) - xi * ti + std::log1p(std::exp(-std::abs(xi))));
  }
  Tensor out(1, 1);
  size_t n = x.size();
  out.data[0] = total / static_cast<Scalar>(n);
  Var o = emplace(std::move(out), nodes_[static_cast<size_t>(logits)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, logits, o, targets = std::move(targets),
                                             weights = std::move(weights), n]() {
    Scalar g = nodes_[static_cast<size_t>(o)].grad.data[0];
    const Tensor& x2 = val(logits);
    Tensor gx(x2.rows, x2.cols);
    for (size_t i = 0; i < gx.data.size(); ++i) {
      Scalar s = 1.0 / (1.0 + std::exp(-x2.data[i]));
      gx.data[i] = g * weights.data[i] * (s - targets.data[i]) / static_cast<Scalar>(n);
    }
    accumulate(logits, gx);
  };
  return o;
}

Graph::Var Graph::straight_through(Var v, Tensor codes) {
  const Tensor& tv = val(v);
  if (!tv.same_shape(codes)) shape_error("straight_through", codes);
  Var o = emplace(std::move(codes), nodes_[static_cast<size_t>(v)].needs_grad);
  nodes_[static_cast<size_t>(o)].backprop = [this, v, o]() {
    accumulate(v, nodes_[static_cast<size_t>(o)].grad);
  };
  return o;
}

Graph::Var Graph::relative_logits(Var q, Var rel_table) {
  const Tensor& tq = val(q);
  const Tensor& tr = val(rel_table);
  if (tr.rows % 2 == 0 || tr.cols != tq.cols) shape_error("relative_logits", tr);
  int center = (tr.rows - 1) / 2;
  int s = tq.rows;
  if (s > center + 1) shape_error("relative_logits", tq);
  Tensor out(s, s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      Scalar dot = 0;
      for (int c = 0; c < tq.cols; ++c) dot += tq.at(i, c) * tr.at(j - i + center, c);
      out.at(i, j) = dot;
    }
  bool ng = nodes_[static_cast<size_t>(q)].needs_grad ||
            nodes_[static_cast<size_t>(rel_table)].needs_grad;
  Var o = emplace(std::move(out), ng);
  nodes_[static_cast<size_t>(o)].backprop = [this, q, rel_table, o, center, s]() {
    const Tensor& g = nodes_[static_cast<size_t>(o)].grad;
    const Tensor& tq2 = val(q);
    const Tensor& tr2 = val(rel_table);
    if (nodes_[static_cast<size_t>(q)].needs_grad) {
      Tensor gq(tq2.rows, tq2.cols);
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j)
          for (int c = 0; c < tq2.cols; ++c)
            gq.at(i, c) += g.at(i, j) * tr2.at(j - i + center, c);
      accumulate(q, gq);
    }
    if (nodes_[static_cast<size_t>(rel_table)].needs_grad) {
      Tensor gr(tr2.rows, tr2.cols);
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j)
          for (int c = 0; c < tq2.cols; ++c)
            gr.at(j - i + center, c) += g.at(i, j) * tq2.at(i, c);
      accumulate(rel_table, gr);
    }
  };
  return o;
}

void Graph::backward(Var root) {
  Node& r = nodes_[static_cast<size_t>(root)];
  if (r.value.size() != 1) throw ValidationError("backward root must be scalar");
  grad_of(root).data[0] = 1.0;
  for (int i = root; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.needs_grad && n.grad.size() != 0 && n.backprop) n.backprop();
  }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void Adam::step(ParamStore& params, Scalar lr) {
  ++t_;
  Scalar c1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
  Scalar c2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
  for (Parameter* p : params.all()) {
    for (size_t i = 0; i < p->value.data.size(); ++i) {
      Scalar g = p->grad.data[i];
      p->m.data[i] = beta1_ * p->m.data[i] + (1.0 - beta1_) * g;
      p->v.data[i] = beta2_ * p->v.data[i] + (1.0 - beta2_) * g * g;
      Scalar mhat = p->m.data[i] / c1;
      Scalar vhat = p->v.data[i] / c2;
      p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Scalar lr_schedule(Scalar lr0, Scalar lr1, int64_t step, int64_t total_steps) {
  if (total_steps <= 1) return lr0;
  Scalar frac = std::min<Scalar>(1.0, static_cast<Scalar>(step) /
                                          static_cast<Scalar>(total_steps - 1));
  return lr0 * std::pow(lr1 / lr0, frac);
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'B', 'C', 'H', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

void write_bytes(std::FILE* f, const void* p, size_t n) {
  if (std::fwrite(p, 1, n, f) != n) throw IoError("checkpoint write failed");
}

void read_bytes(std::FILE* f, void* p, size_t n) {
  if (std::fread(p, 1, n, f) != n) throw IoError("checkpoint read failed (truncated file)");
}

void write_str(std::FILE* f, const std::string& s) {
  uint64_t n = s.size();
  write_bytes(f, &n, sizeof n);
  write_bytes(f, s.data(), s.size());
}

std::string read_str(std::FILE* f) {
  uint64_t n = 0;
  read_bytes(f, &n, sizeof n);
  if (n > (1ull << 32)) throw IoError("checkpoint string too large");
  std::string s(n, '\0');
  read_bytes(f, s.data(), n);
  return s;
}

struct FileCloser {
  std::FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open for writing: " + path);
  FileCloser closer{f};
  write_bytes(f, kMagic, sizeof kMagic);
  write_bytes(f, &kVersion, sizeof kVersion);
  write_str(f, kind);
  write_str(f, config_json);
  uint64_t n = f64.size();
  write_bytes(f, &n, sizeof n);
  for (const auto& [name, t] : f64) {
    write_str(f, name);
    uint32_t r = static_cast<uint32_t>(t.rows), c = static_cast<uint32_t>(t.cols);
    write_bytes(f, &r, sizeof r);
    write_bytes(f, &c, sizeof c);
    write_bytes(f, t.data.data(), t.data.size() * sizeof(Scalar));
  }
  n = f32.size();
  write_bytes(f, &n, sizeof n);
  for (const auto& [name, v] : f32) {
    write_str(f, name);
    uint64_t count = v.size();
    write_bytes(f, &count, sizeof count);
    write_bytes(f, v.data(), v.size() * sizeof(float));
  }
  n = i64.size();
  write_bytes(f, &n, sizeof n);
  for (const auto& [name, v] : i64) {
    write_str(f, name);
    uint64_t count = v.size();
    write_bytes(f, &count, sizeof count);
    write_bytes(f, v.data(), v.size() * sizeof(int64_t));
  }
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open checkpoint: " + path);
  FileCloser closer{f};
  char magic[8];
  read_bytes(f, magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ValidationError("not a checkpoint file: " + path);
  uint32_t version = 0;
  read_bytes(f, &version, sizeof version);
  if (version != kVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.kind = read_str(f);
  ck.config_json = read_str(f);
  uint64_t n = 0;
  read_bytes(f, &n, sizeof n);
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = read_str(f);
    uint32_t r = 0, c = 0;
    read_bytes(f, &r, sizeof r);
    read_bytes(f, &c, sizeof c);
    Tensor t(static_cast<int>(r), static_cast<int>(c));
    read_bytes(f, t.data.data(), t.data.size() * sizeof(Scalar));
    ck.f64.emplace(std::move(name), std::move(t));
  }
  read_bytes(f, &n, sizeof n);
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = read_str(f);
    uint64_t count = 0;
    read_bytes(f, &count, sizeof count);
    std::vector<float> v(count);
    read_bytes(f, v.data(), v.size() * sizeof(float));
    ck.f32.emplace(std::move(name), std::move(v));
  }
  read_bytes(f, &n, sizeof n);
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = read_str(f);
    uint64_t count = 0;
    read_bytes(f, &count, sizeof count);
    std::vector<int64_t> v(count);
    read_bytes(f, v.data(), v.size() * sizeof(int64_t));
    ck.i64.emplace(std::move(name), std::move(v));
  }
  return ck;
}

void Checkpoint::put_params(const ParamStore& params) {
  for (const Parameter* p : params.all()) f64["param:" + p->name] = p->value;
}

void Checkpoint::read_params(ParamStore& params) const {
  for (Parameter* p : params.all()) {
    auto it = f64.find("param:" + p->name);
    if (it == f64.end()) throw ValidationError("checkpoint missing parameter: " + p->name);
    if (!it->second.same_shape(p->value))
      throw ValidationError("checkpoint shape mismatch for parameter: " + p->name);
    p->value = it->second;
  }
}

}  // namespace fullband::nn
