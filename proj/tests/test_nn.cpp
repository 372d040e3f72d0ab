#include <cmath>
#include <functional>

#include "doctest.h"
#include "fullband/nn.hpp"
#include "gradcheck.hpp"

using namespace fullband;
using namespace fullband::nn;
using Var = Graph::Var;

namespace {

Tensor random_tensor(int r, int c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("elementwise and linear op gradients match finite differences") {
  ParamStore ps;
  Rng rng(1);
  Parameter& w = ps.add("w", 3, 4);
  Parameter& b = ps.add("b", 1, 4);
  Parameter& u = ps.add("u", 2, 3);
  xavier_init(w.value, rng);
  normal_init(b.value, rng, 0.5);
  normal_init(u.value, rng, 1.0);
  Tensor target = random_tensor(2, 4, rng);

  auto loss = [&](bool backprop) {
    Graph g;
    Var x = g.param(u);
    Var y = g.add(g.matmul(x, g.param(w)), g.param(b));
    Var z = g.mul(g.gelu(y), g.sigmoid(g.scale(y, 0.5)));
    Var d = g.sub(z, g.input(target));
    Var l = g.mean_all(g.mul(d, d));
    if (backprop) {
      ps.zero_grad();
      g.backward(l);
    }
    return g.val(l).data[0];
  };
  CHECK(fullband::testing::max_grad_rel_error(ps, loss) < 1e-6);
}

TEST_CASE("softmax, layer norm, relu, dropout-off gradients") {
  ParamStore ps;
  Rng rng(2);
  Parameter& x = ps.add("x", 3, 5);
  Parameter& gain = ps.add("g", 1, 5);
  Parameter& bias = ps.add("bb", 1, 5);
  normal_init(x.value, rng, 1.0);
  gain.value.fill(1.2);
  normal_init(bias.value, rng, 0.3);
  Tensor pick = random_tensor(3, 5, rng);

  auto loss = [&](bool backprop) {
    Graph g;
    Var h = g.layer_norm(g.param(x), g.param(gain), g.param(bias));
    Var s = g.softmax_rows(g.relu(h));
    Var l = g.mean_all(g.mul(s, g.input(pick)));
    if (backprop) {
      ps.zero_grad();
      g.backward(l);
    }
    return g.val(l).data[0];
  };
  CHECK(fullband::testing::max_grad_rel_error(ps, loss) < 1e-6);
}

TEST_CASE("gather, slicing, concat, reshape, transpose gradients") {
  ParamStore ps;
  Rng rng(3);
  Parameter& table = ps.add("t", 6, 4);
  Parameter& w = ps.add("w", 4, 4);
  normal_init(table.value, rng, 1.0);
  xavier_init(w.value, rng);
  Tensor target = random_tensor(2, 8, rng);

  auto loss = [&](bool backprop) {
    Graph g;
    Var rows = g.rows(g.param(table), {1, 4, 1});
    Var a = g.slice_rows(rows, 0, 2);
    Var b = g.matmul(a, g.transpose(g.param(w)));
    Var c = g.concat_cols({a, b});
    Var d = g.reshape(g.concat_rows({c, c}), 2, 16);
    Var l = g.mean_all(g.mul(g.slice_cols(d, 4, 8), g.input(target)));
    if (backprop) {
      ps.zero_grad();
      g.backward(l);
    }
    return g.val(l).data[0];
  };
  CHECK(fullband::testing::max_grad_rel_error(ps, loss) < 1e-6);
}

TEST_CASE("nll, bce and relative-logits gradients") {
  ParamStore ps;
  Rng rng(4);
  Parameter& x = ps.add("x", 3, 6);
  Parameter& q = ps.add("q", 3, 4);
  Parameter& rel = ps.add("rel", 5, 4);
  normal_init(x.value, rng, 1.0);
  normal_init(q.value, rng, 1.0);
  normal_init(rel.value, rng, 1.0);
  Tensor targets = random_tensor(3, 6, rng);
  for (auto& v : targets.data) v = v > 0 ? 1.0 : 0.0;

  auto loss = [&](bool backprop) {
    Graph g;
    Var l1 = g.bce_with_logits_mean(g.param(x), targets);
    Var l2 = g.mean_all(g.nll_rows(g.param(x), {2, 0, 5}));
    Var rl = g.relative_logits(g.param(q), g.param(rel));
    Var l3 = g.mean_all(g.mul(rl, rl));
    Var l = g.add(g.add(l1, l2), g.scale(l3, 0.1));
    if (backprop) {
      ps.zero_grad();
      g.backward(l);
    }
    return g.val(l).data[0];
  };
  CHECK(fullband::testing::max_grad_rel_error(ps, loss) < 1e-6);
}

TEST_CASE("straight-through: code values forward, identity gradient back") {
  ParamStore ps;
  Rng rng(5);
  Parameter& v = ps.add("v", 2, 3);
  normal_init(v.value, rng, 1.0);
  Tensor codes = random_tensor(2, 3, rng);
  Tensor weights = random_tensor(2, 3, rng);
  Graph g;
  Var st = g.straight_through(g.param(v), codes);
  CHECK(g.val(st).data == codes.data);

  ps.zero_grad();
  g.backward(g.mean_all(g.mul(st, g.input(weights))));
  // d(mean(st . w))/dv = w / count, exactly, regardless of the code values
  for (size_t i = 0; i < v.grad.data.size(); ++i)
    CHECK(v.grad.data[i] == doctest::Approx(weights.data[i] / 6.0).epsilon(1e-12));
}

TEST_CASE("dropout is identity in eval mode and scale-preserving in train mode") {
  Rng rng(6);
  Tensor x = random_tensor(50, 40, rng);
  Graph eval_g;
  Var a = eval_g.input(x);
  CHECK(eval_g.dropout(a, 0.3) == a);

  Rng drop_rng(7);
  Graph train_g(true, &drop_rng);
  Var b = train_g.input(x);
  Var d = train_g.dropout(b, 0.3);
  int zeros = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    double out = train_g.val(d).data[i];
    if (out == 0.0) {
      ++zeros;
    } else {
      CHECK(out == doctest::Approx(x.data[i] / 0.7).epsilon(1e-12));
    }
  }
  // 2000 cells at rate 0.3
  CHECK(zeros > 450);
  CHECK(zeros < 750);
}

TEST_CASE("broadcast add over rows") {
  Graph g;
  Tensor a(3, 2);
  a.data = {1, 2, 3, 4, 5, 6};
  Tensor b(1, 2);
  b.data = {10, 20};
  Var s = g.add(g.input(a), g.input(b));
  CHECK(g.val(s).data == std::vector<double>{11, 22, 13, 24, 15, 26});
}

TEST_CASE("adam takes a hand-checked first step") {
  ParamStore ps;
  Parameter& p = ps.add("p", 1, 1);
  p.value.data[0] = 2.0;
  p.grad.data[0] = 0.5;
  Adam adam;
  adam.step(ps, 0.1);
  // first step: mhat = g, vhat = g^2, delta = lr * g / (|g| + eps) ~ lr * sign(g)
  CHECK(p.value.data[0] == doctest::Approx(2.0 - 0.1).epsilon(1e-6));
}

TEST_CASE("learning-rate schedule hits both endpoints") {
  CHECK(lr_schedule(1e-3, 1e-5, 0, 100) == doctest::Approx(1e-3));
  CHECK(lr_schedule(1e-3, 1e-5, 99, 100) == doctest::Approx(1e-5));
  double mid = lr_schedule(1e-3, 1e-5, 50, 101);
  CHECK(mid == doctest::Approx(1e-4).epsilon(1e-6));
  CHECK(lr_schedule(1e-3, 1e-5, 0, 1) == doctest::Approx(1e-3));
}

TEST_CASE("checkpoints reload bit-exactly") {
  ParamStore ps;
  Rng rng(8);
  Parameter& a = ps.add("layer.w", 7, 5);
  Parameter& b = ps.add("layer.b", 1, 5);
  normal_init(a.value, rng, 1.0);
  normal_init(b.value, rng, 1.0);

  Checkpoint ck;
  ck.kind = "demo";
  ck.config_json = "{\"x\":1}";
  ck.put_params(ps);
  ck.f32["floats"] = {1.5f, -2.25f};
  ck.i64["ints"] = {42, -7};
  std::string path = "/tmp/fullband_test_ck.bin";
  ck.save(path);

  Checkpoint back = Checkpoint::load(path);
  CHECK(back.kind == "demo");
  CHECK(back.config_json == ck.config_json);
  CHECK(back.f32["floats"] == ck.f32["floats"]);
  CHECK(back.i64["ints"] == ck.i64["ints"]);

  ParamStore ps2;
  ps2.add("layer.w", 7, 5);
  ps2.add("layer.b", 1, 5);
  back.read_params(ps2);
  CHECK(ps2["layer.w"].value.data == a.value.data);
  CHECK(ps2["layer.b"].value.data == b.value.data);

  ParamStore wrong;
  wrong.add("layer.w", 7, 5);
  wrong.add("missing", 1, 1);
  CHECK_THROWS_AS(back.read_params(wrong), ValidationError);
}

TEST_CASE("shape violations raise errors") {
  Graph g;
  Var a = g.input(Tensor(2, 3));
  Var b = g.input(Tensor(3, 2));
  CHECK_THROWS_AS(g.add(a, b), ValidationError);
  CHECK_THROWS_AS(g.mul(a, b), ValidationError);
  CHECK_THROWS_AS(g.matmul(a, a), ValidationError);
  CHECK_THROWS_AS(g.reshape(a, 4, 2), ValidationError);
  CHECK_THROWS_AS(g.backward(a), ValidationError);
}

}  // TEST_SUITE
