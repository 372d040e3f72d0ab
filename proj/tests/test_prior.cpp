#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "fullband/prior.hpp"

using namespace fullband;

namespace {

PriorConfig micro_config() {
  PriorConfig c;
  c.d_model = 8;
  c.d_ff = 16;
  c.heads = 2;
  c.dec_layers = 1;
  c.enc_layers = 1;
  c.max_tracks = 4;
  c.max_steps = 4;
  c.dropout = 0.0;
  c.mix_dim = 16;
  c.seed = 9;
  return c;
}

CodeGrouping grouping(int pitch, int time_base) {
  CodeGrouping g;
  g.pitch_code = pitch % 64;
  for (int k = 0; k < 8; ++k) g.time_codes[static_cast<size_t>(k)] = (time_base + 5 * k) % 128;
  return g;
}

Segment synthetic_segment(Rng& rng, int n, int t, int mix_dim, const std::string& id = "seg") {
  Segment s;
  s.id = id;
  for (int tau = 0; tau < t; ++tau) {
    MixtureCode mc;
    for (int c = 0; c < mix_dim; ++c) mc.z.push_back(rng.normal());
    s.mix_codes.push_back(std::move(mc));
    std::vector<CodeGrouping> step;
    for (int nn = 0; nn < n; ++nn)
      step.push_back(grouping(static_cast<int>(rng.uniform_int(0, 63)),
                              static_cast<int>(rng.uniform_int(0, 127))));
    s.groupings.push_back(std::move(step));
  }
  for (int nn = 0; nn < n; ++nn)
    s.instruments.push_back(static_cast<int>(rng.uniform_int(0, 33)));
  s.timing = [&] {
    std::vector<TimingCondition> timing;
    for (int tau = 0; tau < t; ++tau)
      timing.push_back({static_cast<double>(2 * t), 2.0 * tau / (2.0 * t),
                        2.0 * (tau + 1) / (2.0 * t)});
    return timing;
  }();
  return s;
}

// segments whose mixture codes spell out the grouping: informative context
Segment context_coded_segment(Rng& rng, int mix_dim, const std::string& id) {
  Segment s = synthetic_segment(rng, 2, 4, mix_dim, id);
  for (int tau = 0; tau < 4; ++tau) {
    int key = s.groupings[static_cast<size_t>(tau)][0].pitch_code % mix_dim;
    for (int c = 0; c < mix_dim; ++c)
      s.mix_codes[static_cast<size_t>(tau)].z[static_cast<size_t>(c)] = c == key ? 4.0 : 0.0;
  }
  return s;
}

}  // namespace

TEST_SUITE("prior") {

TEST_CASE("a fresh model is exactly uniform: nll = (ln 64 + 8 ln 128) / 9") {
  PriorModel model(micro_config());
  Rng rng(1);
  Segment s = synthetic_segment(rng, 2, 3, 16);
  double expected = (std::log(64.0) + 8.0 * std::log(128.0)) / 9.0;
  CHECK(model.segment_nll(s, 0.0, 0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(4.7750).epsilon(1e-4));

  // normalization: mean over tracks, so N and T do not change the uniform value
  Segment wide = synthetic_segment(rng, 4, 4, 16);
  CHECK(model.segment_nll(wide, 0.3, 7) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("context encoder: beta contracts") {
  PriorConfig cfg = micro_config();
  PriorModel model(cfg);
  Rng rng(2);
  Segment a = synthetic_segment(rng, 2, 3, 16, "a");
  Segment b = synthetic_segment(rng, 2, 3, 16, "b");

  // beta = 0: no noise path, different seeds agree
  auto m1 = model.encode_context(a.mix_codes, a.timing, 0.0, 111);
  auto m2 = model.encode_context(a.mix_codes, a.timing, 0.0, 222);
  CHECK(m1.data == m2.data);

  // beta = 1: independent of the codes given the seed
  auto n1 = model.encode_context(a.mix_codes, a.timing, 1.0, 333);
  auto n2 = model.encode_context(b.mix_codes, b.timing, 1.0, 333);
  CHECK(n1.data == n2.data);

  // beta = 0.5: reproducible per seed, different across seeds
  auto h1 = model.encode_context(a.mix_codes, a.timing, 0.5, 1);
  auto h2 = model.encode_context(a.mix_codes, a.timing, 0.5, 1);
  auto h3 = model.encode_context(a.mix_codes, a.timing, 0.5, 2);
  CHECK(h1.data == h2.data);
  CHECK(h1.data != h3.data);

  CHECK_THROWS_AS(model.encode_context(a.mix_codes, a.timing, 1.5, 0), ValidationError);
}

TEST_CASE("causal mask: logits at step tau ignore groupings at steps >= tau") {
  PriorConfig cfg = micro_config();
  PriorModel model(cfg);
  Rng head_rng(3);
  // non-degenerate heads so logits actually depend on the state
  nn::normal_init(model.params()["head.pitch.w"].value, head_rng, 0.5);
  for (int k = 0; k < 8; ++k)
    nn::normal_init(model.params()["head.time" + std::to_string(k) + ".w"].value, head_rng, 0.5);

  Rng rng(4);
  Segment s = synthetic_segment(rng, 3, 4, 16);
  auto memory = model.encode_context(s.mix_codes, s.timing, 0.0, 0);
  auto base = model.forward(s.groupings, s.instruments, s.timing, memory);

  for (int tau = 0; tau < 4; ++tau) {
    auto perturbed = s.groupings;
    for (int later = tau; later < 4; ++later)
      for (auto& z : perturbed[static_cast<size_t>(later)]) {
        z.pitch_code = (z.pitch_code + 13) % 64;
        for (auto& code : z.time_codes) code = (code + 31) % 128;
      }
    auto out = model.forward(perturbed, s.instruments, s.timing, memory);
    CHECK(out[static_cast<size_t>(tau)].pitch.data == base[static_cast<size_t>(tau)].pitch.data);
    for (int k = 0; k < 8; ++k)
      CHECK(out[static_cast<size_t>(tau)].time[static_cast<size_t>(k)].data ==
            base[static_cast<size_t>(tau)].time[static_cast<size_t>(k)].data);
    if (tau + 1 < 4)  // and the perturbation is visible one step later
      CHECK(out[static_cast<size_t>(tau) + 1].pitch.data !=
            base[static_cast<size_t>(tau) + 1].pitch.data);
  }
}

TEST_CASE("with zeroed relative embeddings, track permutation permutes logits") {
  PriorConfig cfg = micro_config();
  cfg.dec_layers = 2;
  PriorModel model(cfg);
  Rng head_rng(5);
  nn::normal_init(model.params()["head.pitch.w"].value, head_rng, 0.5);
  model.zero_relative_embeddings();

  Rng rng(6);
  Segment s = synthetic_segment(rng, 3, 3, 16);
  auto memory = model.encode_context(s.mix_codes, s.timing, 0.0, 0);
  auto base = model.forward(s.groupings, s.instruments, s.timing, memory);

  std::vector<int> perm = {2, 0, 1};
  auto perm_groupings = s.groupings;
  std::vector<int> perm_inst(3);
  for (int tau = 0; tau < 3; ++tau)
    for (int n = 0; n < 3; ++n)
      perm_groupings[static_cast<size_t>(tau)][static_cast<size_t>(n)] =
          s.groupings[static_cast<size_t>(tau)][static_cast<size_t>(perm[static_cast<size_t>(n)])];
  for (int n = 0; n < 3; ++n)
    perm_inst[static_cast<size_t>(n)] = s.instruments[static_cast<size_t>(perm[static_cast<size_t>(n)])];

  auto shuffled = model.forward(perm_groupings, perm_inst, s.timing, memory);
  for (int tau = 0; tau < 3; ++tau)
    for (int n = 0; n < 3; ++n)
      for (int c = 0; c < 64; ++c)
        REQUIRE(shuffled[static_cast<size_t>(tau)].pitch.at(n, c) ==
                doctest::Approx(base[static_cast<size_t>(tau)].pitch.at(perm[static_cast<size_t>(n)], c))
                    .epsilon(1e-12));
}

TEST_CASE("duplicating an identical track leaves the per-code loss unchanged") {
  PriorConfig cfg = micro_config();
  PriorModel model(cfg);
  Rng head_rng(7);
  nn::normal_init(model.params()["head.pitch.w"].value, head_rng, 0.5);
  model.zero_relative_embeddings();

  Rng rng(8);
  Segment one = synthetic_segment(rng, 1, 3, 16);
  Segment two = one;
  two.instruments.push_back(one.instruments[0]);
  for (int tau = 0; tau < 3; ++tau)
    two.groupings[static_cast<size_t>(tau)].push_back(one.groupings[static_cast<size_t>(tau)][0]);

  CHECK(model.segment_nll(two, 0.0, 0) == doctest::Approx(model.segment_nll(one, 0.0, 0)).epsilon(1e-12));
}

TEST_CASE("attention-shape audit: only T- and N-sized score matrices exist") {
  PriorConfig cfg = micro_config();
  cfg.max_steps = 5;
  cfg.max_tracks = 3;
  PriorModel model(cfg);
  Rng rng(9);
  Segment s = synthetic_segment(rng, 3, 5, 16);
  AttentionProbe probe;
  PriorModel::set_attention_probe(&probe);
  model.segment_nll(s, 0.5, 1);
  PriorModel::set_attention_probe(nullptr);
  CHECK(probe.matrices > 0);
  CHECK(probe.max_dim == 5);  // never 15 = N*T
}

TEST_CASE("nucleus distribution: hand-computed cutoff and limit cases") {
  std::vector<double> logits = {std::log(0.5), std::log(0.3), std::log(0.2)};
  auto dist = nucleus_distribution(logits, 0.6, 1.0);
  CHECK(dist[0] == doctest::Approx(5.0 / 8.0).epsilon(1e-12));
  CHECK(dist[1] == doctest::Approx(3.0 / 8.0).epsilon(1e-12));
  CHECK(dist[2] == 0.0);

  // p -> 0+ keeps only the argmax
  auto greedy = nucleus_distribution(logits, 1e-12, 1.0);
  CHECK(greedy[0] == doctest::Approx(1.0));
  CHECK(greedy[1] == 0.0);

  // temperature -> 0+ is greedy regardless of p
  auto cold = nucleus_distribution(logits, 1.0, 1e-9);
  CHECK(cold[0] == doctest::Approx(1.0));

  // p = 1 keeps everything
  auto full = nucleus_distribution(logits, 1.0, 1.0);
  CHECK(full[2] == doctest::Approx(0.2).epsilon(1e-9));

  Rng rng(10);
  for (int i = 0; i < 50; ++i) CHECK(nucleus_sample(logits, 1e-12, 1.0, rng) == 0);
  CHECK_THROWS_AS(nucleus_distribution(logits, 0.0, 1.0), ValidationError);
  CHECK_THROWS_AS(nucleus_distribution(logits, 0.5, 0.0), ValidationError);
}

TEST_CASE("sampling: prompt verbatim, seeded determinism") {
  PriorConfig cfg = micro_config();
  PriorModel model(cfg);
  Rng rng(11);
  Segment s = synthetic_segment(rng, 2, 4, 16);
  auto memory = model.encode_context(s.mix_codes, s.timing, 0.5, 5);

  std::vector<std::vector<CodeGrouping>> prompt = {s.groupings[0]};
  SamplingConfig sampling{0.9, 1.0, 77};
  auto out = model.sample(memory, s.instruments, s.timing, prompt, 4, sampling);
  REQUIRE(out.size() == 4);
  CHECK(out[0] == prompt[0]);

  auto again = model.sample(memory, s.instruments, s.timing, prompt, 4, sampling);
  CHECK(out == again);

  SamplingConfig other{0.9, 1.0, 78};
  auto different = model.sample(memory, s.instruments, s.timing, prompt, 4, other);
  CHECK(out != different);

  std::vector<std::vector<CodeGrouping>> bad_prompt = {
      {s.groupings[0][0]}};  // one track instead of two
  CHECK_THROWS_AS(model.sample(memory, s.instruments, s.timing, bad_prompt, 4, sampling),
                  ValidationError);
}

TEST_CASE("at T=1 the logits depend only on start token, instrument, timing and memory") {
  PriorConfig cfg = micro_config();
  PriorModel model(cfg);
  Rng head_rng(20);
  nn::normal_init(model.params()["head.pitch.w"].value, head_rng, 0.5);
  Rng rng(21);
  Segment s = synthetic_segment(rng, 2, 1, 16);
  auto memory = model.encode_context(s.mix_codes, s.timing, 0.0, 0);
  auto base = model.forward(s.groupings, s.instruments, s.timing, memory);

  auto other = s.groupings;  // new step-0 targets; the shifted input is still just the start
  for (auto& z : other[0]) {
    z.pitch_code = (z.pitch_code + 31) % 64;
    for (auto& code : z.time_codes) code = (code + 63) % 128;
  }
  auto out = model.forward(other, s.instruments, s.timing, memory);
  CHECK(out[0].pitch.data == base[0].pitch.data);

  // but instruments do matter
  auto inst = model.forward(s.groupings, {5, 6}, s.timing, memory);
  CHECK(inst[0].pitch.data != base[0].pitch.data);
}

TEST_CASE("an all-empty-style history still admits every code with positive probability") {
  PriorConfig cfg = micro_config();
  PriorModel model(cfg);
  Rng head_rng(12);
  nn::normal_init(model.params()["head.pitch.w"].value, head_rng, 0.5);
  Rng rng(13);
  Segment s = synthetic_segment(rng, 2, 4, 16);
  CodeGrouping empty_style = grouping(0, 0);
  for (auto& step : s.groupings)
    step[1] = empty_style;  // track 1 stays on the empty-style grouping

  auto memory = model.encode_context(s.mix_codes, s.timing, 0.5, 3);
  auto logits = model.forward(s.groupings, s.instruments, s.timing, memory);
  const auto& last = logits.back();
  double mx = -1e300;
  for (int c = 0; c < 64; ++c) mx = std::max(mx, last.pitch.at(1, c));
  double z = 0;
  for (int c = 0; c < 64; ++c) z += std::exp(last.pitch.at(1, c) - mx);
  for (int c = 0; c < 64; ++c) {
    double p = std::exp(last.pitch.at(1, c) - mx) / z;
    REQUIRE(std::isfinite(p));
    REQUIRE(p > 0.0);
  }
}

TEST_CASE("prior loss gradients match finite differences on a micro config") {
  PriorConfig cfg = micro_config();
  PriorModel model(cfg);
  Rng rng(14);
  Segment s = synthetic_segment(rng, 2, 3, 16);
  std::vector<const Segment*> batch = {&s};

  auto loss = [&](bool backprop) {
    if (backprop) return model.batch_loss(batch, {0.4}, {99}, true);
    double v = model.batch_loss(batch, {0.4}, {99}, false);
    return v;
  };
  double worst = fullband::testing::max_grad_rel_error(model.params(), loss, 40, 15);
  CHECK(worst < 1e-3);
}

TEST_CASE("training is deterministic and reduces the loss") {
  PriorConfig cfg = micro_config();
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.train_steps = 300;
  cfg.batch = 2;
  cfg.lr = 3e-3;
  cfg.lr_final = 1e-3;
  Rng rng(16);
  std::vector<Segment> corpus = {synthetic_segment(rng, 2, 3, 16, "a"),
                                 synthetic_segment(rng, 2, 3, 16, "b")};
  PriorTrainStats s1, s2;
  PriorModel m1 = PriorModel::train(corpus, cfg, &s1);
  PriorModel m2 = PriorModel::train(corpus, cfg, &s2);
  CHECK(s1.step_loss[99] == s2.step_loss[99]);  // bit-identical step-100 loss
  double uniform = (std::log(64.0) + 8.0 * std::log(128.0)) / 9.0;
  CHECK(s1.step_loss.front() == doctest::Approx(uniform).epsilon(1e-6));
  CHECK(s1.step_loss.back() < 0.8 * uniform);

  CHECK_THROWS_AS(PriorModel::train({}, cfg), ValidationError);
}

TEST_CASE("validation nll with pure-noise context is no better than with real context") {
  PriorConfig cfg = micro_config();
  cfg.d_model = 16;
  cfg.d_ff = 48;
  cfg.train_steps = 500;
  cfg.batch = 6;
  cfg.lr = 3e-3;
  cfg.lr_final = 5e-4;
  Rng rng(17);
  std::vector<Segment> corpus, val;
  for (int i = 0; i < 12; ++i)
    corpus.push_back(context_coded_segment(rng, 16, "train" + std::to_string(i)));
  for (int i = 0; i < 4; ++i)
    val.push_back(context_coded_segment(rng, 16, "val" + std::to_string(i)));
  PriorModel model = PriorModel::train(corpus, cfg);
  double informed = model.eval_nll(val, 0.0, 5);
  double blind = model.eval_nll(val, 1.0, 5);
  CHECK(blind >= informed);
}

TEST_CASE("checkpoints reload to identical losses; full-scale parameter budget") {
  PriorConfig cfg = micro_config();
  PriorModel model(cfg);
  Rng rng(18);
  Segment s = synthetic_segment(rng, 2, 3, 16);
  std::string path = "/tmp/fullband_test_prior.bin";
  model.save(path);
  PriorModel back = PriorModel::load(path);
  CHECK(back.segment_nll(s, 0.25, 3) == model.segment_nll(s, 0.25, 3));

  PriorModel full(PriorConfig::full_scale());
  double params = static_cast<double>(full.params().scalar_count());
  CHECK(params > 4.5e6);
  CHECK(params < 18e6);
}

TEST_CASE("shape violations are rejected") {
  PriorConfig cfg = micro_config();
  PriorModel model(cfg);
  Rng rng(19);
  Segment s = synthetic_segment(rng, 2, 3, 16);
  Segment too_long = synthetic_segment(rng, 2, 5, 16);
  CHECK_THROWS_AS(model.segment_nll(too_long, 0.0, 0), ValidationError);
  Segment too_wide = synthetic_segment(rng, 5, 3, 16);
  CHECK_THROWS_AS(model.segment_nll(too_wide, 0.0, 0), ValidationError);
  Segment bad_code = s;
  bad_code.groupings[0][0].pitch_code = 64;
  CHECK_THROWS_AS(model.segment_nll(bad_code, 0.0, 0), ValidationError);
}

}  // TEST_SUITE
