#include "fullband/prior.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace fullband {

using nn::Graph;
using Var = nn::Graph::Var;

namespace {
thread_local AttentionProbe* g_attention_probe = nullptr;
}

void PriorModel::set_attention_probe(AttentionProbe* probe) { g_attention_probe = probe; }

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

PriorConfig PriorConfig::full_scale() {
  PriorConfig c;
  c.d_model = 256;
  c.d_ff = 1024;
  c.heads = 8;
  c.dec_layers = 4;
  c.enc_layers = 2;
  c.max_tracks = 16;
  c.max_steps = 16;
  c.batch = 32;
  return c;
}

std::string PriorConfig::to_json() const {
  nlohmann::json j;
  j["d_model"] = d_model;
  j["d_ff"] = d_ff;
  j["heads"] = heads;
  j["dec_layers"] = dec_layers;
  j["enc_layers"] = enc_layers;
  j["max_tracks"] = max_tracks;
  j["max_steps"] = max_steps;
  j["dropout"] = dropout;
  j["pitch_vocab"] = pitch_vocab;
  j["time_vocab"] = time_vocab;
  j["mix_dim"] = mix_dim;
  j["train_steps"] = train_steps;
  j["batch"] = batch;
  j["lr"] = lr;
  j["lr_final"] = lr_final;
  j["seed"] = seed;
  return j.dump();
}

PriorConfig PriorConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  PriorConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.heads = j.value("heads", c.heads);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.max_tracks = j.value("max_tracks", c.max_tracks);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.dropout = j.value("dropout", c.dropout);
  c.pitch_vocab = j.value("pitch_vocab", c.pitch_vocab);
  c.time_vocab = j.value("time_vocab", c.time_vocab);
  c.mix_dim = j.value("mix_dim", c.mix_dim);
  c.train_steps = j.value("train_steps", c.train_steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.lr_final = j.value("lr_final", c.lr_final);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Nucleus sampling
// ---------------------------------------------------------------------------

std::vector<double> nucleus_distribution(std::span<const double> logits, double p,
                                         double temperature) {
  if (logits.empty()) throw ValidationError("nucleus: empty logits");
  if (p <= 0.0 || p > 1.0) throw ValidationError("nucleus p must lie in (0, 1]");
  if (temperature <= 0.0) throw ValidationError("temperature must be positive");
  size_t n = logits.size();
  std::vector<double> probs(n);
  double mx = -1e300;
  for (double v : logits) mx = std::max(mx, v / temperature);
  double sum = 0;
  for (size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] / temperature - mx);
    sum += probs[i];
  }
  for (auto& v : probs) v /= sum;

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return probs[a] > probs[b]; });

  std::vector<double> out(n, 0.0);
  double cum = 0, kept = 0;
  for (size_t i = 0; i < n; ++i) {
    size_t idx = order[i];
    out[idx] = probs[idx];
    cum += probs[idx];
    kept += probs[idx];
    if (cum >= p) break;
  }
  for (auto& v : out) v /= kept;
  return out;
}

int nucleus_sample(std::span<const double> logits, double p, double temperature, Rng& rng) {
  std::vector<double> dist = nucleus_distribution(logits, p, temperature);
  double u = rng.uniform();
  double cum = 0;
  int last_support = 0;
  for (size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] <= 0.0) continue;
    last_support = static_cast<int>(i);
    cum += dist[i];
    if (u < cum) return static_cast<int>(i);
  }
  return last_support;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

namespace {

struct AttnParams {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};
struct LnParams {
  Var gain, bias;
};
struct FfnParams {
  Var w1, b1, w2, b2;
};
struct CtxLayer {
  LnParams ln1;
  AttnParams attn;
  LnParams ln2;
  FfnParams ffn;
};
struct TimeLayer {
  LnParams ln1;
  AttnParams self;
  LnParams lnx;
  AttnParams cross;
  LnParams ln2;
  FfnParams ffn;
};
struct TrackLayer {
  LnParams ln1;
  AttnParams self;
  Var rel;
  LnParams ln2;
  FfnParams ffn;
};

void add_attn(nn::ParamStore& ps, const std::string& p, int d) {
  ps.add(p + ".wq", d, d);
  ps.add(p + ".bq", 1, d);
  ps.add(p + ".wk", d, d);
  ps.add(p + ".bk", 1, d);
  ps.add(p + ".wv", d, d);
  ps.add(p + ".bv", 1, d);
  ps.add(p + ".wo", d, d);
  ps.add(p + ".bo", 1, d);
}

void add_ln(nn::ParamStore& ps, const std::string& p, int d) {
  ps.add(p + ".g", 1, d);
  ps.add(p + ".b", 1, d);
}

void add_ffn(nn::ParamStore& ps, const std::string& p, int d, int dff) {
  ps.add(p + ".w1", d, dff);
  ps.add(p + ".b1", 1, dff);
  ps.add(p + ".w2", dff, d);
  ps.add(p + ".b2", 1, d);
}

Var linear(Graph& g, Var x, Var w, Var b) { return g.add(g.matmul(x, w), b); }

}  // namespace

struct PriorModel::Bound {
  Var emb_pitch, emb_time, emb_pos, emb_inst, emb_start;
  Var timing_w, timing_b;
  Var ctx_in_w, ctx_in_b;
  std::vector<CtxLayer> ctx;
  LnParams ctx_final;
  std::vector<TimeLayer> time;
  std::vector<TrackLayer> track;
  LnParams final_ln;
  Var head_pitch_w, head_pitch_b;
  std::array<Var, 8> head_time_w{}, head_time_b{};
};

PriorModel::PriorModel(const PriorConfig& cfg) : cfg_(cfg) {
  int d = cfg.d_model;
  if (d % cfg.heads != 0) throw ValidationError("d_model must be divisible by heads");
  params_.add("emb.pitch", cfg.pitch_vocab, d);
  params_.add("emb.time", cfg.time_vocab, d);
  params_.add("emb.pos", 9, d);
  params_.add("emb.inst", kNumInstrumentClasses, d);
  params_.add("emb.start", 1, d);
  params_.add("timing.w", 3, d);
  params_.add("timing.b", 1, d);
  params_.add("ctx.in.w", cfg.mix_dim, d);
  params_.add("ctx.in.b", 1, d);
  for (int i = 0; i < cfg.enc_layers; ++i) {
    std::string p = "ctx" + std::to_string(i);
    add_ln(params_, p + ".ln1", d);
    add_attn(params_, p + ".attn", d);
    add_ln(params_, p + ".ln2", d);
    add_ffn(params_, p + ".ffn", d, cfg.d_ff);
  }
  add_ln(params_, "ctx.final", d);
  for (int i = 0; i < cfg.dec_layers; ++i) {
    std::string p = "time" + std::to_string(i);
    add_ln(params_, p + ".ln1", d);
    add_attn(params_, p + ".self", d);
    add_ln(params_, p + ".lnx", d);
    add_attn(params_, p + ".cross", d);
    add_ln(params_, p + ".ln2", d);
    add_ffn(params_, p + ".ffn", d, cfg.d_ff);
    p = "track" + std::to_string(i);
    add_ln(params_, p + ".ln1", d);
    add_attn(params_, p + ".self", d);
    params_.add(p + ".rel", 2 * cfg.max_tracks - 1, d / cfg.heads);
    add_ln(params_, p + ".ln2", d);
    add_ffn(params_, p + ".ffn", d, cfg.d_ff);
  }
  add_ln(params_, "final", d);
  params_.add("head.pitch.w", d, cfg.pitch_vocab);
  params_.add("head.pitch.b", 1, cfg.pitch_vocab);
  for (int k = 0; k < 8; ++k) {
    params_.add("head.time" + std::to_string(k) + ".w", d, cfg.time_vocab);
    params_.add("head.time" + std::to_string(k) + ".b", 1, cfg.time_vocab);
  }

  Rng rng(cfg.seed);
  for (nn::Parameter* p : params_.all()) {
    const std::string& name = p->name;
    if (name.starts_with("head.")) {
      p->value.fill(0.0);  // fresh model predicts uniform codes
    } else if (name.starts_with("emb.") || name.ends_with(".rel")) {
      nn::normal_init(p->value, rng, 0.02);
    } else if (name.ends_with(".g")) {
      p->value.fill(1.0);
    } else if (p->value.rows == 1) {
      p->value.fill(0.0);  // biases and LN shifts
    } else {
      nn::xavier_init(p->value, rng);
    }
  }
}

PriorModel::Bound PriorModel::bind(Graph& g, bool train) const {
  auto& mut = const_cast<nn::ParamStore&>(params_);
  auto B = [&](const std::string& name) -> Var {
    return train ? g.param(mut[name]) : g.input(params_[name].value);
  };
  auto BLn = [&](const std::string& p) { return LnParams{B(p + ".g"), B(p + ".b")}; };
  auto BAttn = [&](const std::string& p) {
    return AttnParams{B(p + ".wq"), B(p + ".bq"), B(p + ".wk"), B(p + ".bk"),
                      B(p + ".wv"), B(p + ".bv"), B(p + ".wo"), B(p + ".bo")};
  };
  auto BFfn = [&](const std::string& p) {
    return FfnParams{B(p + ".w1"), B(p + ".b1"), B(p + ".w2"), B(p + ".b2")};
  };
  Bound b;
  b.emb_pitch = B("emb.pitch");
  b.emb_time = B("emb.time");
  b.emb_pos = B("emb.pos");
  b.emb_inst = B("emb.inst");
  b.emb_start = B("emb.start");
  b.timing_w = B("timing.w");
  b.timing_b = B("timing.b");
  b.ctx_in_w = B("ctx.in.w");
  b.ctx_in_b = B("ctx.in.b");
  for (int i = 0; i < cfg_.enc_layers; ++i) {
    std::string p = "ctx" + std::to_string(i);
    b.ctx.push_back({BLn(p + ".ln1"), BAttn(p + ".attn"), BLn(p + ".ln2"), BFfn(p + ".ffn")});
  }
  b.ctx_final = BLn("ctx.final");
  for (int i = 0; i < cfg_.dec_layers; ++i) {
    std::string p = "time" + std::to_string(i);
    b.time.push_back({BLn(p + ".ln1"), BAttn(p + ".self"), BLn(p + ".lnx"),
                      BAttn(p + ".cross"), BLn(p + ".ln2"), BFfn(p + ".ffn")});
    p = "track" + std::to_string(i);
    b.track.push_back({BLn(p + ".ln1"), BAttn(p + ".self"), B(p + ".rel"), BLn(p + ".ln2"),
                       BFfn(p + ".ffn")});
  }
  b.final_ln = BLn("final");
  b.head_pitch_w = B("head.pitch.w");
  b.head_pitch_b = B("head.pitch.b");
  for (int k = 0; k < 8; ++k) {
    b.head_time_w[static_cast<size_t>(k)] = B("head.time" + std::to_string(k) + ".w");
    b.head_time_b[static_cast<size_t>(k)] = B("head.time" + std::to_string(k) + ".b");
  }
  return b;
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

namespace {

Var ln(Graph& g, const LnParams& p, Var x) { return g.layer_norm(x, p.gain, p.bias); }

// Multi-head attention. mask (optional) is added to every head's scores;
// rel (>= 0) adds Music-Transformer-style relative position logits.
Var attention(Graph& g, const AttnParams& p, Var x_q, Var x_kv, const nn::Tensor* mask,
              Var rel, int heads, double dropout_rate) {
  int d = g.val(x_q).cols;
  int dh = d / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Var q = linear(g, x_q, p.wq, p.bq);
  Var k = linear(g, x_kv, p.wk, p.bk);
  Var v = linear(g, x_kv, p.wv, p.bv);
  std::vector<Var> outs;
  for (int h = 0; h < heads; ++h) {
    Var qh = g.slice_cols(q, h * dh, dh);
    Var kh = g.slice_cols(k, h * dh, dh);
    Var vh = g.slice_cols(v, h * dh, dh);
    Var scores = g.scale(g.matmul(qh, g.transpose(kh)), scale);
    if (rel >= 0) scores = g.add(scores, g.scale(g.relative_logits(qh, rel), scale));
    if (mask) scores = g.add_const(scores, *mask);
    if (g_attention_probe)
      g_attention_probe->record(g.val(scores).rows, g.val(scores).cols);
    Var attn = g.dropout(g.softmax_rows(scores), dropout_rate);
    outs.push_back(g.matmul(attn, vh));
  }
  Var o = linear(g, g.concat_cols(outs), p.wo, p.bo);
  return g.dropout(o, dropout_rate);
}

Var ffn(Graph& g, const FfnParams& p, Var x, double dropout_rate) {
  Var h = g.gelu(linear(g, x, p.w1, p.b1));
  return g.dropout(linear(g, h, p.w2, p.b2), dropout_rate);
}

nn::Tensor causal_mask(int t) {
  nn::Tensor m(t, t);
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) m.at(i, j) = -1e30;
  return m;
}

nn::Tensor timing_tensor(const std::vector<TimingCondition>& timing, int t) {
  nn::Tensor out(t, 3);
  for (int i = 0; i < t; ++i) {
    const TimingCondition& tc = timing[static_cast<size_t>(i)];
    if (!(tc.clip_start < tc.clip_end && tc.clip_end <= 1.0 + 1e-12) || tc.clip_start < 0.0)
      throw ValidationError("timing condition must satisfy 0 <= start < end <= 1");
    out.at(i, 0) = tc.song_length_bars / 256.0;
    out.at(i, 1) = tc.clip_start;
    out.at(i, 2) = tc.clip_end;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Context encoder
// ---------------------------------------------------------------------------

nn::Tensor PriorModel::blended_codes(const std::vector<MixtureCode>& codes, double beta,
                                     uint64_t noise_seed) const {
  if (beta < 0.0 || beta > 1.0) throw ValidationError("beta must lie in [0, 1]");
  int t = static_cast<int>(codes.size());
  nn::Tensor out(t, cfg_.mix_dim);
  Rng rng(noise_seed);
  for (int i = 0; i < t; ++i) {
    if (static_cast<int>(codes[static_cast<size_t>(i)].z.size()) != cfg_.mix_dim)
      throw ValidationError("mixture code has wrong dimension");
    for (int c = 0; c < cfg_.mix_dim; ++c) {
      double eps = rng.normal();
      out.at(i, c) = (1.0 - beta) * codes[static_cast<size_t>(i)].z[static_cast<size_t>(c)] +
                     beta * eps;
    }
  }
  return out;
}

Var PriorModel::context_graph(Graph& g, const Bound& b, const nn::Tensor& blended,
                              const std::vector<TimingCondition>& timing) const {
  int t = blended.rows;
  if (t < 1 || t > cfg_.max_steps)
    throw ValidationError("context length " + std::to_string(t) + " exceeds max_steps " +
                          std::to_string(cfg_.max_steps));
  Var timing_proj = linear(g, g.input(timing_tensor(timing, t)), b.timing_w, b.timing_b);
  Var x = g.add(linear(g, g.input(blended), b.ctx_in_w, b.ctx_in_b), timing_proj);
  for (const CtxLayer& layer : b.ctx) {
    x = g.add(x, attention(g, layer.attn, ln(g, layer.ln1, x), ln(g, layer.ln1, x), nullptr,
                           -1, cfg_.heads, cfg_.dropout));
    x = g.add(x, ffn(g, layer.ffn, ln(g, layer.ln2, x), cfg_.dropout));
  }
  return ln(g, b.ctx_final, x);
}

nn::Tensor PriorModel::encode_context(const std::vector<MixtureCode>& codes,
                                      const std::vector<TimingCondition>& timing, double beta,
                                      uint64_t noise_seed) const {
  if (codes.size() != timing.size())
    throw ValidationError("codes/timing length mismatch");
  Graph g;
  Bound b = bind(g, false);
  Var memory = context_graph(g, b, blended_codes(codes, beta, noise_seed), timing);
  return g.val(memory);
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

Var PriorModel::decoder_graph(Graph& g, const Bound& b,
                              const std::vector<std::vector<CodeGrouping>>& groupings,
                              const std::vector<int>& instruments,
                              const std::vector<TimingCondition>& timing, Var memory,
                              int n_tracks, int n_steps) const {
  if (n_tracks < 1 || n_tracks > cfg_.max_tracks)
    throw ValidationError("track count out of range: " + std::to_string(n_tracks));
  if (n_steps < 1 || n_steps > cfg_.max_steps)
    throw ValidationError("step count out of range: " + std::to_string(n_steps));

  Var timing_proj = linear(g, g.input(timing_tensor(timing, n_steps)), b.timing_w, b.timing_b);
  nn::Tensor ones(1, 9);
  ones.fill(1.0);
  Var pos_sum = g.matmul(g.input(ones), b.emb_pos);  // 1 x d, added to every grouping

  // per-track input embeddings, shifted right: position 0 is the start token
  std::vector<Var> per_track;
  for (int n = 0; n < n_tracks; ++n) {
    if (instruments[static_cast<size_t>(n)] < 0 ||
        instruments[static_cast<size_t>(n)] >= kNumInstrumentClasses)
      throw ValidationError("instrument class out of range");
    Var e;
    if (n_steps > 1) {
      std::vector<int> pitch_idx;
      std::array<std::vector<int>, 8> time_idx;
      for (int tau = 0; tau + 1 < n_steps; ++tau) {
        const CodeGrouping& z = groupings[static_cast<size_t>(tau)][static_cast<size_t>(n)];
        if (z.pitch_code < 0 || z.pitch_code >= cfg_.pitch_vocab)
          throw ValidationError("pitch code out of range");
        pitch_idx.push_back(z.pitch_code);
        for (int k = 0; k < 8; ++k) {
          int code = z.time_codes[static_cast<size_t>(k)];
          if (code < 0 || code >= cfg_.time_vocab)
            throw ValidationError("time code out of range");
          time_idx[static_cast<size_t>(k)].push_back(code);
        }
      }
      Var summed = g.rows(b.emb_pitch, pitch_idx);
      for (int k = 0; k < 8; ++k)
        summed = g.add(summed, g.rows(b.emb_time, time_idx[static_cast<size_t>(k)]));
      summed = g.add(summed, pos_sum);  // broadcast over the T-1 shifted rows
      e = g.concat_rows({b.emb_start, summed});
    } else {
      e = b.emb_start;
    }
    e = g.add(e, g.rows(b.emb_inst, {instruments[static_cast<size_t>(n)]}));
    e = g.add(e, timing_proj);
    per_track.push_back(g.dropout(e, cfg_.dropout));
  }
  Var state = g.concat_rows(per_track);  // (N*T) x d, track-major

  // permutations between track-major and step-major row layouts
  std::vector<int> to_step_major(static_cast<size_t>(n_tracks) * n_steps);
  std::vector<int> to_track_major(static_cast<size_t>(n_tracks) * n_steps);
  for (int n = 0; n < n_tracks; ++n)
    for (int tau = 0; tau < n_steps; ++tau) {
      to_step_major[static_cast<size_t>(tau) * n_tracks + n] = n * n_steps + tau;
      to_track_major[static_cast<size_t>(n) * n_steps + tau] = tau * n_tracks + n;
    }
  nn::Tensor mask = causal_mask(n_steps);

  for (int i = 0; i < cfg_.dec_layers; ++i) {
    const TimeLayer& tl = b.time[static_cast<size_t>(i)];
    std::vector<Var> rows_out;
    for (int n = 0; n < n_tracks; ++n) {
      Var x = g.slice_rows(state, n * n_steps, n_steps);
      x = g.add(x, attention(g, tl.self, ln(g, tl.ln1, x), ln(g, tl.ln1, x), &mask, -1,
                             cfg_.heads, cfg_.dropout));
      x = g.add(x, attention(g, tl.cross, ln(g, tl.lnx, x), memory, nullptr, -1, cfg_.heads,
                             cfg_.dropout));
      x = g.add(x, ffn(g, tl.ffn, ln(g, tl.ln2, x), cfg_.dropout));
      rows_out.push_back(x);
    }
    state = g.concat_rows(rows_out);

    const TrackLayer& kl = b.track[static_cast<size_t>(i)];
    Var step_major = g.rows(state, to_step_major);
    rows_out.clear();
    for (int tau = 0; tau < n_steps; ++tau) {
      Var x = g.slice_rows(step_major, tau * n_tracks, n_tracks);
      x = g.add(x, attention(g, kl.self, ln(g, kl.ln1, x), ln(g, kl.ln1, x), nullptr, kl.rel,
                             cfg_.heads, cfg_.dropout));
      x = g.add(x, ffn(g, kl.ffn, ln(g, kl.ln2, x), cfg_.dropout));
      rows_out.push_back(x);
    }
    state = g.rows(g.concat_rows(rows_out), to_track_major);
  }
  return ln(g, b.final_ln, state);
}

// ---------------------------------------------------------------------------
// Forward / loss
// ---------------------------------------------------------------------------

std::vector<PriorLogits> PriorModel::forward(
    const std::vector<std::vector<CodeGrouping>>& groupings, const std::vector<int>& instruments,
    const std::vector<TimingCondition>& timing, const nn::Tensor& memory) const {
  int t = static_cast<int>(groupings.size());
  int n = static_cast<int>(instruments.size());
  for (const auto& step : groupings)
    if (static_cast<int>(step.size()) != n)
      throw ValidationError("groupings/instruments track mismatch");
  if (static_cast<int>(timing.size()) != t) throw ValidationError("timing length mismatch");
  Graph g;
  Bound b = bind(g, false);
  Var mem = g.input(memory);
  Var state = decoder_graph(g, b, groupings, instruments, timing, mem, n, t);
  Var pitch = linear(g, state, b.head_pitch_w, b.head_pitch_b);
  std::array<Var, 8> time_logits{};
  for (int k = 0; k < 8; ++k)
    time_logits[static_cast<size_t>(k)] =
        linear(g, state, b.head_time_w[static_cast<size_t>(k)],
               b.head_time_b[static_cast<size_t>(k)]);

  std::vector<PriorLogits> out(static_cast<size_t>(t));
  for (int tau = 0; tau < t; ++tau) {
    PriorLogits& l = out[static_cast<size_t>(tau)];
    l.pitch = nn::Tensor(n, cfg_.pitch_vocab);
    for (int k = 0; k < 8; ++k) l.time[static_cast<size_t>(k)] = nn::Tensor(n, cfg_.time_vocab);
    for (int nn_ = 0; nn_ < n; ++nn_) {
      int row = nn_ * t + tau;
      for (int c = 0; c < cfg_.pitch_vocab; ++c)
        l.pitch.at(nn_, c) = g.val(pitch).at(row, c);
      for (int k = 0; k < 8; ++k)
        for (int c = 0; c < cfg_.time_vocab; ++c)
          l.time[static_cast<size_t>(k)].at(nn_, c) =
              g.val(time_logits[static_cast<size_t>(k)]).at(row, c);
    }
  }
  return out;
}

Var PriorModel::segment_loss_graph(Graph& g, const Bound& b, const Segment& segment,
                                   double beta, uint64_t noise_seed) const {
  int t = segment.steps();
  int n = segment.tracks();
  if (t < 1) throw ValidationError("segment has no steps");
  if (static_cast<int>(segment.groupings.size()) != t ||
      static_cast<int>(segment.timing.size()) != t)
    throw ValidationError("segment arrays disagree on step count");
  for (const auto& step : segment.groupings)
    if (static_cast<int>(step.size()) != n)
      throw ValidationError("segment groupings disagree on track count");

  Var memory = context_graph(g, b, blended_codes(segment.mix_codes, beta, noise_seed),
                             segment.timing);
  Var state = decoder_graph(g, b, segment.groupings, segment.instruments, segment.timing,
                            memory, n, t);

  std::vector<int> pitch_targets(static_cast<size_t>(n) * t);
  std::array<std::vector<int>, 8> time_targets;
  for (auto& v : time_targets) v.resize(static_cast<size_t>(n) * t);
  for (int nn_ = 0; nn_ < n; ++nn_)
    for (int tau = 0; tau < t; ++tau) {
      const CodeGrouping& z = segment.groupings[static_cast<size_t>(tau)][static_cast<size_t>(nn_)];
      pitch_targets[static_cast<size_t>(nn_) * t + tau] = z.pitch_code;
      for (int k = 0; k < 8; ++k)
        time_targets[static_cast<size_t>(k)][static_cast<size_t>(nn_) * t + tau] =
            z.time_codes[static_cast<size_t>(k)];
    }

  Var total = g.sum_all(
      g.nll_rows(linear(g, state, b.head_pitch_w, b.head_pitch_b), pitch_targets));
  for (int k = 0; k < 8; ++k) {
    Var logits = linear(g, state, b.head_time_w[static_cast<size_t>(k)],
                        b.head_time_b[static_cast<size_t>(k)]);
    total = g.add(total, g.sum_all(g.nll_rows(logits, time_targets[static_cast<size_t>(k)])));
  }
  return g.scale(total, 1.0 / (9.0 * n * t));
}

double PriorModel::segment_nll(const Segment& segment, double beta, uint64_t noise_seed) const {
  Graph g;
  Bound b = bind(g, false);
  return g.val(segment_loss_graph(g, b, segment, beta, noise_seed)).data[0];
}

double PriorModel::eval_nll(const std::vector<Segment>& segments, double beta,
                            uint64_t noise_seed) const {
  if (segments.empty()) throw ValidationError("eval_nll: empty segment list");
  double total = 0;
  uint64_t seed = noise_seed;
  for (const Segment& s : segments) total += segment_nll(s, beta, seed++);
  return total / static_cast<double>(segments.size());
}

double PriorModel::batch_loss(const std::vector<const Segment*>& batch,
                              const std::vector<double>& betas,
                              const std::vector<uint64_t>& noise_seeds, bool backprop) {
  if (batch.empty()) throw ValidationError("empty batch");
  if (betas.size() != batch.size() || noise_seeds.size() != batch.size())
    throw ValidationError("batch/betas/seeds size mismatch");
  Rng dropout_rng(noise_seeds[0] ^ 0xd1b54a32d192ed03ull);
  Graph g(backprop, &dropout_rng);
  Bound b = bind(g, backprop);
  Var loss = -1;
  for (size_t i = 0; i < batch.size(); ++i) {
    Var l = segment_loss_graph(g, b, *batch[i], betas[i], noise_seeds[i]);
    loss = i == 0 ? l : g.add(loss, l);
  }
  loss = g.scale(loss, 1.0 / static_cast<double>(batch.size()));
  if (backprop) {
    params_.zero_grad();
    g.backward(loss);
  }
  return g.val(loss).data[0];
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

std::vector<std::vector<CodeGrouping>> PriorModel::sample(
    const nn::Tensor& memory, const std::vector<int>& instruments,
    const std::vector<TimingCondition>& timing,
    const std::vector<std::vector<CodeGrouping>>& prompt, int total_steps,
    const SamplingConfig& sampling) const {
  int n = static_cast<int>(instruments.size());
  if (n < 1 || n > cfg_.max_tracks) throw ValidationError("track count out of range");
  if (total_steps < 1 || total_steps > cfg_.max_steps)
    throw ValidationError("step count out of range");
  if (static_cast<int>(timing.size()) != total_steps)
    throw ValidationError("timing length mismatch");
  if (static_cast<int>(prompt.size()) >= total_steps)
    throw ValidationError("prompt must be shorter than the requested sequence");
  for (const auto& step : prompt)
    if (static_cast<int>(step.size()) != n)
      throw ValidationError("prompt track count differs from requested tracks");

  int p = static_cast<int>(prompt.size());
  std::vector<std::vector<CodeGrouping>> out(static_cast<size_t>(total_steps),
                                             std::vector<CodeGrouping>(static_cast<size_t>(n)));
  for (int tau = 0; tau < p; ++tau) out[static_cast<size_t>(tau)] = prompt[static_cast<size_t>(tau)];

  Rng rng(sampling.seed);
  for (int tau = p; tau < total_steps; ++tau) {
    int prefix = tau + 1;
    std::vector<std::vector<CodeGrouping>> history(
        out.begin(), out.begin() + prefix);  // rows >= tau are placeholders
    std::vector<TimingCondition> timing_prefix(timing.begin(), timing.begin() + prefix);
    std::vector<PriorLogits> logits =
        forward(history, instruments, timing_prefix, memory);
    const PriorLogits& step = logits[static_cast<size_t>(tau)];
    for (int nn_ = 0; nn_ < n; ++nn_) {
      CodeGrouping& z = out[static_cast<size_t>(tau)][static_cast<size_t>(nn_)];
      std::span<const double> pitch_row(&step.pitch.at(nn_, 0),
                                        static_cast<size_t>(cfg_.pitch_vocab));
      z.pitch_code = nucleus_sample(pitch_row, sampling.nucleus_p, sampling.temperature, rng);
      for (int k = 0; k < 8; ++k) {
        std::span<const double> row(&step.time[static_cast<size_t>(k)].at(nn_, 0),
                                    static_cast<size_t>(cfg_.time_vocab));
        z.time_codes[static_cast<size_t>(k)] =
            nucleus_sample(row, sampling.nucleus_p, sampling.temperature, rng);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

PriorModel PriorModel::train(const std::vector<Segment>& corpus, const PriorConfig& cfg,
                             PriorTrainStats* stats, const std::vector<Segment>* validation) {
  if (corpus.empty()) throw ValidationError("empty training corpus");
  PriorModel model(cfg);
  Rng rng(cfg.seed ^ 0xa3ec647659359acdull);
  nn::Adam adam;

  std::vector<size_t> order(corpus.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // trigger shuffle on first use
  auto steps_per_epoch = std::max<int64_t>(
      1, static_cast<int64_t>((corpus.size() + static_cast<size_t>(cfg.batch) - 1) /
                              static_cast<size_t>(cfg.batch)));

  for (int64_t step = 0; step < cfg.train_steps; ++step) {
    std::vector<const Segment*> batch;
    std::vector<double> betas;
    std::vector<uint64_t> seeds;
    for (int i = 0; i < cfg.batch && static_cast<size_t>(i) < corpus.size(); ++i) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&corpus[order[cursor++]]);
      betas.push_back(rng.uniform());  // beta ~ U[0,1] per segment
      seeds.push_back(rng.next_u64());
    }
    double loss = model.batch_loss(batch, betas, seeds, true);
    adam.step(model.params_, nn::lr_schedule(cfg.lr, cfg.lr_final, step, cfg.train_steps));
    if (stats) stats->step_loss.push_back(loss);
    if (stats && validation && !validation->empty() && (step + 1) % steps_per_epoch == 0)
      stats->val_nll.push_back(model.eval_nll(*validation, 0.5, 1234));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoints & test hooks
// ---------------------------------------------------------------------------

void PriorModel::save(const std::string& path) const {
  nn::Checkpoint ck;
  ck.kind = "prior";
  ck.config_json = cfg_.to_json();
  ck.put_params(params_);
  ck.save(path);
}

PriorModel PriorModel::load(const std::string& path) {
  nn::Checkpoint ck = nn::Checkpoint::load(path);
  if (ck.kind != "prior") throw ValidationError("not a prior checkpoint: " + path);
  PriorModel model(PriorConfig::from_json(ck.config_json));
  ck.read_params(model.params_);
  return model;
}

void PriorModel::zero_relative_embeddings() {
  for (int i = 0; i < cfg_.dec_layers; ++i)
    params_["track" + std::to_string(i) + ".rel"].value.fill(0.0);
}

}  // namespace fullband
