#include "fullband/codec.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace fullband {

using nn::Graph;
using Var = nn::Graph::Var;

std::string CodecConfig::to_json() const {
  nlohmann::json j;
  j["hidden"] = hidden;
  j["func_hidden"] = func_hidden;
  j["mix_dim"] = mix_dim;
  j["pitch_latent_dim"] = pitch_latent_dim;
  j["time_channels"] = time_channels;
  j["pitch_codebook"] = pitch_codebook;
  j["time_codebook"] = time_codebook;
  j["instrument_embed"] = instrument_embed;
  j["commit_weight"] = commit_weight;
  j["ema_decay"] = ema_decay;
  j["restart_threshold"] = restart_threshold;
  j["epochs"] = epochs;
  j["batch"] = batch;
  j["lr"] = lr;
  j["lr_final"] = lr_final;
  j["seed"] = seed;
  return j.dump();
}

CodecConfig CodecConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  CodecConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.func_hidden = j.value("func_hidden", c.func_hidden);
  c.mix_dim = j.value("mix_dim", c.mix_dim);
  c.pitch_latent_dim = j.value("pitch_latent_dim", c.pitch_latent_dim);
  c.time_channels = j.value("time_channels", c.time_channels);
  c.pitch_codebook = j.value("pitch_codebook", c.pitch_codebook);
  c.time_codebook = j.value("time_codebook", c.time_codebook);
  c.instrument_embed = j.value("instrument_embed", c.instrument_embed);
  c.commit_weight = j.value("commit_weight", c.commit_weight);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.restart_threshold = j.value("restart_threshold", c.restart_threshold);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.lr_final = j.value("lr_final", c.lr_final);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::vector<ClipSample> make_clip_samples(const Piece& piece) {
  std::vector<ClipSample> out;
  auto clips = to_clips(piece);
  for (auto& clip : clips) {
    ClipSample s;
    s.mix = downmix(clip);
    for (int n = 0; n < clip.tracks; ++n) s.functions.push_back(track_function(clip, n));
    for (const auto& tr : piece.tracks) s.instruments.push_back(tr.instrument_class);
    s.clip = std::move(clip);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct CodecModel::BoundParams {
  Var me_w1, me_b1, me_w2, me_b2, me_w3, me_b3, me_w4, me_b4;
  Var pe_w1, pe_b1, pe_w2, pe_b2, pe_w3, pe_b3;
  Var te_w1, te_b1, te_w2, te_b2;
  Var de_w1, de_b1, de_w2, de_b2, de_w3, de_b3, de_inst;
};

namespace {

CodecModel::BoundParams bind_params(const nn::ParamStore& store, Graph& g, bool train);

void add_codec_params(nn::ParamStore& ps, const CodecConfig& c) {
  int h = c.hidden, fh = c.func_hidden;
  ps.add("mix.w1", 2 * kNumPitches, h);
  ps.add("mix.b1", 1, h);
  ps.add("mix.w2", 4 * h, h);
  ps.add("mix.b2", 1, h);
  ps.add("mix.w3", 4 * h, h);
  ps.add("mix.b3", 1, h);
  ps.add("mix.w4", h, c.mix_dim);
  ps.add("mix.b4", 1, c.mix_dim);
  ps.add("pitch.w1", 8, fh);
  ps.add("pitch.b1", 1, fh);
  ps.add("pitch.w2", 16 * fh, c.pitch_latent_dim);
  ps.add("pitch.b2", 1, c.pitch_latent_dim);
  ps.add("pitch.w3", c.pitch_latent_dim, c.pitch_latent_dim);
  ps.add("pitch.b3", 1, c.pitch_latent_dim);
  ps.add("time.w1", 4, c.time_channels);
  ps.add("time.b1", 1, c.time_channels);
  ps.add("time.w2", 8 * c.time_channels, c.pitch_latent_dim);
  ps.add("time.b2", 1, c.pitch_latent_dim);
  int u = c.mix_dim + 2 * c.pitch_latent_dim + c.instrument_embed;
  ps.add("dec.w1", u, 8 * h);
  ps.add("dec.b1", 1, 8 * h);
  ps.add("dec.w2", h, 4 * h);
  ps.add("dec.b2", 1, 4 * h);
  ps.add("dec.w3", h, 2 * kNumPitches);
  ps.add("dec.b3", 1, 2 * kNumPitches);
  ps.add("dec.inst", kNumInstrumentClasses, c.instrument_embed);
}

void init_codec_params(nn::ParamStore& ps, Rng& rng) {
  for (nn::Parameter* p : ps.all()) {
    if (p->name.starts_with("dec.inst"))
      nn::normal_init(p->value, rng, 0.02);
    else if (p->value.rows == 1)
      p->value.fill(0.0);  // biases
    else
      nn::xavier_init(p->value, rng);
  }
}

CodecModel::BoundParams bind_params(const nn::ParamStore& store, Graph& g, bool train) {
  auto& mut = const_cast<nn::ParamStore&>(store);
  auto bind = [&](const char* name) -> Var {
    return train ? g.param(mut[name]) : g.input(store[name].value);
  };
  CodecModel::BoundParams bp;
  bp.me_w1 = bind("mix.w1");
  bp.me_b1 = bind("mix.b1");
  bp.me_w2 = bind("mix.w2");
  bp.me_b2 = bind("mix.b2");
  bp.me_w3 = bind("mix.w3");
  bp.me_b3 = bind("mix.b3");
  bp.me_w4 = bind("mix.w4");
  bp.me_b4 = bind("mix.b4");
  bp.pe_w1 = bind("pitch.w1");
  bp.pe_b1 = bind("pitch.b1");
  bp.pe_w2 = bind("pitch.w2");
  bp.pe_b2 = bind("pitch.b2");
  bp.pe_w3 = bind("pitch.w3");
  bp.pe_b3 = bind("pitch.b3");
  bp.te_w1 = bind("time.w1");
  bp.te_b1 = bind("time.b1");
  bp.te_w2 = bind("time.w2");
  bp.te_b2 = bind("time.b2");
  bp.de_w1 = bind("dec.w1");
  bp.de_b1 = bind("dec.b1");
  bp.de_w2 = bind("dec.w2");
  bp.de_b2 = bind("dec.b2");
  bp.de_w3 = bind("dec.w3");
  bp.de_b3 = bind("dec.b3");
  bp.de_inst = bind("dec.inst");
  return bp;
}

nn::Tensor clip_planes(const ClipGrid& clip, int track) {
  nn::Tensor x(kClipSteps, 2 * kNumPitches);
  for (int s = 0; s < kClipSteps; ++s)
    for (int p = 0; p < kNumPitches; ++p) {
      x.at(s, p) = clip.on(track, s, p);
      x.at(s, kNumPitches + p) = clip.sus(track, s, p);
    }
  return x;
}

Var linear(Graph& g, Var x, Var w, Var b) { return g.add(g.matmul(x, w), b); }

}  // namespace

CodecModel::CodecModel(const CodecConfig& cfg)
    : cfg_(cfg),
      pitch_book_(cfg.pitch_codebook, cfg.pitch_latent_dim),
      time_book_(cfg.time_codebook, cfg.time_channels) {
  add_codec_params(params_, cfg_);
  Rng rng(cfg_.seed);
  init_codec_params(params_, rng);
  pitch_book_.init_random(rng, 0.1);
  time_book_.init_random(rng, 0.1);
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

Var CodecModel::mixture_graph(Graph& g, const BoundParams& bp, const ClipGrid& mix) const {
  Var x = g.input(clip_planes(mix, 0));
  Var h1 = g.gelu(linear(g, x, bp.me_w1, bp.me_b1));            // 32 x H
  Var h2 = g.gelu(linear(g, g.reshape(h1, 8, 4 * cfg_.hidden), bp.me_w2, bp.me_b2));
  Var h3 = g.gelu(linear(g, g.reshape(h2, 2, 4 * cfg_.hidden), bp.me_w3, bp.me_b3));
  nn::Tensor pool(1, 2);
  pool.fill(0.5);
  Var pooled = g.matmul(g.input(pool), h3);                     // mean over the 2 frames
  return linear(g, pooled, bp.me_w4, bp.me_b4);                 // 1 x 256
}

Var CodecModel::pitch_latent_graph(Graph& g, const BoundParams& bp,
                                   const TrackFunction& fn) const {
  nn::Tensor x(1, kNumPitches);
  std::copy(fn.pitch_fn.begin(), fn.pitch_fn.end(), x.data.begin());
  Var windows = g.reshape(g.input(std::move(x)), 16, 8);        // conv kernel 8, stride 8
  Var h = g.gelu(linear(g, windows, bp.pe_w1, bp.pe_b1));       // 16 x Fh
  Var pre = g.gelu(linear(g, g.reshape(h, 1, 16 * cfg_.func_hidden), bp.pe_w2, bp.pe_b2));
  return linear(g, pre, bp.pe_w3, bp.pe_b3);                    // FC bottleneck, 1 x 128
}

Var CodecModel::time_frames_graph(Graph& g, const BoundParams& bp,
                                  const TrackFunction& fn) const {
  nn::Tensor x(1, kClipSteps);
  std::copy(fn.time_fn.begin(), fn.time_fn.end(), x.data.begin());
  Var frames = g.reshape(g.input(std::move(x)), 8, 4);          // conv kernel 4, stride 4
  return linear(g, frames, bp.te_w1, bp.te_b1);                 // 8 x 16, quantized per row
}

Var CodecModel::decode_graph(Graph& g, const BoundParams& bp, Var mix_z, Var pitch_code,
                             Var time_frames, int instrument) const {
  if (instrument < 0 || instrument >= kNumInstrumentClasses)
    throw ValidationError("instrument class out of range");
  Var time_latent = linear(g, g.reshape(time_frames, 1, 8 * cfg_.time_channels), bp.te_w2,
                           bp.te_b2);
  Var inst = g.rows(bp.de_inst, {instrument});
  Var u = g.concat_cols({mix_z, pitch_code, time_latent, inst});
  Var h = g.gelu(linear(g, u, bp.de_w1, bp.de_b1));             // 1 x 8H
  Var frames = g.gelu(linear(g, g.reshape(h, 8, cfg_.hidden), bp.de_w2, bp.de_b2));
  Var steps = linear(g, g.reshape(frames, kClipSteps, cfg_.hidden), bp.de_w3, bp.de_b3);
  return steps;                                                 // 32 x 256 logits
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

MixtureCode CodecModel::encode_mixture(const ClipGrid& clip) const {
  if (clip.tracks != 1)
    throw ValidationError("encode_mixture expects a single-track clip; downmix first");
  Graph g;
  BoundParams bp = bind_params(params_, g, false);
  Var z = mixture_graph(g, bp, clip);
  return MixtureCode{g.val(z).data};
}

CodecModel::FunctionEncoding CodecModel::encode_function(const TrackFunction& fn) const {
  Graph g;
  BoundParams bp = bind_params(params_, g, false);
  Var lat_p = pitch_latent_graph(g, bp, fn);
  Var frames = time_frames_graph(g, bp, fn);
  FunctionEncoding out;
  out.pitch_latent = g.val(lat_p).data;
  out.time_frames = g.val(frames);
  out.grouping.pitch_code = pitch_book_.quantize(out.pitch_latent).first;
  for (int f = 0; f < 8; ++f) {
    std::span<const double> row(&out.time_frames.at(f, 0),
                                static_cast<size_t>(cfg_.time_channels));
    out.grouping.time_codes[static_cast<size_t>(f)] = time_book_.quantize(row).first;
  }
  return out;
}

ClipGrid CodecModel::decode(const MixtureCode& mix, const std::vector<CodeGrouping>& groupings,
                            const std::vector<int>& instruments) const {
  size_t n = groupings.size();
  if (n < 1 || n > 16) throw ValidationError("decode supports 1..16 tracks");
  if (instruments.size() != n) throw ValidationError("decode: instruments/groupings mismatch");
  if (static_cast<int>(mix.z.size()) != cfg_.mix_dim)
    throw ValidationError("decode: bad mixture code dimension");
  ClipGrid out(static_cast<int>(n));
  Graph g;
  BoundParams bp = bind_params(params_, g, false);
  Var mix_z = g.input(nn::Tensor::row(mix.z));
  for (size_t t = 0; t < n; ++t) {
    Var pitch_code = g.input(nn::Tensor::row(pitch_book_.entry(groupings[t].pitch_code)));
    nn::Tensor frames(8, cfg_.time_channels);
    for (int f = 0; f < 8; ++f) {
      auto row = time_book_.entry(groupings[t].time_codes[static_cast<size_t>(f)]);
      std::copy(row.begin(), row.end(), frames.data.begin() + f * cfg_.time_channels);
    }
    Var logits = decode_graph(g, bp, mix_z, pitch_code, g.input(std::move(frames)),
                              instruments[t]);
    const nn::Tensor& y = g.val(logits);
    for (int s = 0; s < kClipSteps; ++s)
      for (int p = 0; p < kNumPitches; ++p) {
        bool on = y.at(s, p) > 0.0;  // sigmoid(x) > 0.5 <=> x > 0
        bool sus = y.at(s, kNumPitches + p) > 0.0;
        if (on)
          out.set_on(static_cast<int>(t), s, p);
        else if (sus)
          out.set_sus(static_cast<int>(t), s, p);
      }
  }
  // clear orphan sustains so the grid invariant holds (s = 0 may continue a
  // note from the previous clip and is kept)
  for (int t = 0; t < out.tracks; ++t)
    for (int s = 1; s < kClipSteps; ++s)
      for (int p = 0; p < kNumPitches; ++p)
        if (out.sus(t, s, p) && !out.on(t, s - 1, p) && !out.sus(t, s - 1, p))
          out.set_sus(t, s, p, 0);
  return out;
}

CodecModel::EncodedPiece CodecModel::encode_piece(const Piece& piece) const {
  EncodedPiece out;
  auto clips = to_clips(piece);
  for (const auto& tr : piece.tracks) out.instruments.push_back(tr.instrument_class);
  for (const auto& clip : clips) {
    out.mix_codes.push_back(encode_mixture(downmix(clip)));
    std::vector<CodeGrouping> gs;
    for (int n = 0; n < clip.tracks; ++n)
      gs.push_back(encode_function(track_function(clip, n)).grouping);
    out.groupings.push_back(std::move(gs));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

VqPins CodecModel::compute_pins(const std::vector<ClipSample>& batch) const {
  VqPins pins;
  for (const auto& sample : batch)
    for (const auto& fn : sample.functions) {
      FunctionEncoding enc = encode_function(fn);
      pins.pitch.push_back(enc.grouping.pitch_code);
      pins.time.push_back(enc.grouping.time_codes);
    }
  return pins;
}

double CodecModel::batch_loss(const std::vector<ClipSample>& batch, const VqPins* pins,
                              bool backprop, nn::Tensor* pitch_latents,
                              std::vector<int>* pitch_assign, nn::Tensor* time_latents,
                              std::vector<int>* time_assign, bool continuous_relaxation) {
  if (batch.empty()) throw ValidationError("empty batch");
  Graph g;
  BoundParams bp = bind_params(params_, g, backprop);
  std::vector<Var> sample_losses;
  size_t flat = 0;
  std::vector<std::vector<double>> p_lat_rows;
  std::vector<std::vector<double>> t_lat_rows;

  for (const auto& sample : batch) {
    int n_tracks = sample.clip.tracks;
    if (n_tracks < 1) throw ValidationError("sample with no tracks");
    Var mix_z = mixture_graph(g, bp, sample.mix);
    std::vector<Var> track_losses;
    for (int t = 0; t < n_tracks; ++t, ++flat) {
      Var lat_p = pitch_latent_graph(g, bp, sample.functions[static_cast<size_t>(t)]);
      Var frames = time_frames_graph(g, bp, sample.functions[static_cast<size_t>(t)]);

      // copies: later graph ops may reallocate the node storage
      const nn::Tensor lat_p_val = g.val(lat_p);
      int p_idx = pins ? pins->pitch[flat] : pitch_book_.quantize(lat_p_val.data).first;
      nn::Tensor p_code = nn::Tensor::row(pitch_book_.entry(p_idx));

      const nn::Tensor frames_val = g.val(frames);
      nn::Tensor t_codes(8, cfg_.time_channels);
      std::array<int, 8> t_idx{};
      for (int f = 0; f < 8; ++f) {
        std::span<const double> row(&frames_val.at(f, 0),
                                    static_cast<size_t>(cfg_.time_channels));
        t_idx[static_cast<size_t>(f)] =
            pins ? pins->time[flat][static_cast<size_t>(f)] : time_book_.quantize(row).first;
        auto code = time_book_.entry(t_idx[static_cast<size_t>(f)]);
        std::copy(code.begin(), code.end(), t_codes.data.begin() + f * cfg_.time_channels);
      }

      if (pitch_latents) {
        p_lat_rows.push_back(lat_p_val.data);
        pitch_assign->push_back(p_idx);
        for (int f = 0; f < 8; ++f) {
          t_lat_rows.emplace_back(frames_val.data.begin() + f * cfg_.time_channels,
                                  frames_val.data.begin() + (f + 1) * cfg_.time_channels);
          time_assign->push_back(t_idx[static_cast<size_t>(f)]);
        }
      }

      // commitment pulls the encoder toward the (frozen) codes
      Var dp = g.sub(lat_p, g.input(p_code));
      Var commit_p = g.mean_all(g.mul(dp, dp));
      Var dt = g.sub(frames, g.input(t_codes));
      Var commit_t = g.mean_all(g.mul(dt, dt));

      Var st_p = continuous_relaxation ? lat_p : g.straight_through(lat_p, std::move(p_code));
      Var st_t = continuous_relaxation ? frames : g.straight_through(frames, std::move(t_codes));
      Var logits = decode_graph(g, bp, mix_z, st_p, st_t,
                                sample.instruments[static_cast<size_t>(t)]);
      // class-balanced reconstruction loss; the 0.5 decode threshold is
      // unbiased under this weighting
      nn::Tensor targets = clip_planes(sample.clip, t);
      double positives = 0;
      for (double v : targets.data) positives += v;
      double total_cells = static_cast<double>(targets.size());
      double f_pos = std::max(positives / total_cells, 1e-6);
      double f_neg = std::max(1.0 - positives / total_cells, 1e-6);
      nn::Tensor weights(targets.rows, targets.cols);
      for (size_t w = 0; w < weights.data.size(); ++w)
        weights.data[w] = targets.data[w] > 0.5 ? 0.5 / f_pos : 0.5 / f_neg;
      Var bce = g.bce_with_logits_weighted(logits, std::move(targets), std::move(weights));
      Var commit = g.scale(g.add(commit_p, commit_t), cfg_.commit_weight);
      track_losses.push_back(g.add(bce, commit));
    }
    Var total = track_losses[0];
    for (size_t i = 1; i < track_losses.size(); ++i) total = g.add(total, track_losses[i]);
    sample_losses.push_back(g.scale(total, 1.0 / static_cast<double>(n_tracks)));
  }
  Var loss = sample_losses[0];
  for (size_t i = 1; i < sample_losses.size(); ++i) loss = g.add(loss, sample_losses[i]);
  loss = g.scale(loss, 1.0 / static_cast<double>(sample_losses.size()));

  if (pitch_latents) {
    *pitch_latents = nn::Tensor(static_cast<int>(p_lat_rows.size()), cfg_.pitch_latent_dim);
    for (size_t i = 0; i < p_lat_rows.size(); ++i)
      std::copy(p_lat_rows[i].begin(), p_lat_rows[i].end(),
                pitch_latents->data.begin() +
                    static_cast<ptrdiff_t>(i) * cfg_.pitch_latent_dim);
    *time_latents = nn::Tensor(static_cast<int>(t_lat_rows.size()), cfg_.time_channels);
    for (size_t i = 0; i < t_lat_rows.size(); ++i)
      std::copy(t_lat_rows[i].begin(), t_lat_rows[i].end(),
                time_latents->data.begin() + static_cast<ptrdiff_t>(i) * cfg_.time_channels);
  }

  if (backprop) {
    params_.zero_grad();
    g.backward(loss);
  }
  return g.val(loss).data[0];
}

CodecModel CodecModel::train(const std::vector<Piece>& corpus, const CodecConfig& cfg,
                             CodecTrainStats* stats) {
  if (corpus.empty()) throw ValidationError("empty training corpus");
  std::vector<ClipSample> samples;
  for (const auto& piece : corpus) {
    auto s = make_clip_samples(piece);
    samples.insert(samples.end(), std::make_move_iterator(s.begin()),
                   std::make_move_iterator(s.end()));
  }
  if (samples.empty()) throw ValidationError("corpus produced no clips");

  CodecModel model(cfg);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  nn::Adam adam;
  auto batches_per_epoch = static_cast<int64_t>(
      (samples.size() + static_cast<size_t>(cfg.batch) - 1) / static_cast<size_t>(cfg.batch));
  int64_t total_steps = batches_per_epoch * cfg.epochs;
  int64_t step = 0;

  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    model.pitch_book_.reset_usage();
    model.time_book_.reset_usage();
    std::vector<std::vector<double>> pitch_pool, time_pool;
    double epoch_loss = 0;
    int64_t batches = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch)) {
      std::vector<ClipSample> batch;
      for (size_t i = at; i < std::min(order.size(), at + static_cast<size_t>(cfg.batch)); ++i)
        batch.push_back(samples[order[i]]);
      nn::Tensor p_lat, t_lat;
      std::vector<int> p_idx, t_idx;
      double loss = model.batch_loss(batch, nullptr, true, &p_lat, &p_idx, &t_lat, &t_idx);
      adam.step(model.params_, nn::lr_schedule(cfg.lr, cfg.lr_final, step, total_steps));
      ++step;
      model.pitch_book_.ema_update(p_lat, p_idx, cfg.ema_decay);
      model.time_book_.ema_update(t_lat, t_idx, cfg.ema_decay);
      model.pitch_book_.accumulate_usage(p_idx);
      model.time_book_.accumulate_usage(t_idx);
      for (int r = 0; r < p_lat.rows; ++r)
        pitch_pool.emplace_back(p_lat.data.begin() + r * p_lat.cols,
                                p_lat.data.begin() + (r + 1) * p_lat.cols);
      for (int r = 0; r < t_lat.rows; ++r)
        time_pool.emplace_back(t_lat.data.begin() + r * t_lat.cols,
                               t_lat.data.begin() + (r + 1) * t_lat.cols);
      epoch_loss += loss;
      ++batches;
    }
    int pr = model.pitch_book_.random_restart(pitch_pool, cfg.restart_threshold, rng);
    int tr = model.time_book_.random_restart(time_pool, cfg.restart_threshold, rng);
    if (stats) {
      stats->epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
      stats->pitch_restarts.push_back(pr);
      stats->time_restarts.push_back(tr);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void CodecModel::save(const std::string& path) const {
  nn::Checkpoint ck;
  ck.kind = "codec";
  ck.config_json = cfg_.to_json();
  ck.put_params(params_);
  pitch_book_.put(ck, "pitch");
  time_book_.put(ck, "time");
  ck.save(path);
}

CodecModel CodecModel::load(const std::string& path) {
  nn::Checkpoint ck = nn::Checkpoint::load(path);
  if (ck.kind != "codec") throw ValidationError("not a codec checkpoint: " + path);
  CodecModel model(CodecConfig::from_json(ck.config_json));
  ck.read_params(model.params_);
  model.pitch_book_ = Codebook::from(ck, "pitch");
  model.time_book_ = Codebook::from(ck, "time");
  return model;
}

}  // namespace fullband
