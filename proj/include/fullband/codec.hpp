#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fullband/features.hpp"
#include "fullband/nn.hpp"
#include "fullband/score.hpp"
#include "fullband/vq.hpp"

namespace fullband {

// 256-D continuous content code of one downmixed 2-bar clip.
struct MixtureCode {
  std::vector<double> z;
};

// The 9 discrete style codes of one track clip: one bar-level pitch code
// plus eight beat-level time codes.
struct CodeGrouping {
  int pitch_code = 0;               // [0, 64)
  std::array<int, 8> time_codes{};  // each [0, 128)

  friend bool operator==(const CodeGrouping&, const CodeGrouping&) = default;
};

struct CodecConfig {
  int hidden = 64;        // mixture encoder / decoder width
  int func_hidden = 32;   // pitch-branch conv channels
  int mix_dim = 256;
  int pitch_latent_dim = 128;
  int time_channels = 16;
  int pitch_codebook = 64;
  int time_codebook = 128;
  int instrument_embed = 16;
  double commit_weight = 0.25;
  double ema_decay = 0.99;
  double restart_threshold = 1.0;
  // training
  int epochs = 30;
  int batch = 8;
  double lr = 1e-3;
  double lr_final = 1e-5;
  uint64_t seed = 1;

  std::string to_json() const;
  static CodecConfig from_json(const std::string& text);
};

// One training unit: a 2-bar multi-track clip with its downmix and the
// per-track function descriptors.
struct ClipSample {
  ClipGrid clip;  // all tracks
  ClipGrid mix;   // 1-track downmix
  std::vector<TrackFunction> functions;
  std::vector<int> instruments;
};

std::vector<ClipSample> make_clip_samples(const Piece& piece);

// Pinned VQ assignments, used to hold the non-differentiable nearest-neighbor
// choice fixed across finite-difference evaluations.
struct VqPins {
  std::vector<int> pitch;                    // one per (sample, track)
  std::vector<std::array<int, 8>> time;      // one per (sample, track)
};

struct CodecTrainStats {
  std::vector<double> epoch_loss;
  std::vector<int> pitch_restarts;
  std::vector<int> time_restarts;
};

// Mixture encoder, VQ'd pitch/time function query-nets, and the per-track
// clip decoder; trained self-supervised by separating downmixed clips back
// into their tracks.
class CodecModel {
 public:
  explicit CodecModel(const CodecConfig& cfg);

  const CodecConfig& config() const { return cfg_; }

  MixtureCode encode_mixture(const ClipGrid& clip) const;

  struct FunctionEncoding {
    CodeGrouping grouping;
    std::vector<double> pitch_latent;  // 128-D continuous pre-VQ
    nn::Tensor time_frames;            // 8 x 16 continuous pre-VQ
  };
  FunctionEncoding encode_function(const TrackFunction& fn) const;

  // Per-track decoding of onset/sustain grids, thresholded at 0.5 and
  // normalized so that the ClipGrid invariants hold (onset wins over
  // sustain; orphan sustains are cleared).
  ClipGrid decode(const MixtureCode& mix, const std::vector<CodeGrouping>& groupings,
                  const std::vector<int>& instruments) const;

  // Whole-piece convenience used by dataset preparation and the prior.
  struct EncodedPiece {
    std::vector<MixtureCode> mix_codes;                // per clip
    std::vector<std::vector<CodeGrouping>> groupings;  // [clip][track]
    std::vector<int> instruments;
  };
  EncodedPiece encode_piece(const Piece& piece) const;

  // Training loss over a batch; fills parameter gradients when backprop is
  // set. Pins override the VQ assignments when given. Returns the loss and,
  // through the out-params, the per-branch latents and assignments of this
  // batch (for EMA updates). With continuous_relaxation the decoder consumes
  // the continuous latents instead of the straight-through codes, which makes
  // the loss exactly differentiable for finite-difference checks (the VQ
  // assignment is excluded per the straight-through contract).
  double batch_loss(const std::vector<ClipSample>& batch, const VqPins* pins, bool backprop,
                    nn::Tensor* pitch_latents = nullptr, std::vector<int>* pitch_assign = nullptr,
                    nn::Tensor* time_latents = nullptr, std::vector<int>* time_assign = nullptr,
                    bool continuous_relaxation = false);

  VqPins compute_pins(const std::vector<ClipSample>& batch) const;

  static CodecModel train(const std::vector<Piece>& corpus, const CodecConfig& cfg,
                          CodecTrainStats* stats = nullptr);

  void save(const std::string& path) const;
  static CodecModel load(const std::string& path);

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  Codebook& pitch_book() { return pitch_book_; }
  Codebook& time_book() { return time_book_; }

  struct BoundParams;  // per-graph parameter bindings, defined in codec.cpp

 private:
  nn::Graph::Var mixture_graph(nn::Graph& g, const BoundParams& bp, const ClipGrid& mix) const;
  nn::Graph::Var pitch_latent_graph(nn::Graph& g, const BoundParams& bp,
                                    const TrackFunction& fn) const;
  nn::Graph::Var time_frames_graph(nn::Graph& g, const BoundParams& bp,
                                   const TrackFunction& fn) const;
  nn::Graph::Var decode_graph(nn::Graph& g, const BoundParams& bp, nn::Graph::Var mix_z,
                              nn::Graph::Var pitch_code, nn::Graph::Var time_frames,
                              int instrument) const;

  CodecConfig cfg_;
  nn::ParamStore params_;
  Codebook pitch_book_;
  Codebook time_book_;
};

}  // namespace fullband
