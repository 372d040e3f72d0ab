#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "fullband/codec.hpp"
#include "fullband/nn.hpp"

namespace fullband {

// Position of one clip inside the complete song, as bar counts/fractions.
struct TimingCondition {
  double song_length_bars = 0;
  double clip_start = 0;  // fraction of the song, [0, 1]
  double clip_end = 0;    // fraction of the song, (start, 1]
};

// One training item: an encoded segment of at most max_steps clips.
struct Segment {
  std::string id;
  std::vector<MixtureCode> mix_codes;                // [T]
  std::vector<std::vector<CodeGrouping>> groupings;  // [T][N]
  std::vector<int> instruments;                      // [N]
  std::vector<TimingCondition> timing;               // [T]

  int steps() const { return static_cast<int>(mix_codes.size()); }
  int tracks() const { return static_cast<int>(instruments.size()); }
};

struct PriorConfig {
  int d_model = 64;
  int d_ff = 256;
  int heads = 4;
  int dec_layers = 2;  // time-decoder layers, each interleaved with a track layer
  int enc_layers = 2;  // context encoder
  int max_tracks = 8;
  int max_steps = 8;
  double dropout = 0.1;
  int pitch_vocab = 64;
  int time_vocab = 128;
  int mix_dim = 256;
  // training
  int train_steps = 2000;
  int batch = 8;
  double lr = 1e-3;
  double lr_final = 1e-5;
  uint64_t seed = 1;

  // 256/1024, 8 heads, 2+4+4 layers, 16 tracks x 16 clips, batch 32
  static PriorConfig full_scale();

  std::string to_json() const;
  static PriorConfig from_json(const std::string& text);
};

struct SamplingConfig {
  double nucleus_p = 0.1;
  double temperature = 4.0;
  uint64_t seed = 0;
};

// Smallest-prefix nucleus sampling after temperature scaling; cumulative ties
// broken by index. Exposed for direct testing.
std::vector<double> nucleus_distribution(std::span<const double> logits, double p,
                                         double temperature);
int nucleus_sample(std::span<const double> logits, double p, double temperature, Rng& rng);

// Records the shape of every attention score matrix that gets materialized.
struct AttentionProbe {
  int max_dim = 0;
  int64_t matrices = 0;
  void record(int rows, int cols) {
    max_dim = std::max({max_dim, rows, cols});
    ++matrices;
  }
};

// Logits predicting the code grouping of one step, per track.
struct PriorLogits {
  nn::Tensor pitch;                 // N x 64
  std::array<nn::Tensor, 8> time;  // N x 128 each
};

struct PriorTrainStats {
  std::vector<double> step_loss;
  std::vector<double> val_nll;  // per epoch, beta = 0.5
};

// Autoregressive prior over code groupings with orthogonally interleaved
// time-decoder and track-encoder layers, cross-attending to a noise-blended
// context sequence.
class PriorModel {
 public:
  explicit PriorModel(const PriorConfig& cfg);

  const PriorConfig& config() const { return cfg_; }

  // Context memory over the (noise-blended) code sequence:
  // input_t = (1 - beta) * z_t + beta * eps_t, eps drawn once per call.
  nn::Tensor encode_context(const std::vector<MixtureCode>& codes,
                            const std::vector<TimingCondition>& timing, double beta,
                            uint64_t noise_seed) const;

  // Teacher-forced logits for every step. groupings[tau][n] are the targets;
  // inputs are shifted right internally (step 0 sees the start embedding).
  std::vector<PriorLogits> forward(const std::vector<std::vector<CodeGrouping>>& groupings,
                                   const std::vector<int>& instruments,
                                   const std::vector<TimingCondition>& timing,
                                   const nn::Tensor& memory) const;

  // Eq.-style mean NLL: (1/(9*N*T)) * sum of per-code negative log-likelihood.
  double segment_nll(const Segment& segment, double beta, uint64_t noise_seed) const;
  double eval_nll(const std::vector<Segment>& segments, double beta, uint64_t noise_seed) const;

  // Training loss over a batch with per-segment beta/noise; fills parameter
  // gradients when backprop is set.
  double batch_loss(const std::vector<const Segment*>& batch, const std::vector<double>& betas,
                    const std::vector<uint64_t>& noise_seeds, bool backprop);

  // Ancestral sampling with nucleus truncation. Prompt steps (possibly none)
  // are copied verbatim; generation starts after them.
  std::vector<std::vector<CodeGrouping>> sample(
      const nn::Tensor& memory, const std::vector<int>& instruments,
      const std::vector<TimingCondition>& timing,
      const std::vector<std::vector<CodeGrouping>>& prompt, int total_steps,
      const SamplingConfig& sampling) const;

  static PriorModel train(const std::vector<Segment>& corpus, const PriorConfig& cfg,
                          PriorTrainStats* stats = nullptr,
                          const std::vector<Segment>* validation = nullptr);

  void save(const std::string& path) const;
  static PriorModel load(const std::string& path);

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // test hooks
  static void set_attention_probe(AttentionProbe* probe);
  void zero_relative_embeddings();

 private:
  struct BoundParams;
  struct Bound;

  Bound bind(nn::Graph& g, bool train) const;
  nn::Graph::Var context_graph(nn::Graph& g, const Bound& b, const nn::Tensor& blended,
                               const std::vector<TimingCondition>& timing) const;
  nn::Graph::Var decoder_graph(nn::Graph& g, const Bound& b,
                               const std::vector<std::vector<CodeGrouping>>& groupings,
                               const std::vector<int>& instruments,
                               const std::vector<TimingCondition>& timing,
                               nn::Graph::Var memory, int n_tracks, int n_steps) const;
  nn::Graph::Var segment_loss_graph(nn::Graph& g, const Bound& b, const Segment& segment,
                                    double beta, uint64_t noise_seed) const;
  nn::Tensor blended_codes(const std::vector<MixtureCode>& codes, double beta,
                           uint64_t noise_seed) const;

  PriorConfig cfg_;
  nn::ParamStore params_;
};

}  // namespace fullband
