#pragma once

#include <array>
#include <span>
#include <vector>

#include "fullband/score.hpp"

namespace fullband {

// Per-track style descriptor of one 2-bar clip.
//   pitch_fn[p]: fraction of the 32 steps where pitch p sounds
//   time_fn[s]:  onset count at step s, clipped at 4, divided by 4
struct TrackFunction {
  std::array<double, kNumPitches> pitch_fn{};
  std::array<double, kClipSteps> time_fn{};
};

TrackFunction track_function(const ClipGrid& clip, int track);

// Per-bar descriptors used by the evaluation metrics. Bars are always the
// 16-position 4/4 unit; 2/4 pieces are viewed pairwise.
struct BarFeatures {
  std::array<double, 12> pitch_hist{};        // sounding cells per pitch class
  std::array<double, 16> voice_intensity{};   // simultaneous onsets per position
  std::array<uint8_t, 16> groove{};           // 1 where voice_intensity >= 1
};

inline constexpr int kMixtureScope = -1;

// Number of 16-step metric bars in a piece.
int64_t metric_bar_count(const Piece& piece);

BarFeatures bar_features(const Piece& piece, int64_t bar, int scope = kMixtureScope);

// Beat-level chord recognition by template matching over all 96 symbols.
// The per-beat profile is the duration-weighted pitch-class presence of the
// mixture (union over octaves and tracks), which makes recognition exactly
// invariant to octave doubling. Score per template:
//   (sum of chord-tone mass - 0.5 * non-chord-tone mass) / total mass,
// ties to the lowest chord index. Silent beats carry the previous chord;
// leading silence is C:M.
std::vector<ChordSymbol> recognize_chords(const Piece& piece);

// Cosine similarity with the zero-vector convention: 1 when both vectors are
// zero, 0 when exactly one is.
double cosine(std::span<const double> u, std::span<const double> v);

// concat(pitch_fn, time_fn) as one 160-D vector, the donor-search descriptor.
std::vector<double> function_descriptor(const TrackFunction& fn);

// Feature dump for test fixtures: all bar features and per-clip track
// functions of a piece as JSON arrays keyed by piece id and bar/clip index.
std::string features_to_json(const Piece& piece, const std::string& piece_id);

}  // namespace fullband
