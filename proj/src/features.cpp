#include "fullband/features.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace fullband {

TrackFunction track_function(const ClipGrid& clip, int track) {
  if (track < 0 || track >= clip.tracks)
    throw ValidationError("track index out of range: " + std::to_string(track));
  TrackFunction fn;
  for (int s = 0; s < kClipSteps; ++s) {
    int onsets = 0;
    for (int p = 0; p < kNumPitches; ++p) {
      if (clip.on(track, s, p) || clip.sus(track, s, p))
        fn.pitch_fn[static_cast<size_t>(p)] += 1.0 / kClipSteps;
      if (clip.on(track, s, p)) ++onsets;
    }
    fn.time_fn[static_cast<size_t>(s)] = std::min(onsets, 4) / 4.0;
  }
  return fn;
}

int64_t metric_bar_count(const Piece& piece) {
  return (piece.total_steps() + kStepsPerBar44 - 1) / kStepsPerBar44;
}

BarFeatures bar_features(const Piece& piece, int64_t bar, int scope) {
  if (bar < 0 || bar >= metric_bar_count(piece))
    throw ValidationError("bar index out of range: " + std::to_string(bar));
  if (scope != kMixtureScope &&
      (scope < 0 || scope >= static_cast<int>(piece.tracks.size())))
    throw ValidationError("track scope out of range: " + std::to_string(scope));
  int64_t lo = bar * kStepsPerBar44;
  int64_t hi = lo + kStepsPerBar44;
  BarFeatures f;
  for (size_t t = 0; t < piece.tracks.size(); ++t) {
    if (scope != kMixtureScope && static_cast<int>(t) != scope) continue;
    for (const auto& n : piece.tracks[t].notes) {
      int64_t a = std::max(n.onset, lo);
      int64_t b = std::min(n.onset + n.duration, hi);
      if (a < b) f.pitch_hist[static_cast<size_t>(n.pitch % 12)] += static_cast<double>(b - a);
      if (n.onset >= lo && n.onset < hi)
        f.voice_intensity[static_cast<size_t>(n.onset - lo)] += 1.0;
    }
  }
  for (int q = 0; q < 16; ++q)
    f.groove[static_cast<size_t>(q)] = f.voice_intensity[static_cast<size_t>(q)] >= 1.0;
  return f;
}

std::vector<ChordSymbol> recognize_chords(const Piece& piece) {
  if (piece.tracks.empty()) throw ValidationError("cannot recognize chords of an empty piece");
  int64_t steps = piece.total_steps();
  int64_t beats = steps / kStepsPerBeat;
  // pitch-class presence per step, union over tracks and octaves
  std::vector<std::array<uint8_t, 12>> present(static_cast<size_t>(steps),
                                               std::array<uint8_t, 12>{});
  for (const auto& tr : piece.tracks)
    for (const auto& n : tr.notes)
      for (int64_t s = n.onset; s < n.onset + n.duration && s < steps; ++s)
        present[static_cast<size_t>(s)][static_cast<size_t>(n.pitch % 12)] = 1;

  std::vector<ChordSymbol> out;
  out.reserve(static_cast<size_t>(beats));
  ChordSymbol current{0, ChordQuality::M};  // leading silence is C:M
  for (int64_t beat = 0; beat < beats; ++beat) {
    std::array<double, 12> profile{};
    double mass = 0;
    for (int64_t s = beat * kStepsPerBeat; s < (beat + 1) * kStepsPerBeat; ++s)
      for (int c = 0; c < 12; ++c)
        if (present[static_cast<size_t>(s)][static_cast<size_t>(c)]) {
          profile[static_cast<size_t>(c)] += 1;
          mass += 1;
        }
    if (mass > 0) {
      // Chord-tone mass minus half the non-tone mass, normalized, minus a
      // penalty for chord tones absent from the profile. Without the
      // missing-tone penalty every triad would tie its superset seventh
      // chord at 1.0. Ties go to the lowest chord index.
      double best = -1e300;
      int best_index = 0;
      for (int idx = 0; idx < kNumChordSymbols; ++idx) {
        ChordSymbol sym = ChordSymbol::from_index(idx);
        const std::vector<int> tones = chord_tone_classes(sym);
        std::array<bool, 12> is_tone{};
        for (int c : tones) is_tone[static_cast<size_t>(c)] = true;
        double score = 0;
        int missing = 0;
        for (int c = 0; c < 12; ++c)
          score += is_tone[static_cast<size_t>(c)] ? profile[static_cast<size_t>(c)]
                                                   : -0.5 * profile[static_cast<size_t>(c)];
        for (int c : tones)
          if (profile[static_cast<size_t>(c)] == 0.0) ++missing;
        score = score / mass -
                0.5 * static_cast<double>(missing) / static_cast<double>(tones.size());
        if (score > best) {
          best = score;
          best_index = idx;
        }
      }
      current = ChordSymbol::from_index(best_index);
    }
    out.push_back(current);
  }
  return out;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ValidationError("cosine: length mismatch");
  double uu = 0, vv = 0, uv = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  bool u_zero = uu == 0.0, v_zero = vv == 0.0;
  if (u_zero && v_zero) return 1.0;
  if (u_zero || v_zero) return 0.0;
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

std::vector<double> function_descriptor(const TrackFunction& fn) {
  std::vector<double> out;
  out.reserve(kNumPitches + kClipSteps);
  out.insert(out.end(), fn.pitch_fn.begin(), fn.pitch_fn.end());
  out.insert(out.end(), fn.time_fn.begin(), fn.time_fn.end());
  return out;
}

std::string features_to_json(const Piece& piece, const std::string& piece_id) {
  nlohmann::json j;
  j["piece_id"] = piece_id;
  j["bars"] = nlohmann::json::array();
  for (int64_t bar = 0; bar < metric_bar_count(piece); ++bar) {
    BarFeatures f = bar_features(piece, bar);
    j["bars"].push_back({{"bar", bar},
                         {"pitch_hist", f.pitch_hist},
                         {"voice_intensity", f.voice_intensity},
                         {"groove", f.groove}});
  }
  j["clips"] = nlohmann::json::array();
  auto clips = to_clips(piece);
  for (size_t c = 0; c < clips.size(); ++c) {
    nlohmann::json tracks = nlohmann::json::array();
    for (int n = 0; n < clips[c].tracks; ++n) {
      TrackFunction fn = track_function(clips[c], n);
      tracks.push_back({{"pitch_fn", fn.pitch_fn}, {"time_fn", fn.time_fn}});
    }
    j["clips"].push_back({{"clip", c}, {"tracks", tracks}});
  }
  return j.dump(2);
}

}  // namespace fullband
