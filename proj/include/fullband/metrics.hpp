#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fullband/features.hpp"
#include "fullband/score.hpp"

namespace fullband {

// Orchestration faithfulness: mean over bars of the cosine similarity of the
// 12-D pitch histogram (s_pitch) / 16-D voice intensity (s_groove) between
// the two pieces' mixtures.
double s_pitch(const Piece& result, const Piece& piano);
double s_groove(const Piece& result, const Piece& piano);

// Orchestration creativity: per bar, each result track's similarity to the
// piano is L1-normalized into a distribution whose entropy (nats) is
// averaged over bars. An all-zero similarity row counts as uniform.
double h_pitch(const Piece& result, const Piece& piano);
double h_groove(const Piece& result, const Piece& piano);

// Fraction of beats where the recognized chord of the arrangement matches
// the lead sheet in root and quality.
double a_chord(const Piece& arrangement, const LeadSheet& lead);

// Groove consistency over all K^2 bar pairs (diagonal included) of the
// mixture groove (g_mix) or per-track grooves averaged over tracks (g_track).
double g_mix(const Piece& piece);
double g_track(const Piece& piece);

// Phrase-level groove diversity: per phrase, intra-phrase consistency mean
// over the cross-phrase one, averaged over phrases. Requires at least two
// phrases, none spanning the whole piece; throws MetricUndefined when the
// inter-phrase consistency of some phrase is zero.
double g_phrase(const Piece& piece, const std::vector<Phrase>& phrases);

// ---------------------------------------------------------------------------
// Corpus aggregation
// ---------------------------------------------------------------------------

struct MetricStat {
  double mean = 0;
  double ci_half = 0;  // 1.96 * stderr
  size_t n = 0;
};

MetricStat aggregate(std::span<const double> values);

// Accumulates per-piece metric values; runs may be pooled by appending.
struct MetricReport {
  std::map<std::string, std::vector<double>> per_piece;

  void add(const std::string& metric, double value) { per_piece[metric].push_back(value); }
  std::map<std::string, MetricStat> stats() const;
  std::string to_json() const;
  std::string to_table() const;  // column layout mirroring the report tables
};

}  // namespace fullband
