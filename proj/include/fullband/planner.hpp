#pragma once

#include <array>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "fullband/features.hpp"
#include "fullband/score.hpp"

namespace fullband {

// One phrase of a database piece: the piano accompaniment plus the melody
// rhythm and chords it was originally written against. All step positions
// are phrase-relative. Boundary descriptors are cached but recomputable
// from the raw notes.
struct PhraseEntry {
  std::string source_id;
  char label = 'A';
  int length_bars = 0;  // 4, 8 or 16
  Track accompaniment;
  std::vector<std::array<uint8_t, 16>> melody_onsets;  // per bar
  std::vector<ChordSymbol> chords;                     // per beat
  std::vector<double> head_descriptor;                 // concat(f_pitch, f_time), first clip
  std::vector<double> tail_descriptor;                 // last clip

  void refresh_descriptors();
};

struct PlannerWeights {
  double delta = 0.3;   // fitness weight
  double gamma = 0.7;   // transition weight
  double w_rhythm = 0.5;
  double w_chord = 0.5;
};

// Pre-filtering controls over the phrase database.
struct DbFilter {
  double min_onsets_per_bar = 0;
  double max_onsets_per_bar = std::numeric_limits<double>::infinity();
  double min_voices = 0;  // mean simultaneous notes over sounding steps
  double max_voices = std::numeric_limits<double>::infinity();

  bool passes(const PhraseEntry& entry) const;
};

double onsets_per_bar(const PhraseEntry& entry);
double mean_voices(const PhraseEntry& entry);

// One phrase slice of a lead sheet, the retrieval query.
struct PhraseQuery {
  char label = 'A';
  int length_bars = 0;
  std::vector<std::array<uint8_t, 16>> melody_onsets;
  std::vector<ChordSymbol> chords;
};

std::vector<PhraseQuery> lead_queries(const LeadSheet& lead);

// w_rhythm * (1 - mean Hamming distance of per-bar melody onset grids)
// + w_chord * (fraction of beats whose chord-tone sets have IoU >= 0.5).
// Length mismatch scores -infinity.
double fitness(const PhraseEntry& entry, const PhraseQuery& query, const PlannerWeights& w);

// Cosine similarity between the function descriptors of a's last clip and
// b's first clip (zero-vector convention).
double transition(const PhraseEntry& a, const PhraseEntry& b);

// Exact maximizer of delta * sum(fit) + gamma * sum(trans) over candidate
// chains, ties broken toward the lowest index chain (resolved from the last
// slot backwards). fit[l][c] may be -infinity to exclude a candidate.
std::vector<int> viterbi_path(const std::vector<std::vector<double>>& fit,
                              const std::function<double(int, int, int)>& trans, double delta,
                              double gamma);

class PhraseDb {
 public:
  void add(PhraseEntry entry);
  const std::vector<PhraseEntry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  // Entries whose length matches the query and which pass the filter.
  std::vector<int> candidates(const PhraseQuery& query, const DbFilter& filter) const;

  // Splits a piece (track 0 = melody, the rest = piano accompaniment) into
  // phrase entries; phrases with lengths other than 4/8/16 are skipped.
  void add_piece(const std::string& id, const Piece& piece);

  // Folder of .mid files with .phrases sidecars.
  static PhraseDb build_from_dir(const std::string& dir);

  void save(const std::string& path) const;
  static PhraseDb load(const std::string& path);

 private:
  std::vector<PhraseEntry> entries_;
};

// Selected entry index per lead phrase.
std::vector<int> viterbi_select(const LeadSheet& lead, const PhraseDb& db,
                                const PlannerWeights& weights = {}, const DbFilter& filter = {});

// Beat-wise transposition toward the target chords: each note moves by the
// signed root interval in [-6, +6]; notes that were chord tones and land
// outside the target chord-tone set snap to the nearest target chord tone
// (ties downward). Onsets and durations never change.
Track reharmonize(const Track& accomp, const std::vector<ChordSymbol>& source_chords,
                  const std::vector<ChordSymbol>& target_chords);

// Full stage-1 pipeline: viterbi_select, per-phrase reharmonize, concatenate.
// Returns a piece with the melody on track 0 and the piano on track 1.
Piece arrange_piano(const LeadSheet& lead, const PhraseDb& db,
                    const PlannerWeights& weights = {}, const DbFilter& filter = {});

}  // namespace fullband
