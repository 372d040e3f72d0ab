#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fullband/common.hpp"

namespace fullband {

// All timing is on a fixed 1/4-beat grid: 16 positions per 4/4 bar.
inline constexpr int kStepsPerBeat = 4;
inline constexpr int kStepsPerBar44 = 16;
inline constexpr int kStepsPerBar24 = 8;
inline constexpr int kClipSteps = 32;  // one clip = 2 bars of 4/4
inline constexpr int kNumPitches = 128;
inline constexpr int kNumInstrumentClasses = 34;
inline constexpr int kNumChordSymbols = 96;

// ---------------------------------------------------------------------------
// Score model
// ---------------------------------------------------------------------------

struct NoteEvent {
  int64_t onset = 0;     // step index, 1/4-beat units
  int64_t duration = 1;  // step count, >= 1
  int pitch = 60;        // 0..127

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
  friend auto operator<=>(const NoteEvent&, const NoteEvent&) = default;
};

struct Track {
  int instrument_class = 0;  // 0..33
  int gm_program = 0;        // 0..127, used on MIDI output
  std::string name;
  std::vector<NoteEvent> notes;  // kept sorted by (onset, pitch)

  void sort_notes();
  int64_t end_step() const;  // max(onset + duration), 0 when empty
};

enum class Meter { m24, m44 };

inline int steps_per_bar(Meter m) {
  return m == Meter::m44 ? kStepsPerBar44 : kStepsPerBar24;
}

std::string meter_name(Meter m);

struct Phrase {
  char label = 'A';
  int length_bars = 0;

  friend bool operator==(const Phrase&, const Phrase&) = default;
};

struct Piece {
  Meter meter = Meter::m44;
  int64_t bar_count = 1;
  std::vector<Track> tracks;
  std::vector<Phrase> phrases;  // empty when unannotated

  int steps_per_bar() const { return fullband::steps_per_bar(meter); }
  int64_t total_steps() const { return bar_count * steps_per_bar(); }
  int64_t clip_count() const;  // T = ceil(bars-in-4/4 / 2)
};

// Throws ValidationError when any Piece invariant is violated: meter, note
// ranges, ordering, phrase lengths.
void validate(const Piece& piece);

// 2/4 bars are merged pairwise into 4/4 so the 2-bar/32-step clip unit is
// universal. Absolute step positions are unchanged. Phrase lengths are
// halved; odd phrase lengths cannot be preserved and raise ValidationError.
Piece rebar_to_44(const Piece& piece);

// ---------------------------------------------------------------------------
// Clip grids
// ---------------------------------------------------------------------------

// Per-track onset/sustain pianoroll over 32 steps x 128 pitches.
// sustain[n,s,p] may be set only when the same (n,p) sounds at s-1 (or the
// note entered from the previous clip at s = 0).
struct ClipGrid {
  int tracks = 0;
  std::vector<uint8_t> onset;    // [n][s][p], size tracks*32*128
  std::vector<uint8_t> sustain;  // same layout

  explicit ClipGrid(int n_tracks = 0)
      : tracks(n_tracks),
        onset(static_cast<size_t>(n_tracks) * kClipSteps * kNumPitches, 0),
        sustain(static_cast<size_t>(n_tracks) * kClipSteps * kNumPitches, 0) {}

  static size_t cell(int track, int step, int pitch) {
    return (static_cast<size_t>(track) * kClipSteps + step) * kNumPitches + pitch;
  }
  uint8_t on(int n, int s, int p) const { return onset[cell(n, s, p)]; }
  uint8_t sus(int n, int s, int p) const { return sustain[cell(n, s, p)]; }
  void set_on(int n, int s, int p, uint8_t v = 1) { onset[cell(n, s, p)] = v; }
  void set_sus(int n, int s, int p, uint8_t v = 1) { sustain[cell(n, s, p)] = v; }

  friend bool operator==(const ClipGrid&, const ClipGrid&) = default;
};

// Splits a piece into T = ceil(K/2) two-bar clips (2/4 input is rebarred
// first). A note crossing a clip boundary contributes its onset cell in its
// own clip and sustain cells in the next. The last clip is zero padded when
// the bar count is odd.
std::vector<ClipGrid> to_clips(const Piece& piece);

// Inverse of to_clips up to trailing padding: rebuilds a 4/4 piece from
// clip grids. instrument_classes.size() fixes the track count.
Piece from_clips(const std::vector<ClipGrid>& clips,
                 const std::vector<int>& instrument_classes,
                 int64_t bar_count);

// Elementwise OR over tracks into a single-track clip; where onset and
// sustain collide, onset wins.
ClipGrid downmix(const ClipGrid& clip);

// ---------------------------------------------------------------------------
// Chord vocabulary: 12 roots x 8 qualities = 96 symbols
// ---------------------------------------------------------------------------

enum class ChordQuality : int { M = 0, m, dim, aug, dom7, M7, m7, m7b5 };
inline constexpr int kNumChordQualities = 8;

struct ChordSymbol {
  int root = 0;  // pitch class 0..11
  ChordQuality quality = ChordQuality::M;

  int index() const { return root * kNumChordQualities + static_cast<int>(quality); }
  static ChordSymbol from_index(int index);

  friend bool operator==(const ChordSymbol&, const ChordSymbol&) = default;
};

// Chord-tone pitch-class offsets relative to the root.
const std::vector<int>& chord_tone_offsets(ChordQuality q);

// Absolute chord-tone pitch classes of a symbol.
std::vector<int> chord_tone_classes(ChordSymbol chord);

std::string to_string(ChordSymbol chord);          // "C:M7", "A:m", ...
ChordSymbol chord_from_string(const std::string&); // inverse

// ---------------------------------------------------------------------------
// Lead sheet
// ---------------------------------------------------------------------------

struct LeadSheet {
  Track melody;                     // monophonic
  std::vector<ChordSymbol> chords;  // one per beat, 4 per 4/4 bar
  std::vector<Phrase> phrases;
  int64_t bar_count = 0;
};

void validate(const LeadSheet& lead);

// ---------------------------------------------------------------------------
// Instrument classes (Slakh-style grouping of the 128 GM programs)
// ---------------------------------------------------------------------------

int instrument_class_for_program(int gm_program);       // 0..33
int representative_program(int instrument_class);       // class -> GM program
const char* instrument_class_name(int instrument_class);

// ---------------------------------------------------------------------------
// Phrase sidecar format: "A8A8B8B8" = label char + bar count, repeated
// ---------------------------------------------------------------------------

std::vector<Phrase> parse_phrase_string(const std::string& text);
std::string format_phrases(const std::vector<Phrase>& phrases);

// ---------------------------------------------------------------------------
// MIDI I/O (standard MIDI files, types 0 and 1)
// ---------------------------------------------------------------------------

// Reads an SMF file. Notes are snapped to the nearest 1/4-beat step (ties
// toward the earlier step); zero-length notes are promoted to one step.
// Channel-10 voices are dropped. Meters other than 2/4 and 4/4 are rejected.
// With quantize = false, off-grid events raise ValidationError instead.
Piece read_midi(const std::string& path, bool quantize = true);

// Same, from an in-memory buffer (byte offsets in errors refer to it).
Piece read_midi_bytes(const std::vector<uint8_t>& bytes, bool quantize = true);

void write_midi(const Piece& piece, const std::string& path);
std::vector<uint8_t> write_midi_bytes(const Piece& piece);

// ---------------------------------------------------------------------------
// JSON fixtures (schema documented in README)
// ---------------------------------------------------------------------------

std::string piece_to_json(const Piece& piece);
Piece piece_from_json(const std::string& json_text);
std::string lead_to_json(const LeadSheet& lead);
LeadSheet lead_from_json(const std::string& json_text);

// ---------------------------------------------------------------------------
// Assembly helpers
// ---------------------------------------------------------------------------

// All tracks merged into one (for mixtures and piano reductions).
Track merge_tracks(const Piece& piece, int instrument_class = 0);

// Copy of the piece without the given track.
Piece without_track(const Piece& piece, size_t track_index);

}  // namespace fullband
