#include "fixtures.hpp"

#include <algorithm>

namespace fullband::testing {

Piece random_piece(Rng& rng, int max_bars, int max_tracks, int notes_per_track) {
  Piece p;
  p.meter = Meter::m44;
  p.bar_count = rng.uniform_int(1, max_bars);
  int64_t steps = p.total_steps();
  int n_tracks = static_cast<int>(rng.uniform_int(1, max_tracks));
  for (int t = 0; t < n_tracks; ++t) {
    Track tr;
    tr.instrument_class = static_cast<int>(rng.uniform_int(0, kNumInstrumentClasses - 1));
    tr.gm_program = representative_program(tr.instrument_class);
    int count = static_cast<int>(rng.uniform_int(0, notes_per_track));
    for (int i = 0; i < count; ++i) {
      int64_t onset = rng.uniform_int(0, steps - 1);
      int64_t duration = std::min<int64_t>(rng.uniform_int(1, 8), steps - onset);
      int pitch = static_cast<int>(rng.uniform_int(30, 90));
      tr.notes.push_back({onset, duration, pitch});
    }
    tr.sort_notes();
    // same-pitch overlaps within a track are ambiguous in MIDI; keep pieces
    // pianoroll-representable by trimming them
    std::vector<NoteEvent> kept;
    for (const auto& n : tr.notes) {
      bool overlaps = false;
      for (auto& k : kept)
        if (k.pitch == n.pitch && n.onset < k.onset + k.duration) {
          if (n.onset > k.onset) k.duration = n.onset - k.onset;
          overlaps = n.onset == k.onset;
        }
      if (!overlaps) kept.push_back(n);
    }
    tr.notes = std::move(kept);
    tr.sort_notes();
    p.tracks.push_back(std::move(tr));
  }
  return p;
}

std::vector<Phrase> random_phrases(Rng& rng, int64_t bar_count, int parts) {
  if (bar_count < parts || parts < 2) throw ValidationError("bad phrase split request");
  // parts-1 distinct cut points inside (0, bar_count)
  std::vector<int64_t> cuts;
  while (static_cast<int>(cuts.size()) < parts - 1) {
    int64_t c = rng.uniform_int(1, bar_count - 1);
    if (std::find(cuts.begin(), cuts.end(), c) == cuts.end()) cuts.push_back(c);
  }
  std::sort(cuts.begin(), cuts.end());
  std::vector<Phrase> out;
  int64_t prev = 0;
  char label = 'A';
  for (int64_t c : cuts) {
    out.push_back({label++, static_cast<int>(c - prev)});
    prev = c;
  }
  out.push_back({label, static_cast<int>(bar_count - prev)});
  return out;
}

namespace {

// groove patterns: onset positions within a 16-step bar
const std::vector<std::vector<int>> kPatterns = {
    {0, 4, 8, 12}, {2, 6, 10, 14}, {0, 2, 4, 6, 8, 10, 12, 14}, {0, 8},
    {0, 3, 6, 10, 12}, {0, 4, 10}, {0, 6, 8, 14}, {4, 12},
};

// triads of a small diatonic progression, as (root, minor?) pairs
const std::vector<std::pair<int, bool>> kProgression = {
    {0, false}, {5, false}, {7, false}, {9, true}};

int triad_tone(int root, bool minor, int degree, int octave_base) {
  int off = degree == 0 ? 0 : degree == 1 ? (minor ? 3 : 4) : 7;
  return octave_base + root + off;
}

}  // namespace

std::vector<Piece> toy_corpus(int n_pieces, int bars, uint64_t seed) {
  Rng rng(seed);
  std::vector<Piece> out;
  for (int i = 0; i < n_pieces; ++i) {
    Piece p;
    p.meter = Meter::m44;
    p.bar_count = bars;
    const auto& pattern = kPatterns[static_cast<size_t>(i) % kPatterns.size()];
    int n_tracks = 2 + i % 2;

    for (int t = 0; t < n_tracks; ++t) {
      Track tr;
      tr.instrument_class = (i * 3 + t * 7) % kNumInstrumentClasses;
      tr.gm_program = representative_program(tr.instrument_class);
      for (int bar = 0; bar < bars; ++bar) {
        auto [root, minor] = kProgression[static_cast<size_t>((bar + i) % kProgression.size())];
        int64_t base = static_cast<int64_t>(bar) * kStepsPerBar44;
        if (t == 0) {
          // bass: root on each half note
          tr.notes.push_back({base, 8, 36 + root});
          tr.notes.push_back({base + 8, 8, 36 + root});
        } else if (t == 1) {
          // chords on the piece's groove pattern
          for (size_t j = 0; j < pattern.size(); ++j) {
            int64_t on = base + pattern[j];
            int64_t next = j + 1 < pattern.size() ? base + pattern[j + 1] : base + 16;
            for (int degree = 0; degree < 3; ++degree)
              tr.notes.push_back({on, next - on, triad_tone(root, minor, degree, 60)});
          }
        } else {
          // arpeggio on eighths
          for (int j = 0; j < 8; ++j)
            tr.notes.push_back({base + 2 * j, 2, triad_tone(root, minor, j % 3, 72)});
        }
      }
      tr.sort_notes();
      p.tracks.push_back(std::move(tr));
    }
    // tiny deterministic perturbation so pieces are not grid-perfect copies
    if (!p.tracks.empty() && rng.uniform() < 0.5 && !p.tracks[0].notes.empty())
      p.tracks[0].notes.back().duration = std::max<int64_t>(1, p.tracks[0].notes.back().duration - 1);
    validate(p);
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

// per-bar chords of the 32-bar AABB lead
std::vector<std::pair<int, bool>> lead_progression() {
  std::vector<std::pair<int, bool>> a = {{0, false}, {5, false}, {7, false}, {9, true},
                                         {0, false}, {5, false}, {7, false}, {0, false}};
  std::vector<std::pair<int, bool>> b = {{5, false}, {7, false}, {0, false}, {9, true},
                                         {5, false}, {7, false}, {0, false}, {0, false}};
  std::vector<std::pair<int, bool>> out;
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Track lead_melody() {
  Track melody;
  melody.instrument_class = 0;
  melody.gm_program = 73;  // flute-ish lead
  melody.name = "melody";
  auto prog = lead_progression();
  for (size_t bar = 0; bar < prog.size(); ++bar) {
    auto [root, minor] = prog[bar];
    int64_t base = static_cast<int64_t>(bar) * kStepsPerBar44;
    for (int beat = 0; beat < 4; ++beat)
      melody.notes.push_back(
          {base + 4 * beat, 4, triad_tone(root, minor, (beat + static_cast<int>(bar)) % 3, 72)});
  }
  melody.sort_notes();
  return melody;
}

// piano texture: bass root on the downbeats plus the full triad on every
// beat; the A section plays quarter-note blocks, the B section eighth-note
// double strikes. Registers match the training corpus textures.
Track chord_texture(const std::vector<std::pair<int, bool>>& prog, int64_t start_bar,
                    int64_t bars, bool eighths) {
  Track piano;
  piano.instrument_class = 0;
  piano.gm_program = 0;
  for (int64_t bar = 0; bar < bars; ++bar) {
    auto [root, minor] = prog[static_cast<size_t>(start_bar + bar)];
    int64_t base = bar * kStepsPerBar44;
    piano.notes.push_back({base, 8, 36 + root});
    piano.notes.push_back({base + 8, 8, 36 + root});
    for (int beat = 0; beat < 4; ++beat) {
      int64_t at = base + 4 * beat;
      if (eighths) {
        for (int rep = 0; rep < 2; ++rep)
          for (int degree = 0; degree < 3; ++degree)
            piano.notes.push_back({at + 2 * rep, 2, triad_tone(root, minor, degree, 60)});
      } else {
        for (int degree = 0; degree < 3; ++degree)
          piano.notes.push_back({at, 4, triad_tone(root, minor, degree, 60)});
      }
    }
  }
  piano.sort_notes();
  return piano;
}

}  // namespace

LeadSheet aabb_lead() {
  LeadSheet lead;
  lead.bar_count = 32;
  lead.melody = lead_melody();
  auto prog = lead_progression();
  for (auto [root, minor] : prog)
    for (int beat = 0; beat < 4; ++beat)
      lead.chords.push_back({root, minor ? ChordQuality::m : ChordQuality::M});
  lead.phrases = parse_phrase_string("A8A8B8B8");
  validate(lead);
  return lead;
}

Piece aabb_ground_truth() {
  auto prog = lead_progression();
  Piece p;
  p.meter = Meter::m44;
  p.bar_count = 32;
  p.phrases = parse_phrase_string("A8A8B8B8");
  p.tracks.push_back(lead_melody());
  Track piano;
  piano.instrument_class = 0;
  piano.gm_program = 0;
  piano.name = "piano";
  for (int phrase = 0; phrase < 4; ++phrase) {
    bool eighths = phrase >= 2;  // B section
    Track part = chord_texture(prog, phrase * 8, 8, eighths);
    int64_t shift = static_cast<int64_t>(phrase) * 8 * kStepsPerBar44;
    for (const auto& n : part.notes) piano.notes.push_back({n.onset + shift, n.duration, n.pitch});
  }
  piano.sort_notes();
  p.tracks.push_back(std::move(piano));
  validate(p);
  return p;
}

std::vector<std::pair<std::string, Piece>> db_pieces(bool include_ground_truth) {
  std::vector<std::pair<std::string, Piece>> out;
  if (include_ground_truth) out.emplace_back("gt_aabb", aabb_ground_truth());

  // distractors: same phrase shapes but chromatically foreign progressions
  // and offbeat melodies, so their fitness stays decisively below the
  // ground truth's
  const std::vector<std::vector<std::pair<int, bool>>> progs = {
      {{1, false}, {6, false}, {8, false}, {10, true}, {1, false}, {6, false}, {8, false}, {1, false}},
      {{3, false}, {10, false}, {1, true}, {6, false}, {3, false}, {10, false}, {1, true}, {3, false}},
      {{8, true}, {3, false}, {11, false}, {6, false}, {8, true}, {3, false}, {11, false}, {8, true}},
  };
  for (size_t i = 0; i < progs.size(); ++i) {
    std::vector<std::pair<int, bool>> prog;
    for (int rep = 0; rep < 4; ++rep) prog.insert(prog.end(), progs[i].begin(), progs[i].end());
    Piece p;
    p.meter = Meter::m44;
    p.bar_count = 32;
    p.phrases = parse_phrase_string("A8A8B8B8");
    Track melody;
    melody.instrument_class = 0;
    melody.gm_program = 73;
    for (size_t bar = 0; bar < prog.size(); ++bar) {
      auto [root, minor] = prog[bar];
      int64_t base = static_cast<int64_t>(bar) * kStepsPerBar44;
      for (int j = 0; j < 4; ++j)  // offbeat melody, complementary to the lead's quarters
        melody.notes.push_back(
            {base + 4 * j + 2, 2, triad_tone(root, minor, j % 3, 72 + static_cast<int>(i))});
    }
    melody.sort_notes();
    p.tracks.push_back(std::move(melody));
    Track piano;
    piano.instrument_class = 0;
    piano.gm_program = 0;
    for (int phrase = 0; phrase < 4; ++phrase) {
      Track part = chord_texture(prog, phrase * 8, 8, phrase % 2 == 1);
      int64_t shift = static_cast<int64_t>(phrase) * 8 * kStepsPerBar44;
      for (const auto& n : part.notes) piano.notes.push_back({n.onset + shift, n.duration, n.pitch});
    }
    piano.sort_notes();
    p.tracks.push_back(std::move(piano));
    validate(p);
    out.emplace_back("distractor_" + std::to_string(i), std::move(p));
  }
  return out;
}

}  // namespace fullband::testing
