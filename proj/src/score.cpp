#include "fullband/score.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "json.hpp"

namespace fullband {

using nlohmann::json;

void Track::sort_notes() {
  std::sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.onset, a.pitch, a.duration) < std::tie(b.onset, b.pitch, b.duration);
  });
}

int64_t Track::end_step() const {
  int64_t end = 0;
  for (const auto& n : notes) end = std::max(end, n.onset + n.duration);
  return end;
}

std::string meter_name(Meter m) { return m == Meter::m44 ? "4/4" : "2/4"; }

int64_t Piece::clip_count() const {
  int64_t steps = total_steps();
  return (steps + kClipSteps - 1) / kClipSteps;
}

void validate(const Piece& piece) {
  if (piece.bar_count < 1) throw ValidationError("piece has no bars");
  int64_t steps = piece.total_steps();
  for (size_t t = 0; t < piece.tracks.size(); ++t) {
    const Track& tr = piece.tracks[t];
    if (tr.instrument_class < 0 || tr.instrument_class >= kNumInstrumentClasses)
      throw ValidationError("track " + std::to_string(t) + ": instrument class out of range");
    if (tr.gm_program < 0 || tr.gm_program > 127)
      throw ValidationError("track " + std::to_string(t) + ": GM program out of range");
    const NoteEvent* prev = nullptr;
    for (const auto& n : tr.notes) {
      if (n.pitch < 0 || n.pitch >= kNumPitches)
        throw ValidationError("track " + std::to_string(t) + ": pitch out of range");
      if (n.onset < 0 || n.duration < 1 || n.onset + n.duration > steps)
        throw ValidationError("track " + std::to_string(t) + ": note outside piece");
      if (prev && std::tie(prev->onset, prev->pitch) > std::tie(n.onset, n.pitch))
        throw ValidationError("track " + std::to_string(t) + ": notes not sorted");
      prev = &n;
    }
  }
  if (!piece.phrases.empty()) {
    int64_t sum = 0;
    for (const auto& p : piece.phrases) {
      if (p.length_bars < 1) throw ValidationError("phrase with non-positive length");
      sum += p.length_bars;
    }
    if (sum != piece.bar_count)
      throw ValidationError("phrase lengths sum to " + std::to_string(sum) + ", piece has " +
                            std::to_string(piece.bar_count) + " bars");
  }
}

Piece rebar_to_44(const Piece& piece) {
  if (piece.meter == Meter::m44) return piece;
  Piece out = piece;
  out.meter = Meter::m44;
  out.bar_count = (piece.bar_count + 1) / 2;
  out.phrases.clear();
  for (const auto& p : piece.phrases) {
    if (p.length_bars % 2 != 0)
      throw ValidationError("cannot rebar 2/4 piece: odd phrase length " +
                            std::to_string(p.length_bars));
    out.phrases.push_back({p.label, p.length_bars / 2});
  }
  if (!out.phrases.empty() && piece.bar_count % 2 != 0)
    throw ValidationError("cannot rebar annotated 2/4 piece with odd bar count");
  return out;
}

// ---------------------------------------------------------------------------
// Clips
// ---------------------------------------------------------------------------

std::vector<ClipGrid> to_clips(const Piece& piece_in) {
  Piece piece = rebar_to_44(piece_in);
  validate(piece);
  int n_tracks = static_cast<int>(piece.tracks.size());
  int64_t n_clips = piece.clip_count();
  std::vector<ClipGrid> clips(static_cast<size_t>(n_clips), ClipGrid(n_tracks));
  for (int n = 0; n < n_tracks; ++n) {
    for (const auto& note : piece.tracks[n].notes) {
      for (int64_t s = note.onset; s < note.onset + note.duration; ++s) {
        auto c = static_cast<size_t>(s / kClipSteps);
        int step = static_cast<int>(s % kClipSteps);
        if (s == note.onset)
          clips[c].set_on(n, step, note.pitch);
        else if (!clips[c].on(n, step, note.pitch))
          clips[c].set_sus(n, step, note.pitch);
      }
    }
  }
  return clips;
}

Piece from_clips(const std::vector<ClipGrid>& clips,
                 const std::vector<int>& instrument_classes, int64_t bar_count) {
  int n_tracks = static_cast<int>(instrument_classes.size());
  for (const auto& c : clips)
    if (c.tracks != n_tracks) throw ValidationError("from_clips: track count mismatch");
  Piece piece;
  piece.meter = Meter::m44;
  piece.bar_count = bar_count;
  int64_t steps = piece.total_steps();
  if (steps > static_cast<int64_t>(clips.size()) * kClipSteps)
    throw ValidationError("from_clips: bar count exceeds clip data");
  for (int n = 0; n < n_tracks; ++n) {
    Track tr;
    tr.instrument_class = instrument_classes[n];
    tr.gm_program = representative_program(instrument_classes[n]);
    for (int p = 0; p < kNumPitches; ++p) {
      int64_t open_onset = -1;
      for (int64_t s = 0; s < steps; ++s) {
        auto c = static_cast<size_t>(s / kClipSteps);
        int step = static_cast<int>(s % kClipSteps);
        bool on = clips[c].on(n, step, p);
        bool sus = clips[c].sus(n, step, p);
        if (on || (open_onset < 0 && sus)) {
          // a fresh onset, or an orphan sustain promoted to a note start
          if (open_onset >= 0) tr.notes.push_back({open_onset, s - open_onset, p});
          open_onset = s;
        } else if (!sus && open_onset >= 0) {
          tr.notes.push_back({open_onset, s - open_onset, p});
          open_onset = -1;
        }
      }
      if (open_onset >= 0) tr.notes.push_back({open_onset, steps - open_onset, p});
    }
    tr.sort_notes();
    piece.tracks.push_back(std::move(tr));
  }
  validate(piece);
  return piece;
}

ClipGrid downmix(const ClipGrid& clip) {
  ClipGrid out(1);
  for (int s = 0; s < kClipSteps; ++s) {
    for (int p = 0; p < kNumPitches; ++p) {
      bool on = false, sus = false;
      for (int n = 0; n < clip.tracks; ++n) {
        on = on || clip.on(n, s, p);
        sus = sus || clip.sus(n, s, p);
      }
      if (on)
        out.set_on(0, s, p);
      else if (sus)
        out.set_sus(0, s, p);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chords
// ---------------------------------------------------------------------------

namespace {
const std::array<std::vector<int>, kNumChordQualities> kChordTones = {{
    {0, 4, 7},      // M
    {0, 3, 7},      // m
    {0, 3, 6},      // dim
    {0, 4, 8},      // aug
    {0, 4, 7, 10},  // 7
    {0, 4, 7, 11},  // M7
    {0, 3, 7, 10},  // m7
    {0, 3, 6, 10},  // m7-5
}};
const std::array<const char*, kNumChordQualities> kQualityNames = {
    "M", "m", "dim", "aug", "7", "M7", "m7", "m7-5"};
const std::array<const char*, 12> kRootNames = {"C",  "C#", "D",  "D#", "E",  "F",
                                                "F#", "G",  "G#", "A",  "A#", "B"};
}  // namespace

ChordSymbol ChordSymbol::from_index(int index) {
  if (index < 0 || index >= kNumChordSymbols)
    throw ValidationError("chord index out of range: " + std::to_string(index));
  return {index / kNumChordQualities,
          static_cast<ChordQuality>(index % kNumChordQualities)};
}

const std::vector<int>& chord_tone_offsets(ChordQuality q) {
  return kChordTones[static_cast<int>(q)];
}

std::vector<int> chord_tone_classes(ChordSymbol chord) {
  std::vector<int> out;
  for (int off : chord_tone_offsets(chord.quality)) out.push_back((chord.root + off) % 12);
  return out;
}

std::string to_string(ChordSymbol chord) {
  return std::string(kRootNames[chord.root]) + ":" +
         kQualityNames[static_cast<int>(chord.quality)];
}

ChordSymbol chord_from_string(const std::string& text) {
  auto colon = text.find(':');
  if (colon == std::string::npos) throw ValidationError("bad chord symbol: " + text);
  std::string root_s = text.substr(0, colon), qual_s = text.substr(colon + 1);
  int root = -1;
  for (int i = 0; i < 12; ++i)
    if (root_s == kRootNames[i]) root = i;
  int qual = -1;
  for (int i = 0; i < kNumChordQualities; ++i)
    if (qual_s == kQualityNames[i]) qual = i;
  if (root < 0 || qual < 0) throw ValidationError("bad chord symbol: " + text);
  return {root, static_cast<ChordQuality>(qual)};
}

// ---------------------------------------------------------------------------
// Lead sheet
// ---------------------------------------------------------------------------

void validate(const LeadSheet& lead) {
  if (lead.bar_count < 1) throw ValidationError("lead sheet has no bars");
  if (static_cast<int64_t>(lead.chords.size()) != 4 * lead.bar_count)
    throw ValidationError("lead sheet needs one chord per beat (4 per bar)");
  int64_t steps = lead.bar_count * kStepsPerBar44;
  const NoteEvent* prev = nullptr;
  for (const auto& n : lead.melody.notes) {
    if (n.onset < 0 || n.onset + n.duration > steps)
      throw ValidationError("melody note outside lead sheet");
    if (prev && prev->onset + prev->duration > n.onset)
      throw ValidationError("melody is not monophonic");
    prev = &n;
  }
  if (!lead.phrases.empty()) {
    int64_t sum = 0;
    for (const auto& p : lead.phrases) sum += p.length_bars;
    if (sum != lead.bar_count) throw ValidationError("phrase lengths do not sum to bar count");
  }
}

// ---------------------------------------------------------------------------
// Phrase sidecar
// ---------------------------------------------------------------------------

std::vector<Phrase> parse_phrase_string(const std::string& text) {
  std::vector<Phrase> out;
  size_t i = 0;
  while (i < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    char label = text[i];
    if (!std::isalpha(static_cast<unsigned char>(label)))
      throw ValidationError("bad phrase label at position " + std::to_string(i));
    ++i;
    size_t start = i;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
    if (i == start) throw ValidationError("phrase label '" + std::string(1, label) +
                                          "' missing a bar count");
    out.push_back({label, std::stoi(text.substr(start, i - start))});
  }
  if (out.empty()) throw ValidationError("empty phrase annotation");
  return out;
}

std::string format_phrases(const std::vector<Phrase>& phrases) {
  std::string out;
  for (const auto& p : phrases) out += p.label + std::to_string(p.length_bars);
  return out;
}

// ---------------------------------------------------------------------------
// JSON fixtures
// ---------------------------------------------------------------------------

namespace {

json track_to_json(const Track& tr) {
  json notes = json::array();
  for (const auto& n : tr.notes) notes.push_back({n.onset, n.duration, n.pitch});
  return {{"instrument_class", tr.instrument_class},
          {"gm_program", tr.gm_program},
          {"name", tr.name},
          {"notes", notes}};
}

Track track_from_json(const json& j) {
  Track tr;
  tr.instrument_class = j.at("instrument_class").get<int>();
  tr.gm_program = j.value("gm_program", representative_program(tr.instrument_class));
  tr.name = j.value("name", std::string());
  for (const auto& n : j.at("notes"))
    tr.notes.push_back({n.at(0).get<int64_t>(), n.at(1).get<int64_t>(), n.at(2).get<int>()});
  tr.sort_notes();
  return tr;
}

}  // namespace

std::string piece_to_json(const Piece& piece) {
  json j;
  j["meter"] = meter_name(piece.meter);
  j["bar_count"] = piece.bar_count;
  j["tracks"] = json::array();
  for (const auto& tr : piece.tracks) j["tracks"].push_back(track_to_json(tr));
  j["phrases"] = piece.phrases.empty() ? json() : json(format_phrases(piece.phrases));
  return j.dump(2);
}

Piece piece_from_json(const std::string& text) {
  json j = json::parse(text);
  Piece piece;
  std::string meter = j.at("meter").get<std::string>();
  if (meter == "4/4")
    piece.meter = Meter::m44;
  else if (meter == "2/4")
    piece.meter = Meter::m24;
  else
    throw ValidationError("unsupported meter in JSON: " + meter);
  piece.bar_count = j.at("bar_count").get<int64_t>();
  for (const auto& tj : j.at("tracks")) piece.tracks.push_back(track_from_json(tj));
  if (j.contains("phrases") && !j["phrases"].is_null())
    piece.phrases = parse_phrase_string(j["phrases"].get<std::string>());
  validate(piece);
  return piece;
}

std::string lead_to_json(const LeadSheet& lead) {
  json j;
  j["bar_count"] = lead.bar_count;
  j["melody"] = track_to_json(lead.melody);
  j["chords"] = json::array();
  for (const auto& c : lead.chords) j["chords"].push_back(to_string(c));
  j["phrases"] = lead.phrases.empty() ? json() : json(format_phrases(lead.phrases));
  return j.dump(2);
}

LeadSheet lead_from_json(const std::string& text) {
  json j = json::parse(text);
  LeadSheet lead;
  lead.bar_count = j.at("bar_count").get<int64_t>();
  lead.melody = track_from_json(j.at("melody"));
  for (const auto& c : j.at("chords")) lead.chords.push_back(chord_from_string(c.get<std::string>()));
  if (j.contains("phrases") && !j["phrases"].is_null())
    lead.phrases = parse_phrase_string(j["phrases"].get<std::string>());
  validate(lead);
  return lead;
}

// ---------------------------------------------------------------------------
// Assembly helpers
// ---------------------------------------------------------------------------

Track merge_tracks(const Piece& piece, int instrument_class) {
  Track out;
  out.instrument_class = instrument_class;
  out.gm_program = representative_program(instrument_class);
  for (const auto& tr : piece.tracks)
    out.notes.insert(out.notes.end(), tr.notes.begin(), tr.notes.end());
  out.sort_notes();
  return out;
}

Piece without_track(const Piece& piece, size_t track_index) {
  if (track_index >= piece.tracks.size())
    throw ValidationError("track index out of range");
  Piece out = piece;
  out.tracks.erase(out.tracks.begin() + static_cast<ptrdiff_t>(track_index));
  return out;
}

}  // namespace fullband
