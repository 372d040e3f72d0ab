#include "fullband/planner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fullband {

namespace {

// phrase accompaniment as a standalone piece, for clip extraction
Piece entry_piece(const PhraseEntry& e) {
  Piece p;
  p.meter = Meter::m44;
  p.bar_count = e.length_bars;
  p.tracks.push_back(e.accompaniment);
  return p;
}

std::vector<double> clip_descriptor(const Piece& p, size_t clip_index) {
  auto clips = to_clips(p);
  return function_descriptor(track_function(clips.at(clip_index), 0));
}

}  // namespace

void PhraseEntry::refresh_descriptors() {
  Piece p = entry_piece(*this);
  head_descriptor = clip_descriptor(p, 0);
  tail_descriptor = clip_descriptor(p, static_cast<size_t>(p.clip_count()) - 1);
}

double onsets_per_bar(const PhraseEntry& entry) {
  return static_cast<double>(entry.accompaniment.notes.size()) /
         static_cast<double>(entry.length_bars);
}

double mean_voices(const PhraseEntry& entry) {
  int64_t steps = static_cast<int64_t>(entry.length_bars) * kStepsPerBar44;
  std::vector<int> sounding(static_cast<size_t>(steps), 0);
  for (const auto& n : entry.accompaniment.notes)
    for (int64_t s = n.onset; s < n.onset + n.duration && s < steps; ++s)
      ++sounding[static_cast<size_t>(s)];
  int64_t active = 0, total = 0;
  for (int v : sounding) {
    if (v > 0) {
      ++active;
      total += v;
    }
  }
  return active == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(active);
}

bool DbFilter::passes(const PhraseEntry& entry) const {
  double opb = onsets_per_bar(entry);
  double voices = mean_voices(entry);
  return opb >= min_onsets_per_bar && opb <= max_onsets_per_bar && voices >= min_voices &&
         voices <= max_voices;
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

std::vector<PhraseQuery> lead_queries(const LeadSheet& lead) {
  validate(lead);
  if (lead.phrases.empty()) throw ValidationError("lead sheet has no phrase annotation");
  std::vector<PhraseQuery> out;
  int64_t bar = 0;
  for (const Phrase& ph : lead.phrases) {
    PhraseQuery q;
    q.label = ph.label;
    q.length_bars = ph.length_bars;
    q.melody_onsets.assign(static_cast<size_t>(ph.length_bars), {});
    int64_t lo = bar * kStepsPerBar44;
    int64_t hi = (bar + ph.length_bars) * kStepsPerBar44;
    for (const auto& n : lead.melody.notes)
      if (n.onset >= lo && n.onset < hi) {
        int64_t rel = n.onset - lo;
        q.melody_onsets[static_cast<size_t>(rel / kStepsPerBar44)]
                       [static_cast<size_t>(rel % kStepsPerBar44)] = 1;
      }
    q.chords.assign(lead.chords.begin() + static_cast<ptrdiff_t>(4 * bar),
                    lead.chords.begin() + static_cast<ptrdiff_t>(4 * (bar + ph.length_bars)));
    out.push_back(std::move(q));
    bar += ph.length_bars;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

namespace {

double chord_iou(ChordSymbol a, ChordSymbol b) {
  std::array<bool, 12> ta{}, tb{};
  for (int c : chord_tone_classes(a)) ta[static_cast<size_t>(c)] = true;
  for (int c : chord_tone_classes(b)) tb[static_cast<size_t>(c)] = true;
  int inter = 0, uni = 0;
  for (int c = 0; c < 12; ++c) {
    inter += ta[static_cast<size_t>(c)] && tb[static_cast<size_t>(c)];
    uni += ta[static_cast<size_t>(c)] || tb[static_cast<size_t>(c)];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

double fitness(const PhraseEntry& entry, const PhraseQuery& query, const PlannerWeights& w) {
  if (entry.length_bars != query.length_bars)
    return -std::numeric_limits<double>::infinity();
  int bars = entry.length_bars;
  int diff = 0;
  for (int k = 0; k < bars; ++k)
    for (int q = 0; q < 16; ++q)
      diff += entry.melody_onsets[static_cast<size_t>(k)][static_cast<size_t>(q)] !=
              query.melody_onsets[static_cast<size_t>(k)][static_cast<size_t>(q)];
  double rhythm = 1.0 - static_cast<double>(diff) / static_cast<double>(16 * bars);
  size_t beats = query.chords.size();
  size_t hits = 0;
  for (size_t i = 0; i < beats; ++i)
    if (chord_iou(entry.chords[i], query.chords[i]) >= 0.5) ++hits;
  double chord = static_cast<double>(hits) / static_cast<double>(beats);
  return w.w_rhythm * rhythm + w.w_chord * chord;
}

double transition(const PhraseEntry& a, const PhraseEntry& b) {
  return cosine(a.tail_descriptor, b.head_descriptor);
}

// ---------------------------------------------------------------------------
// Viterbi
// ---------------------------------------------------------------------------

std::vector<int> viterbi_path(const std::vector<std::vector<double>>& fit,
                              const std::function<double(int, int, int)>& trans, double delta,
                              double gamma) {
  size_t slots = fit.size();
  if (slots == 0) throw ValidationError("viterbi: no slots");
  std::vector<std::vector<double>> best(slots);
  std::vector<std::vector<int>> from(slots);
  constexpr double ninf = -std::numeric_limits<double>::infinity();

  best[0].resize(fit[0].size());
  from[0].assign(fit[0].size(), -1);
  for (size_t c = 0; c < fit[0].size(); ++c) best[0][c] = delta * fit[0][c];

  for (size_t l = 1; l < slots; ++l) {
    size_t n = fit[l].size();
    best[l].assign(n, ninf);
    from[l].assign(n, -1);
    for (size_t c = 0; c < n; ++c) {
      if (fit[l][c] == ninf) continue;
      double best_prev = ninf;
      int best_a = -1;
      for (size_t a = 0; a < fit[l - 1].size(); ++a) {
        if (best[l - 1][a] == ninf) continue;
        double v = best[l - 1][a] + gamma * trans(static_cast<int>(l) - 1, static_cast<int>(a),
                                                  static_cast<int>(c));
        if (v > best_prev) {  // strict keeps the lowest index on ties
          best_prev = v;
          best_a = static_cast<int>(a);
        }
      }
      if (best_a < 0) continue;
      best[l][c] = best_prev + delta * fit[l][c];
      from[l][c] = best_a;
    }
  }

  int cur = -1;
  double top = ninf;
  for (size_t c = 0; c < best[slots - 1].size(); ++c)
    if (best[slots - 1][c] > top) {
      top = best[slots - 1][c];
      cur = static_cast<int>(c);
    }
  if (cur < 0) throw ValidationError("viterbi: no feasible path");

  std::vector<int> path(slots);
  for (size_t l = slots; l-- > 0;) {
    path[l] = cur;
    cur = from[l][static_cast<size_t>(cur)];
  }
  return path;
}

// ---------------------------------------------------------------------------
// Database
// ---------------------------------------------------------------------------

void PhraseDb::add(PhraseEntry entry) {
  if (entry.length_bars != 4 && entry.length_bars != 8 && entry.length_bars != 16)
    throw ValidationError("phrase entries must be 4, 8 or 16 bars");
  if (entry.head_descriptor.empty()) entry.refresh_descriptors();
  entries_.push_back(std::move(entry));
}

std::vector<int> PhraseDb::candidates(const PhraseQuery& query, const DbFilter& filter) const {
  std::vector<int> out;
  for (size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].length_bars == query.length_bars && filter.passes(entries_[i]))
      out.push_back(static_cast<int>(i));
  return out;
}

void PhraseDb::add_piece(const std::string& id, const Piece& piece_in) {
  Piece piece = rebar_to_44(piece_in);
  if (piece.tracks.size() < 2)
    throw ValidationError("database piece needs a melody track and accompaniment");
  if (piece.phrases.empty()) throw ValidationError("database piece has no phrase annotation");
  Piece accomp_piece = without_track(piece, 0);
  std::vector<ChordSymbol> chords = recognize_chords(accomp_piece);
  Track accomp = merge_tracks(accomp_piece);

  int64_t bar = 0;
  for (const Phrase& ph : piece.phrases) {
    int64_t lo = bar * kStepsPerBar44;
    int64_t hi = (bar + ph.length_bars) * kStepsPerBar44;
    bar += ph.length_bars;
    if (ph.length_bars != 4 && ph.length_bars != 8 && ph.length_bars != 16) continue;

    PhraseEntry e;
    e.source_id = id;
    e.label = ph.label;
    e.length_bars = ph.length_bars;
    e.accompaniment.instrument_class = 0;
    e.accompaniment.gm_program = 0;
    for (const auto& n : accomp.notes)
      if (n.onset >= lo && n.onset < hi)
        e.accompaniment.notes.push_back(
            {n.onset - lo, std::min(n.duration, hi - n.onset), n.pitch});
    e.accompaniment.sort_notes();
    e.melody_onsets.assign(static_cast<size_t>(ph.length_bars), {});
    for (const auto& n : piece.tracks[0].notes)
      if (n.onset >= lo && n.onset < hi) {
        int64_t rel = n.onset - lo;
        e.melody_onsets[static_cast<size_t>(rel / kStepsPerBar44)]
                       [static_cast<size_t>(rel % kStepsPerBar44)] = 1;
      }
    e.chords.assign(chords.begin() + static_cast<ptrdiff_t>(lo / kStepsPerBeat),
                    chords.begin() + static_cast<ptrdiff_t>(hi / kStepsPerBeat));
    e.refresh_descriptors();
    entries_.push_back(std::move(e));
  }
}

PhraseDb PhraseDb::build_from_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".mid" || e.path().extension() == ".midi")
      paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  PhraseDb db;
  for (const auto& path : paths) {
    fs::path sidecar = path;
    sidecar.replace_extension(".phrases");
    if (!fs::exists(sidecar)) continue;
    Piece piece = read_midi(path.string());
    std::ifstream in(sidecar);
    std::stringstream ss;
    ss << in.rdbuf();
    piece.phrases = parse_phrase_string(ss.str());
    validate(piece);
    db.add_piece(path.stem().string(), piece);
  }
  if (db.entries_.empty()) throw ValidationError("no phrase entries found in " + dir);
  return db;
}

void PhraseDb::save(const std::string& path) const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries_) {
    nlohmann::json notes = nlohmann::json::array();
    for (const auto& n : e.accompaniment.notes) notes.push_back({n.onset, n.duration, n.pitch});
    nlohmann::json grids = nlohmann::json::array();
    for (const auto& bar : e.melody_onsets) {
      std::string s;
      for (uint8_t b : bar) s += b ? '1' : '0';
      grids.push_back(s);
    }
    nlohmann::json chords = nlohmann::json::array();
    for (const auto& c : e.chords) chords.push_back(to_string(c));
    j.push_back({{"source_id", e.source_id},
                 {"label", std::string(1, e.label)},
                 {"length_bars", e.length_bars},
                 {"notes", notes},
                 {"melody_onsets", grids},
                 {"chords", chords}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump(1) << "\n";
}

PhraseDb PhraseDb::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  PhraseDb db;
  for (const auto& je : j) {
    PhraseEntry e;
    e.source_id = je.at("source_id").get<std::string>();
    e.label = je.at("label").get<std::string>().at(0);
    e.length_bars = je.at("length_bars").get<int>();
    for (const auto& n : je.at("notes"))
      e.accompaniment.notes.push_back(
          {n.at(0).get<int64_t>(), n.at(1).get<int64_t>(), n.at(2).get<int>()});
    for (const auto& gs : je.at("melody_onsets")) {
      std::array<uint8_t, 16> bar{};
      std::string s = gs.get<std::string>();
      for (size_t i = 0; i < 16 && i < s.size(); ++i) bar[i] = s[i] == '1';
      e.melody_onsets.push_back(bar);
    }
    for (const auto& c : je.at("chords"))
      e.chords.push_back(chord_from_string(c.get<std::string>()));
    db.add(std::move(e));  // recomputes descriptors
  }
  return db;
}

// ---------------------------------------------------------------------------
// Selection and re-harmonization
// ---------------------------------------------------------------------------

std::vector<int> viterbi_select(const LeadSheet& lead, const PhraseDb& db,
                                const PlannerWeights& weights, const DbFilter& filter) {
  std::vector<PhraseQuery> queries = lead_queries(lead);
  std::vector<std::vector<int>> cand(queries.size());
  std::vector<std::vector<double>> fit(queries.size());
  for (size_t l = 0; l < queries.size(); ++l) {
    cand[l] = db.candidates(queries[l], filter);
    if (cand[l].empty())
      throw ValidationError("phrase " + std::to_string(l + 1) + " (label '" +
                            std::string(1, queries[l].label) + "', " +
                            std::to_string(queries[l].length_bars) +
                            " bars) has no matching database candidates");
    for (int c : cand[l])
      fit[l].push_back(fitness(db.entries()[static_cast<size_t>(c)], queries[l], weights));
  }
  auto trans = [&](int l, int a, int b) {
    return transition(db.entries()[static_cast<size_t>(cand[static_cast<size_t>(l)][static_cast<size_t>(a)])],
                      db.entries()[static_cast<size_t>(cand[static_cast<size_t>(l) + 1][static_cast<size_t>(b)])]);
  };
  std::vector<int> path = viterbi_path(fit, trans, weights.delta, weights.gamma);
  std::vector<int> out(path.size());
  for (size_t l = 0; l < path.size(); ++l)
    out[l] = cand[l][static_cast<size_t>(path[l])];
  return out;
}

Track reharmonize(const Track& accomp, const std::vector<ChordSymbol>& source_chords,
                  const std::vector<ChordSymbol>& target_chords) {
  if (source_chords.size() != target_chords.size())
    throw ValidationError("reharmonize: chord sequences differ in length");
  Track out = accomp;
  for (auto& note : out.notes) {
    auto beat = static_cast<size_t>(note.onset / kStepsPerBeat);
    if (beat >= source_chords.size())
      throw ValidationError("reharmonize: note outside the chord sequence");
    ChordSymbol src = source_chords[beat];
    ChordSymbol dst = target_chords[beat];
    int delta = ((dst.root - src.root) % 12 + 12) % 12;
    if (delta > 6) delta -= 12;
    int pitch = note.pitch + delta;
    pitch = std::clamp(pitch, 0, 127);

    std::array<bool, 12> src_tones{}, dst_tones{};
    for (int c : chord_tone_classes(src)) src_tones[static_cast<size_t>(c)] = true;
    for (int c : chord_tone_classes(dst)) dst_tones[static_cast<size_t>(c)] = true;
    bool was_tone = src_tones[static_cast<size_t>(note.pitch % 12)];
    if (was_tone && !dst_tones[static_cast<size_t>(pitch % 12)]) {
      for (int dist = 1; dist <= 11; ++dist) {  // ties downward
        if (pitch - dist >= 0 && dst_tones[static_cast<size_t>((pitch - dist) % 12)]) {
          pitch -= dist;
          break;
        }
        if (pitch + dist <= 127 && dst_tones[static_cast<size_t>((pitch + dist) % 12)]) {
          pitch += dist;
          break;
        }
      }
    }
    note.pitch = pitch;
  }
  out.sort_notes();
  return out;
}

Piece arrange_piano(const LeadSheet& lead, const PhraseDb& db, const PlannerWeights& weights,
                    const DbFilter& filter) {
  std::vector<int> selection = viterbi_select(lead, db, weights, filter);
  std::vector<PhraseQuery> queries = lead_queries(lead);

  Track piano;
  piano.instrument_class = 0;
  piano.gm_program = 0;
  piano.name = "piano";
  int64_t bar = 0;
  for (size_t l = 0; l < selection.size(); ++l) {
    const PhraseEntry& entry = db.entries()[static_cast<size_t>(selection[l])];
    Track fitted = reharmonize(entry.accompaniment, entry.chords, queries[l].chords);
    int64_t shift = bar * kStepsPerBar44;
    for (const auto& n : fitted.notes) piano.notes.push_back({n.onset + shift, n.duration, n.pitch});
    bar += queries[l].length_bars;
  }
  piano.sort_notes();

  Piece out;
  out.meter = Meter::m44;
  out.bar_count = lead.bar_count;
  Track melody = lead.melody;
  if (melody.name.empty()) melody.name = "melody";
  out.tracks.push_back(std::move(melody));
  out.tracks.push_back(std::move(piano));
  out.phrases = lead.phrases;
  validate(out);
  return out;
}

}  // namespace fullband
