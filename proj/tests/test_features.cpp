#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "fullband/features.hpp"
#include "oracles.hpp"

using namespace fullband;

namespace {

Piece one_track_piece(std::vector<NoteEvent> notes, int64_t bars = 2) {
  Piece p;
  p.bar_count = bars;
  Track t;
  t.notes = std::move(notes);
  t.sort_notes();
  p.tracks.push_back(std::move(t));
  return p;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("empty track yields zero functions") {
  ClipGrid clip(1);
  TrackFunction fn = track_function(clip, 0);
  for (double v : fn.pitch_fn) CHECK(v == 0.0);
  for (double v : fn.time_fn) CHECK(v == 0.0);
  CHECK_THROWS_AS(track_function(clip, 1), ValidationError);
}

TEST_CASE("held C4 fills its pitch slot; onsets clip at four") {
  Piece p = one_track_piece({{0, 32, 60}});
  TrackFunction fn = track_function(to_clips(p)[0], 0);
  CHECK(fn.pitch_fn[60] == doctest::Approx(1.0));
  for (int q = 0; q < 128; ++q)
    if (q != 60) CHECK(fn.pitch_fn[static_cast<size_t>(q)] == 0.0);
  CHECK(fn.time_fn[0] == doctest::Approx(0.25));
  for (int s = 1; s < 32; ++s) CHECK(fn.time_fn[static_cast<size_t>(s)] == 0.0);

  Piece chord = one_track_piece({{0, 4, 60}, {0, 4, 64}, {0, 4, 67}, {0, 4, 70}, {0, 4, 74}});
  TrackFunction cfn = track_function(to_clips(chord)[0], 0);
  CHECK(cfn.time_fn[0] == doctest::Approx(1.0));
}

TEST_CASE("track function ignores note order and shifts under +12") {
  Piece a = one_track_piece({{0, 4, 60}, {8, 4, 64}, {16, 2, 67}});
  Piece b = one_track_piece({{16, 2, 67}, {0, 4, 60}, {8, 4, 64}});
  TrackFunction fa = track_function(to_clips(a)[0], 0);
  TrackFunction fb = track_function(to_clips(b)[0], 0);
  CHECK(fa.pitch_fn == fb.pitch_fn);
  CHECK(fa.time_fn == fb.time_fn);

  Piece up = one_track_piece({{0, 4, 72}, {8, 4, 76}, {16, 2, 79}});
  TrackFunction fu = track_function(to_clips(up)[0], 0);
  CHECK(fu.time_fn == fa.time_fn);
  for (int q = 0; q < 116; ++q)
    CHECK(fu.pitch_fn[static_cast<size_t>(q + 12)] == fa.pitch_fn[static_cast<size_t>(q)]);
}

TEST_CASE("bar features: zero, whole note, triad cases") {
  Piece empty = one_track_piece({}, 1);
  BarFeatures f0 = bar_features(empty, 0);
  for (double v : f0.pitch_hist) CHECK(v == 0.0);
  for (double v : f0.voice_intensity) CHECK(v == 0.0);
  for (uint8_t v : f0.groove) CHECK(v == 0);

  Piece whole = one_track_piece({{0, 16, 60}}, 1);
  BarFeatures f1 = bar_features(whole, 0);
  CHECK(f1.pitch_hist[0] == doctest::Approx(16.0));
  CHECK(f1.voice_intensity[0] == doctest::Approx(1.0));
  CHECK(f1.groove[0] == 1);
  for (int q = 1; q < 16; ++q) {
    CHECK(f1.voice_intensity[static_cast<size_t>(q)] == 0.0);
    CHECK(f1.groove[static_cast<size_t>(q)] == 0);
  }

  Piece triads = one_track_piece(
      {{0, 4, 60}, {0, 4, 64}, {0, 4, 67}, {8, 4, 60}, {8, 4, 64}, {8, 4, 67}}, 1);
  BarFeatures f2 = bar_features(triads, 0);
  CHECK(f2.voice_intensity[0] == doctest::Approx(3.0));
  CHECK(f2.voice_intensity[8] == doctest::Approx(3.0));
}

TEST_CASE("bar features match the note-level oracle on random pieces") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    Piece p = fullband::testing::random_piece(rng, 6, 3);
    if (p.tracks.empty()) continue;
    for (int64_t bar = 0; bar < metric_bar_count(p); ++bar) {
      BarFeatures f = bar_features(p, bar);
      auto hist = oracle::pitch_hist_ref(p, bar, -1);
      auto vi = oracle::voice_intensity_ref(p, bar, -1);
      for (int c = 0; c < 12; ++c)
        CHECK(f.pitch_hist[static_cast<size_t>(c)] == doctest::Approx(hist[static_cast<size_t>(c)]));
      for (int q = 0; q < 16; ++q)
        CHECK(f.voice_intensity[static_cast<size_t>(q)] == doctest::Approx(vi[static_cast<size_t>(q)]));
    }
  }
}

TEST_CASE("pitch histogram is octave invariant; groove is transposition invariant") {
  Piece p = one_track_piece({{0, 4, 60}, {4, 4, 64}, {10, 6, 67}}, 1);
  Piece up = one_track_piece({{0, 4, 72}, {4, 4, 76}, {10, 6, 79}}, 1);
  Piece shifted = one_track_piece({{0, 4, 63}, {4, 4, 67}, {10, 6, 70}}, 1);
  CHECK(bar_features(p, 0).pitch_hist == bar_features(up, 0).pitch_hist);
  CHECK(bar_features(p, 0).voice_intensity == bar_features(shifted, 0).voice_intensity);
  CHECK(bar_features(p, 0).groove == bar_features(shifted, 0).groove);
}

TEST_CASE("chord recognition: exact templates and the seventh case") {
  Piece cmaj = one_track_piece({{0, 4, 60}, {0, 4, 64}, {0, 4, 67}}, 1);
  CHECK(recognize_chords(cmaj)[0] == ChordSymbol{0, ChordQuality::M});

  Piece amin = one_track_piece({{0, 4, 57}, {0, 4, 60}, {0, 4, 64}}, 1);
  CHECK(recognize_chords(amin)[0] == ChordSymbol{9, ChordQuality::m});

  Piece fmaj = one_track_piece({{0, 4, 53}, {0, 4, 57}, {0, 4, 60}}, 1);
  CHECK(recognize_chords(fmaj)[0] == ChordSymbol{5, ChordQuality::M});

  Piece cM7 = one_track_piece({{0, 4, 60}, {0, 4, 64}, {0, 4, 67}, {0, 4, 71}}, 1);
  CHECK(recognize_chords(cM7)[0] == ChordSymbol{0, ChordQuality::M7});
}

TEST_CASE("silent beats carry; leading silence is C major") {
  Piece p = one_track_piece({{4, 4, 62}, {4, 4, 65}, {4, 4, 69}}, 1);  // D minor on beat 2
  auto chords = recognize_chords(p);
  REQUIRE(chords.size() == 4);
  CHECK(chords[0] == ChordSymbol{0, ChordQuality::M});
  CHECK(chords[1] == ChordSymbol{2, ChordQuality::m});
  CHECK(chords[2] == ChordSymbol{2, ChordQuality::m});  // carried
  CHECK(chords[3] == ChordSymbol{2, ChordQuality::m});
}

TEST_CASE("chord recognition matches the independent template oracle") {
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    Piece p = fullband::testing::random_piece(rng, 4, 3);
    if (p.tracks.empty()) continue;
    bool any = false;
    for (const auto& t : p.tracks) any = any || !t.notes.empty();
    if (!any) continue;
    CHECK(recognize_chords(p) == oracle::chords_ref(p));
  }
}

TEST_CASE("chord recognition is invariant to octave doubling of any voice") {
  Rng rng(78);
  for (int trial = 0; trial < 20; ++trial) {
    Piece p = fullband::testing::random_piece(rng, 4, 3);
    if (p.tracks.empty() || p.tracks[0].notes.empty()) continue;
    Piece doubled = p;
    Track copy = p.tracks[0];
    for (auto& n : copy.notes) n.pitch = std::min(127, n.pitch + 12);
    copy.sort_notes();
    doubled.tracks.push_back(copy);
    CHECK(recognize_chords(doubled) == recognize_chords(p));
  }
}

TEST_CASE("feature dump emits bar and clip arrays keyed by piece id") {
  Piece p = one_track_piece({{0, 4, 60}, {16, 8, 64}}, 2);
  std::string j = features_to_json(p, "fixture-1");
  CHECK(j.find("\"piece_id\": \"fixture-1\"") != std::string::npos);
  CHECK(j.find("pitch_hist") != std::string::npos);
  CHECK(j.find("time_fn") != std::string::npos);
  CHECK(j.find("\"clip\": 0") != std::string::npos);
}

TEST_CASE("cosine zero-vector conventions") {
  std::vector<double> zero(4, 0.0), ones(4, 1.0), twos(4, 2.0);
  CHECK(cosine(zero, zero) == 1.0);
  CHECK(cosine(zero, ones) == 0.0);
  CHECK(cosine(ones, zero) == 0.0);
  CHECK(cosine(ones, twos) == doctest::Approx(1.0));
  std::vector<double> a = {1, 0, 0, 0}, b = {0, 1, 0, 0};
  CHECK(cosine(a, b) == doctest::Approx(0.0));
  CHECK_THROWS_AS(cosine(a, zero = {1, 2}), ValidationError);
}

}  // TEST_SUITE
