#pragma once

#include <string>
#include <vector>

#include "fullband/common.hpp"
#include "fullband/score.hpp"

namespace fullband::testing {

// Random quantized piece: <= max_bars bars of 4/4, 1..max_tracks tracks.
Piece random_piece(Rng& rng, int max_bars = 8, int max_tracks = 4, int notes_per_track = 24);

// Random phrase split of a piece: L parts, each at least 1 bar and never the
// whole piece. Requires bar_count >= 2.
std::vector<Phrase> random_phrases(Rng& rng, int64_t bar_count, int parts);

// Deterministic training corpus: pieces with distinct instrument sets,
// groove patterns and chord progressions.
std::vector<Piece> toy_corpus(int n_pieces, int bars = 8, uint64_t seed = 7);

// 32-bar AABB lead sheet: diatonic melody over an I-IV-V-vi progression.
LeadSheet aabb_lead();

// Phrase-database source pieces (melody track 0 + piano accompaniment),
// phrases annotated A8A8B8B8-style. One of them contains the exact
// accompaniment of aabb_lead() for the self-retrieval test when
// include_ground_truth is set.
std::vector<std::pair<std::string, Piece>> db_pieces(bool include_ground_truth = true);

// The ground-truth piano accompaniment used inside db_pieces.
Piece aabb_ground_truth();

}  // namespace fullband::testing
