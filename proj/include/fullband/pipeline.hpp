#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fullband/codec.hpp"
#include "fullband/planner.hpp"
#include "fullband/prior.hpp"
#include "fullband/score.hpp"

namespace fullband {

struct OrchestrationOptions {
  std::vector<int> instruments;
  double beta = 0.5;
  double nucleus_p = 0.1;
  double temperature = 4.0;
  uint64_t seed = 0;
  std::optional<Piece> prompt;  // 2-bar multi-track style donor
};

// Stages 2-3: piano clips -> mixture codes -> noise-blended context ->
// sampled code groupings -> decoded tracks, reassembled at the input's
// bar count.
Piece orchestrate(const Piece& piano, const CodecModel& codec, const PriorModel& prior,
                  const OrchestrationOptions& opt);

// All three stages: piano sketch from the phrase database, orchestration of
// the accompaniment, melody reattached as the top track.
Piece arrange(const LeadSheet& lead, const PhraseDb& db, const CodecModel& codec,
              const PriorModel& prior, const OrchestrationOptions& opt,
              const PlannerWeights& weights = {}, const DbFilter& filter = {});

// argmax over db of cos(f(y_mix_1), f(x_1)) + alpha * eps_y. The winning
// piece is returned whole; its clips after the first serve as the
// continuation segment.
struct DonorResult {
  size_t index = 0;
  std::string id;
  double score = 0;
  Piece segment;
};
DonorResult donor_search(const Piece& piano, const std::vector<std::pair<std::string, Piece>>& db,
                         double alpha, uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset preparation
// ---------------------------------------------------------------------------

// Bars [start_bar, end_bar) of a 4/4 piece; notes crossing the end boundary
// are truncated, notes starting earlier are dropped.
Piece piece_slice(const Piece& piece, int64_t start_bar, int64_t end_bar);

// Timing conditions of consecutive clips, as fractions of the whole song.
std::vector<TimingCondition> clip_timing(int64_t song_bars, int64_t segment_start_bar,
                                         int clip_count);

Segment encode_segment(const CodecModel& codec, const Piece& song, int64_t start_bar,
                       int64_t end_bar, int64_t song_bars, const std::string& id);

void save_segments(const std::vector<Segment>& segments, const std::string& path);
std::vector<Segment> load_segments(const std::string& path);

struct IngestOptions {
  std::string split = "8:1:1";
  int segment_bars = 32;
  uint64_t seed = 0;
  std::string codec_checkpoint;  // empty = no code caching
};

struct IngestFile {
  std::string path;
  std::string status;  // "ok" | "skipped"
  std::string reason;  // for skipped files
  std::string split;   // train/val/test
  int64_t bars = 0;
  std::vector<std::string> segment_files;
};

struct IngestManifest {
  std::vector<IngestFile> files;
  std::string to_json() const;
};

// Reads every .mid in input_dir, filters to supported meters, splits at song
// level, segments, writes segment MIDIs plus manifest.json (and cached codes
// per split when a codec checkpoint is given) into output_dir.
IngestManifest ingest(const std::string& input_dir, const std::string& output_dir,
                      const IngestOptions& opt);

}  // namespace fullband
