#include "fullband/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fullband {

namespace fs = std::filesystem;

Piece orchestrate(const Piece& piano_in, const CodecModel& codec, const PriorModel& prior,
                  const OrchestrationOptions& opt) {
  if (piano_in.tracks.size() != 1)
    throw ValidationError("orchestrate expects a single-track piano; downmix multi-track input first");
  Piece piano = rebar_to_44(piano_in);
  validate(piano);
  int n = static_cast<int>(opt.instruments.size());
  if (n < 1) throw ValidationError("orchestrate needs at least one target instrument");

  auto clips = to_clips(piano);
  int t = static_cast<int>(clips.size());
  std::vector<MixtureCode> mix_codes;
  mix_codes.reserve(clips.size());
  for (const auto& clip : clips) mix_codes.push_back(codec.encode_mixture(downmix(clip)));
  std::vector<TimingCondition> timing = clip_timing(piano.bar_count, 0, t);

  nn::Tensor memory = prior.encode_context(mix_codes, timing, opt.beta, opt.seed);

  std::vector<std::vector<CodeGrouping>> prompt;
  if (opt.prompt) {
    Piece donor = rebar_to_44(*opt.prompt);
    if (static_cast<int>(donor.tracks.size()) != n)
      throw ValidationError("prompt has " + std::to_string(donor.tracks.size()) +
                            " tracks, expected " + std::to_string(n));
    ClipGrid first = to_clips(donor).at(0);
    std::vector<CodeGrouping> step(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
      step[static_cast<size_t>(i)] = codec.encode_function(track_function(first, i)).grouping;
    prompt.push_back(std::move(step));
  }

  SamplingConfig sampling{opt.nucleus_p, opt.temperature, opt.seed ^ 0x517cc1b727220a95ull};
  auto groupings = prior.sample(memory, opt.instruments, timing, prompt, t, sampling);

  std::vector<ClipGrid> decoded;
  decoded.reserve(static_cast<size_t>(t));
  for (int tau = 0; tau < t; ++tau)
    decoded.push_back(codec.decode(mix_codes[static_cast<size_t>(tau)],
                                   groupings[static_cast<size_t>(tau)], opt.instruments));
  Piece out = from_clips(decoded, opt.instruments, piano.bar_count);
  validate(out);
  return out;
}

Piece arrange(const LeadSheet& lead, const PhraseDb& db, const CodecModel& codec,
              const PriorModel& prior, const OrchestrationOptions& opt,
              const PlannerWeights& weights, const DbFilter& filter) {
  Piece sketch = arrange_piano(lead, db, weights, filter);

  Piece accomp;
  accomp.meter = Meter::m44;
  accomp.bar_count = sketch.bar_count;
  accomp.tracks.push_back(sketch.tracks[1]);  // piano only; the melody stays out

  Piece orch = orchestrate(accomp, codec, prior, opt);

  Piece out;
  out.meter = Meter::m44;
  out.bar_count = lead.bar_count;
  out.phrases = lead.phrases;
  Track melody = lead.melody;
  if (melody.name.empty()) melody.name = "melody";
  out.tracks.push_back(std::move(melody));
  for (auto& tr : orch.tracks) out.tracks.push_back(std::move(tr));
  validate(out);
  return out;
}

DonorResult donor_search(const Piece& piano, const std::vector<std::pair<std::string, Piece>>& db,
                         double alpha, uint64_t seed) {
  if (db.empty()) throw ValidationError("donor search over an empty database");
  Piece x = rebar_to_44(piano);
  auto x_desc = function_descriptor(track_function(downmix(to_clips(x).at(0)), 0));

  Rng rng(seed);
  DonorResult best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < db.size(); ++i) {
    Piece y = rebar_to_44(db[i].second);
    auto y_desc = function_descriptor(track_function(downmix(to_clips(y).at(0)), 0));
    double eps = rng.normal();  // one draw per candidate, in database order
    double score = cosine(x_desc, y_desc) + alpha * eps;
    if (score > best_score) {
      best_score = score;
      best.index = i;
      best.id = db[i].first;
      best.score = score;
      best.segment = y;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Dataset preparation
// ---------------------------------------------------------------------------

Piece piece_slice(const Piece& piece_in, int64_t start_bar, int64_t end_bar) {
  Piece piece = rebar_to_44(piece_in);
  if (start_bar < 0 || end_bar <= start_bar || end_bar > piece.bar_count)
    throw ValidationError("bad slice range");
  int64_t lo = start_bar * kStepsPerBar44;
  int64_t hi = end_bar * kStepsPerBar44;
  Piece out;
  out.meter = Meter::m44;
  out.bar_count = end_bar - start_bar;
  for (const auto& tr : piece.tracks) {
    Track t = tr;
    t.notes.clear();
    for (const auto& n : tr.notes)
      if (n.onset >= lo && n.onset < hi)
        t.notes.push_back({n.onset - lo, std::min(n.duration, hi - n.onset), n.pitch});
    out.tracks.push_back(std::move(t));
  }
  validate(out);
  return out;
}

std::vector<TimingCondition> clip_timing(int64_t song_bars, int64_t segment_start_bar,
                                         int clip_count) {
  if (song_bars < 1) throw ValidationError("song has no bars");
  std::vector<TimingCondition> out;
  out.reserve(static_cast<size_t>(clip_count));
  for (int tau = 0; tau < clip_count; ++tau) {
    int64_t bar0 = segment_start_bar + 2 * tau;
    TimingCondition tc;
    tc.song_length_bars = static_cast<double>(song_bars);
    tc.clip_start = static_cast<double>(bar0) / static_cast<double>(song_bars);
    tc.clip_end = std::min(1.0, static_cast<double>(bar0 + 2) / static_cast<double>(song_bars));
    out.push_back(tc);
  }
  return out;
}

Segment encode_segment(const CodecModel& codec, const Piece& song, int64_t start_bar,
                       int64_t end_bar, int64_t song_bars, const std::string& id) {
  Piece slice = piece_slice(song, start_bar, end_bar);
  CodecModel::EncodedPiece enc = codec.encode_piece(slice);
  Segment s;
  s.id = id;
  s.mix_codes = std::move(enc.mix_codes);
  s.groupings = std::move(enc.groupings);
  s.instruments = std::move(enc.instruments);
  s.timing = clip_timing(song_bars, start_bar, static_cast<int>(s.mix_codes.size()));
  return s;
}

void save_segments(const std::vector<Segment>& segments, const std::string& path) {
  nn::Checkpoint ck;
  ck.kind = "codes";
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& s : segments) ids.push_back(s.id);
  ck.config_json = nlohmann::json{{"count", segments.size()}, {"ids", ids}}.dump();
  for (size_t i = 0; i < segments.size(); ++i) {
    const Segment& s = segments[i];
    std::string p = "seg" + std::to_string(i);
    int t = s.steps(), n = s.tracks();
    nn::Tensor mix(t, static_cast<int>(s.mix_codes.at(0).z.size()));
    for (int tau = 0; tau < t; ++tau)
      std::copy(s.mix_codes[static_cast<size_t>(tau)].z.begin(),
                s.mix_codes[static_cast<size_t>(tau)].z.end(),
                mix.data.begin() + static_cast<ptrdiff_t>(tau) * mix.cols);
    ck.f64[p + ".mix"] = std::move(mix);
    std::vector<int64_t> codes;
    codes.reserve(static_cast<size_t>(t) * n * 9);
    for (int tau = 0; tau < t; ++tau)
      for (int nn_ = 0; nn_ < n; ++nn_) {
        const CodeGrouping& z = s.groupings[static_cast<size_t>(tau)][static_cast<size_t>(nn_)];
        codes.push_back(z.pitch_code);
        for (int k = 0; k < 8; ++k) codes.push_back(z.time_codes[static_cast<size_t>(k)]);
      }
    ck.i64[p + ".codes"] = std::move(codes);
    ck.i64[p + ".inst"] = std::vector<int64_t>(s.instruments.begin(), s.instruments.end());
    nn::Tensor timing(t, 3);
    for (int tau = 0; tau < t; ++tau) {
      timing.at(tau, 0) = s.timing[static_cast<size_t>(tau)].song_length_bars;
      timing.at(tau, 1) = s.timing[static_cast<size_t>(tau)].clip_start;
      timing.at(tau, 2) = s.timing[static_cast<size_t>(tau)].clip_end;
    }
    ck.f64[p + ".timing"] = std::move(timing);
  }
  ck.save(path);
}

std::vector<Segment> load_segments(const std::string& path) {
  nn::Checkpoint ck = nn::Checkpoint::load(path);
  if (ck.kind != "codes") throw ValidationError("not a code cache: " + path);
  nlohmann::json meta = nlohmann::json::parse(ck.config_json);
  size_t count = meta.at("count").get<size_t>();
  std::vector<Segment> out;
  for (size_t i = 0; i < count; ++i) {
    std::string p = "seg" + std::to_string(i);
    Segment s;
    s.id = meta.at("ids").at(i).get<std::string>();
    const nn::Tensor& mix = ck.f64.at(p + ".mix");
    const auto& codes = ck.i64.at(p + ".codes");
    const auto& inst = ck.i64.at(p + ".inst");
    const nn::Tensor& timing = ck.f64.at(p + ".timing");
    int t = mix.rows;
    int n = static_cast<int>(inst.size());
    if (static_cast<size_t>(t) * n * 9 != codes.size())
      throw ValidationError("code cache is inconsistent: " + p);
    s.instruments.assign(inst.begin(), inst.end());
    size_t at = 0;
    for (int tau = 0; tau < t; ++tau) {
      s.mix_codes.push_back(
          {std::vector<double>(mix.data.begin() + static_cast<ptrdiff_t>(tau) * mix.cols,
                               mix.data.begin() + static_cast<ptrdiff_t>(tau + 1) * mix.cols)});
      std::vector<CodeGrouping> step(static_cast<size_t>(n));
      for (int nn_ = 0; nn_ < n; ++nn_) {
        CodeGrouping& z = step[static_cast<size_t>(nn_)];
        z.pitch_code = static_cast<int>(codes[at++]);
        for (int k = 0; k < 8; ++k) z.time_codes[static_cast<size_t>(k)] = static_cast<int>(codes[at++]);
      }
      s.groupings.push_back(std::move(step));
      s.timing.push_back({timing.at(tau, 0), timing.at(tau, 1), timing.at(tau, 2)});
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

namespace {

std::vector<double> parse_split(const std::string& spec) {
  std::vector<double> parts;
  std::string token;
  for (char ch : spec + ":") {
    if (ch == ':' || ch == '/') {
      if (!token.empty()) parts.push_back(std::stod(token));
      token.clear();
    } else {
      token += ch;
    }
  }
  if (parts.size() < 2 || parts.size() > 3)
    throw ValidationError("split spec needs 2 or 3 parts, e.g. 8:1:1 or 95/5");
  double total = 0;
  for (double p : parts) total += p;
  if (total <= 0) throw ValidationError("split ratios must be positive");
  for (auto& p : parts) p /= total;
  return parts;
}

const char* kSplitNames[3] = {"train", "val", "test"};

}  // namespace

std::string IngestManifest::to_json() const {
  nlohmann::json j;
  j["files"] = nlohmann::json::array();
  int ok = 0, skipped = 0;
  for (const auto& f : files) {
    nlohmann::json e{{"path", f.path}, {"status", f.status}};
    if (!f.reason.empty()) e["reason"] = f.reason;
    if (f.status == "ok") {
      e["split"] = f.split;
      e["bars"] = f.bars;
      e["segments"] = f.segment_files;
      ++ok;
    } else {
      ++skipped;
    }
    j["files"].push_back(e);
  }
  j["counts"] = {{"ok", ok}, {"skipped", skipped}};
  return j.dump(2);
}

IngestManifest ingest(const std::string& input_dir, const std::string& output_dir,
                      const IngestOptions& opt) {
  if (!fs::is_directory(input_dir)) throw IoError("not a directory: " + input_dir);
  if (opt.segment_bars < 2) throw ValidationError("segment_bars must be at least 2");
  std::vector<double> ratios = parse_split(opt.split);
  fs::create_directories(output_dir);
  fs::create_directories(fs::path(output_dir) / "segments");

  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(input_dir))
    if (e.path().extension() == ".mid" || e.path().extension() == ".midi")
      paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());

  IngestManifest manifest;
  std::vector<size_t> ok_files;
  std::vector<Piece> pieces;
  for (const auto& path : paths) {
    IngestFile f;
    f.path = path.string();
    try {
      Piece piece = rebar_to_44(read_midi(path.string()));
      if (piece.tracks.empty()) throw ValidationError("no playable tracks");
      f.status = "ok";
      f.bars = piece.bar_count;
      ok_files.push_back(manifest.files.size());
      pieces.push_back(std::move(piece));
    } catch (const std::exception& ex) {
      f.status = "skipped";
      f.reason = ex.what();
    }
    manifest.files.push_back(std::move(f));
  }

  // song-level split
  std::vector<size_t> order(ok_files.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(opt.seed);
  rng.shuffle(order);
  auto songs = static_cast<double>(order.size());
  std::vector<size_t> boundary;
  double cum = 0;
  for (size_t i = 0; i + 1 < ratios.size(); ++i) {
    cum += ratios[i];
    boundary.push_back(static_cast<size_t>(std::llround(cum * songs)));
  }
  for (size_t pos = 0; pos < order.size(); ++pos) {
    size_t split_idx = 0;
    while (split_idx < boundary.size() && pos >= boundary[split_idx]) ++split_idx;
    manifest.files[ok_files[order[pos]]].split = kSplitNames[split_idx];
  }

  // segmentation + optional code caching
  std::unique_ptr<CodecModel> codec;
  if (!opt.codec_checkpoint.empty())
    codec = std::make_unique<CodecModel>(CodecModel::load(opt.codec_checkpoint));
  std::vector<std::vector<Segment>> cached(ratios.size());

  for (size_t i = 0; i < ok_files.size(); ++i) {
    IngestFile& f = manifest.files[ok_files[i]];
    const Piece& piece = pieces[i];
    std::string stem = fs::path(f.path).stem().string();
    for (int64_t start = 0, k = 0; start < piece.bar_count; start += opt.segment_bars, ++k) {
      int64_t end = std::min<int64_t>(piece.bar_count, start + opt.segment_bars);
      Piece seg = piece_slice(piece, start, end);
      std::string seg_name = stem + "_seg" + std::to_string(k) + ".mid";
      fs::path seg_path = fs::path(output_dir) / "segments" / seg_name;
      write_midi(seg, seg_path.string());
      // manifest paths stay relative to the output directory
      f.segment_files.push_back((fs::path("segments") / seg_name).string());
      if (codec) {
        size_t split_idx = 0;
        for (size_t s = 0; s < ratios.size(); ++s)
          if (f.split == kSplitNames[s]) split_idx = s;
        cached[split_idx].push_back(
            encode_segment(*codec, piece, start, end, piece.bar_count, stem + "#" + std::to_string(k)));
      }
    }
  }

  if (codec)
    for (size_t s = 0; s < ratios.size(); ++s)
      if (!cached[s].empty())
        save_segments(cached[s],
                      (fs::path(output_dir) / ("codes_" + std::string(kSplitNames[s]) + ".bin"))
                          .string());

  std::ofstream mf(fs::path(output_dir) / "manifest.json");
  if (!mf) throw IoError("cannot write manifest.json");
  mf << manifest.to_json() << "\n";
  return manifest;
}

}  // namespace fullband
