// fullband: multi-track accompaniment arrangement toolkit.
//
// Subcommands cover the whole pipeline: dataset ingestion, phrase-database
// construction, codec/prior training, piano-sketch arrangement, orchestration,
// donor search, and the objective evaluation suite.
//
// Exit codes: 0 success, 2 validation error, 3 I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fullband/metrics.hpp"
#include "fullband/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace fullband;

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<int> parse_instruments(const std::string& spec) {
  std::vector<int> out;
  std::string token;
  for (char ch : spec + ",") {
    if (ch == ',' || ch == ' ') {
      if (!token.empty()) out.push_back(std::stoi(token));
      token.clear();
    } else {
      token += ch;
    }
  }
  if (out.empty()) throw ValidationError("no instruments given");
  for (int cls : out)
    if (cls < 0 || cls >= kNumInstrumentClasses)
      throw ValidationError("instrument class out of range: " + std::to_string(cls));
  return out;
}

std::vector<Phrase> resolve_phrases(const std::string& arg, const std::string& lead_path) {
  if (!arg.empty()) {
    if (fs::exists(arg)) return parse_phrase_string(read_text_file(arg));
    return parse_phrase_string(arg);
  }
  fs::path sidecar = fs::path(lead_path).replace_extension(".phrases");
  if (fs::exists(sidecar)) return parse_phrase_string(read_text_file(sidecar.string()));
  return {};
}

// monophonic reduction: truncate each note at the next onset
Track monophonic(Track melody) {
  melody.sort_notes();
  for (size_t i = 0; i + 1 < melody.notes.size(); ++i) {
    int64_t next = melody.notes[i + 1].onset;
    if (melody.notes[i].onset + melody.notes[i].duration > next)
      melody.notes[i].duration = std::max<int64_t>(1, next - melody.notes[i].onset);
  }
  return melody;
}

LeadSheet load_lead(const std::string& path, const std::string& phrases_arg) {
  if (fs::path(path).extension() == ".json") {
    LeadSheet lead = lead_from_json(read_text_file(path));
    if (lead.phrases.empty()) lead.phrases = resolve_phrases(phrases_arg, path);
    validate(lead);
    return lead;
  }
  Piece piece = rebar_to_44(read_midi(path));
  if (piece.tracks.empty()) throw ValidationError("lead MIDI has no tracks");
  LeadSheet lead;
  lead.bar_count = piece.bar_count;
  lead.melody = monophonic(piece.tracks[0]);
  lead.chords = piece.tracks.size() > 1 ? recognize_chords(without_track(piece, 0))
                                        : recognize_chords(piece);
  lead.phrases = resolve_phrases(phrases_arg, path);
  validate(lead);
  return lead;
}

std::vector<std::string> list_midis(const std::string& path) {
  std::vector<std::string> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(path))
      if (e.path().extension() == ".mid" || e.path().extension() == ".midi")
        paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) out.push_back(p.string());
  } else if (fs::exists(path)) {
    out.push_back(path);
  } else {
    throw IoError("no such file or directory: " + path);
  }
  if (out.empty()) throw ValidationError("no MIDI files under " + path);
  return out;
}

std::vector<Piece> load_training_pieces(const std::string& input) {
  // an ingest output directory is recognized by its manifest
  std::string dir = input;
  if (fs::is_directory(input) && fs::exists(fs::path(input) / "manifest.json"))
    dir = (fs::path(input) / "segments").string();
  std::vector<Piece> pieces;
  for (const auto& path : list_midis(dir)) {
    try {
      pieces.push_back(rebar_to_44(read_midi(path)));
    } catch (const std::exception& e) {
      std::cerr << "skipping " << path << ": " << e.what() << "\n";
    }
  }
  if (pieces.empty()) throw ValidationError("no usable training pieces under " + input);
  return pieces;
}

int run(int argc, char** argv) {
  CLI::App app{"multi-track accompaniment arrangement toolkit"};
  app.require_subcommand(1);

  // ---- ingest ----
  auto* ingest_cmd = app.add_subcommand("ingest", "prepare a MIDI corpus");
  std::string in_dir, out_dir, split = "8:1:1", codec_path;
  int segment_bars = 32;
  uint64_t seed = 0;
  ingest_cmd->add_option("--input", in_dir, "corpus directory")->required();
  ingest_cmd->add_option("--output", out_dir, "output directory")->required();
  ingest_cmd->add_option("--split", split, "song-level split, e.g. 8:1:1 or 95/5");
  ingest_cmd->add_option("--segment-bars", segment_bars, "segment length in bars");
  ingest_cmd->add_option("--codec", codec_path, "codec checkpoint for code caching");
  ingest_cmd->add_option("--seed", seed, "split seed");

  // ---- build-db ----
  auto* db_cmd = app.add_subcommand("build-db", "build the phrase database");
  std::string db_in, db_out;
  db_cmd->add_option("--input", db_in, "directory of .mid + .phrases files")->required();
  db_cmd->add_option("--output", db_out, "database file (JSON)")->required();

  // ---- train-codec ----
  auto* tc_cmd = app.add_subcommand("train-codec", "train the track-function codec");
  std::string tc_in, tc_out, tc_config;
  uint64_t tc_seed = 0;
  bool tc_seed_set = false;
  tc_cmd->add_option("--input", tc_in, "MIDI directory or ingest output")->required();
  tc_cmd->add_option("--output", tc_out, "checkpoint path")->required();
  tc_cmd->add_option("--config", tc_config, "training config JSON file");
  tc_cmd->add_option("--seed", tc_seed, "training seed")->each([&](const std::string&) {
    tc_seed_set = true;
  });

  // ---- train-prior ----
  auto* tp_cmd = app.add_subcommand("train-prior", "train the code-grouping prior");
  std::string tp_in, tp_codec, tp_out, tp_config;
  uint64_t tp_seed = 0;
  bool tp_seed_set = false;
  tp_cmd->add_option("--input", tp_in, "ingest output with cached codes, or MIDI directory")
      ->required();
  tp_cmd->add_option("--codec", tp_codec, "codec checkpoint (needed without cached codes)");
  tp_cmd->add_option("--output", tp_out, "checkpoint path")->required();
  tp_cmd->add_option("--config", tp_config, "training config JSON file");
  tp_cmd->add_option("--seed", tp_seed, "training seed")->each([&](const std::string&) {
    tp_seed_set = true;
  });

  // ---- shared generation options ----
  std::string lead_path, phrases_arg, db_path, codec_ckpt, prior_ckpt, prompt_path, output;
  std::string instruments_arg = "0";
  std::string gen_config;
  double beta = 0.5, nucleus_p = 0.1, temperature = 4.0;
  uint64_t gen_seed = 0;
  DbFilter filter;

  auto add_generation_options = [&](CLI::App* cmd, bool with_planner) {
    cmd->add_option("--codec", codec_ckpt, "codec checkpoint")->required();
    cmd->add_option("--prior", prior_ckpt, "prior checkpoint")->required();
    cmd->add_option("--config", gen_config,
                    "sampling config JSON (beta, nucleus_p, temperature, seed, prompt); "
                    "explicit flags win");
    cmd->add_option("--instruments", instruments_arg, "target classes, e.g. \"0,5,12\"");
    cmd->add_option("--prompt", prompt_path, "2-bar multi-track MIDI style donor");
    cmd->add_option("--beta", beta, "noise weight in [0,1]");
    cmd->add_option("--nucleus-p", nucleus_p, "nucleus sampling mass");
    cmd->add_option("--temperature", temperature, "sampling temperature");
    cmd->add_option("--seed", gen_seed, "sampling seed");
    cmd->add_option("--output", output, "output MIDI path")->required();
    if (with_planner) {
      cmd->add_option("--min-onsets-per-bar", filter.min_onsets_per_bar, "db pre-filter");
      cmd->add_option("--max-onsets-per-bar", filter.max_onsets_per_bar, "db pre-filter");
      cmd->add_option("--min-voices", filter.min_voices, "db pre-filter");
      cmd->add_option("--max-voices", filter.max_voices, "db pre-filter");
    }
  };

  // ---- arrange ----
  auto* arrange_cmd = app.add_subcommand("arrange", "lead sheet to full band");
  arrange_cmd->add_option("--lead", lead_path, "lead sheet (.mid or .json)")->required();
  arrange_cmd->add_option("--phrases", phrases_arg, "phrase string (A8A8B8B8) or file");
  arrange_cmd->add_option("--db", db_path, "phrase database")->required();
  add_generation_options(arrange_cmd, true);

  // ---- orchestrate ----
  auto* orch_cmd = app.add_subcommand("orchestrate", "piano solo to full band");
  std::string piano_path;
  orch_cmd->add_option("--piano", piano_path, "single-track piano MIDI")->required();
  add_generation_options(orch_cmd, false);

  // ---- donor-search ----
  auto* donor_cmd = app.add_subcommand("donor-search", "find a style donor for a piano clip");
  std::string donor_piano, donor_db, donor_out;
  double alpha = 0.2;
  uint64_t donor_seed = 0;
  donor_cmd->add_option("--piano", donor_piano, "piano MIDI")->required();
  donor_cmd->add_option("--db", donor_db, "directory of multi-track MIDI pieces")->required();
  donor_cmd->add_option("--alpha", alpha, "randomness ratio");
  donor_cmd->add_option("--seed", donor_seed, "noise seed");
  donor_cmd->add_option("--output", donor_out, "donor segment MIDI path");

  // ---- evaluate ----
  auto* eval_cmd = app.add_subcommand("evaluate", "objective metric suite");
  std::string eval_result, eval_piano, eval_lead, eval_phrases, eval_json;
  eval_cmd->add_option("--result", eval_result, "result MIDI file or directory")->required();
  eval_cmd->add_option("--piano", eval_piano, "reference piano file or directory");
  eval_cmd->add_option("--lead", eval_lead, "lead sheet for arrangement metrics");
  eval_cmd->add_option("--phrases", eval_phrases, "phrase annotation for the lead");
  eval_cmd->add_option("--json", eval_json, "write the report as JSON here");

  CLI11_PARSE(app, argc, argv);

  if (*ingest_cmd) {
    IngestOptions opt;
    opt.split = split;
    opt.segment_bars = segment_bars;
    opt.seed = seed;
    opt.codec_checkpoint = codec_path;
    IngestManifest manifest = ingest(in_dir, out_dir, opt);
    int ok = 0, skipped = 0;
    for (const auto& f : manifest.files) (f.status == "ok" ? ok : skipped)++;
    std::cout << "ingested " << ok << " songs (" << skipped << " skipped) into " << out_dir
              << "\n";
    return 0;
  }

  if (*db_cmd) {
    PhraseDb db = PhraseDb::build_from_dir(db_in);
    db.save(db_out);
    std::cout << "phrase database with " << db.size() << " entries written to " << db_out << "\n";
    return 0;
  }

  if (*tc_cmd) {
    CodecConfig cfg;
    if (!tc_config.empty()) cfg = CodecConfig::from_json(read_text_file(tc_config));
    if (tc_seed_set) cfg.seed = tc_seed;
    std::vector<Piece> pieces = load_training_pieces(tc_in);
    CodecTrainStats stats;
    CodecModel model = CodecModel::train(pieces, cfg, &stats);
    model.save(tc_out);
    std::cout << "codec trained on " << pieces.size() << " pieces, " << cfg.epochs
              << " epochs; final loss " << stats.epoch_loss.back() << "\n";
    return 0;
  }

  if (*tp_cmd) {
    PriorConfig cfg;
    if (!tp_config.empty()) cfg = PriorConfig::from_json(read_text_file(tp_config));
    if (tp_seed_set) cfg.seed = tp_seed;
    std::vector<Segment> corpus, val;
    fs::path cache = fs::path(tp_in) / "codes_train.bin";
    if (fs::exists(cache)) {
      corpus = load_segments(cache.string());
      fs::path val_cache = fs::path(tp_in) / "codes_val.bin";
      if (fs::exists(val_cache)) val = load_segments(val_cache.string());
    } else {
      if (tp_codec.empty())
        throw ValidationError("no cached codes under " + tp_in + "; pass --codec to encode");
      CodecModel codec = CodecModel::load(tp_codec);
      for (const auto& path : list_midis(tp_in)) {
        Piece piece = rebar_to_44(read_midi(path));
        corpus.push_back(encode_segment(codec, piece, 0, piece.bar_count, piece.bar_count,
                                        fs::path(path).stem().string()));
      }
    }
    PriorTrainStats stats;
    PriorModel model = PriorModel::train(corpus, cfg, &stats, val.empty() ? nullptr : &val);
    model.save(tp_out);
    std::cout << "prior trained on " << corpus.size() << " segments for " << cfg.train_steps
              << " steps; final loss " << stats.step_loss.back();
    if (!stats.val_nll.empty()) std::cout << "; val nll " << stats.val_nll.back();
    std::cout << "\n";
    return 0;
  }

  if (*arrange_cmd || *orch_cmd) {
    CLI::App* active = *arrange_cmd ? arrange_cmd : orch_cmd;
    if (!gen_config.empty()) {
      nlohmann::json j = nlohmann::json::parse(read_text_file(gen_config));
      if (active->count("--beta") == 0) beta = j.value("beta", beta);
      if (active->count("--nucleus-p") == 0) nucleus_p = j.value("nucleus_p", nucleus_p);
      if (active->count("--temperature") == 0) temperature = j.value("temperature", temperature);
      if (active->count("--seed") == 0) gen_seed = j.value("seed", gen_seed);
      if (active->count("--prompt") == 0) prompt_path = j.value("prompt", prompt_path);
      if (active->count("--instruments") == 0)
        instruments_arg = j.value("instruments", instruments_arg);
    }
    CodecModel codec = CodecModel::load(codec_ckpt);
    PriorModel prior = PriorModel::load(prior_ckpt);
    OrchestrationOptions opt;
    opt.instruments = parse_instruments(instruments_arg);
    opt.beta = beta;
    opt.nucleus_p = nucleus_p;
    opt.temperature = temperature;
    opt.seed = gen_seed;
    if (!prompt_path.empty()) opt.prompt = read_midi(prompt_path);

    Piece result;
    if (*arrange_cmd) {
      LeadSheet lead = load_lead(lead_path, phrases_arg);
      PhraseDb db = PhraseDb::load(db_path);
      result = arrange(lead, db, codec, prior, opt, PlannerWeights{}, filter);
    } else {
      result = orchestrate(read_midi(piano_path), codec, prior, opt);
    }
    write_midi(result, output);
    std::cout << "wrote " << result.tracks.size() << "-track, " << result.bar_count
              << "-bar arrangement to " << output << "\n";
    return 0;
  }

  if (*donor_cmd) {
    Piece piano = read_midi(donor_piano);
    std::vector<std::pair<std::string, Piece>> db;
    for (const auto& path : list_midis(donor_db))
      db.emplace_back(fs::path(path).stem().string(), read_midi(path));
    DonorResult donor = donor_search(piano, db, alpha, donor_seed);
    std::cout << "donor: " << donor.id << " (index " << donor.index << ", score " << donor.score
              << ")\n";
    if (!donor_out.empty()) write_midi(donor.segment, donor_out);
    return 0;
  }

  if (*eval_cmd) {
    std::vector<std::string> results = list_midis(eval_result);
    std::vector<std::string> pianos;
    if (!eval_piano.empty()) pianos = list_midis(eval_piano);
    if (!pianos.empty() && pianos.size() != results.size())
      throw ValidationError("result/piano counts differ");
    std::optional<LeadSheet> lead;
    if (!eval_lead.empty()) lead = load_lead(eval_lead, eval_phrases);

    MetricReport report;
    for (size_t i = 0; i < results.size(); ++i) {
      Piece result = rebar_to_44(read_midi(results[i]));
      if (!pianos.empty()) {
        Piece piano = rebar_to_44(read_midi(pianos[i]));
        report.add("s_pitch", s_pitch(result, piano));
        report.add("s_groove", s_groove(result, piano));
        report.add("h_pitch", h_pitch(result, piano));
        report.add("h_groove", h_groove(result, piano));
      }
      report.add("g_mix", g_mix(result));
      report.add("g_track", g_track(result));
      if (lead) {
        report.add("a_chord", a_chord(result, *lead));
        if (!lead->phrases.empty()) {
          try {
            report.add("g_phrase", g_phrase(result, lead->phrases));
          } catch (const MetricUndefined& e) {
            std::cerr << results[i] << ": g_phrase undefined: " << e.what() << "\n";
          }
        }
      }
    }
    std::cout << report.to_table();
    if (!eval_json.empty()) {
      std::ofstream out(eval_json);
      if (!out) throw IoError("cannot write " + eval_json);
      out << report.to_json() << "\n";
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
