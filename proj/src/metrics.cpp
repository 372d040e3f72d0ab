#include "fullband/metrics.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace fullband {

namespace {

void require_equal_bars(const Piece& a, const Piece& b) {
  if (metric_bar_count(a) != metric_bar_count(b))
    throw ValidationError("bar-count mismatch: " + std::to_string(metric_bar_count(a)) +
                          " vs " + std::to_string(metric_bar_count(b)));
}

enum class Descriptor { pitch, groove };

double similarity_mean(const Piece& result, const Piece& piano, Descriptor d) {
  require_equal_bars(result, piano);
  int64_t bars = metric_bar_count(result);
  double total = 0;
  for (int64_t k = 0; k < bars; ++k) {
    BarFeatures a = bar_features(result, k);
    BarFeatures b = bar_features(piano, k);
    total += d == Descriptor::pitch ? cosine(a.pitch_hist, b.pitch_hist)
                                    : cosine(a.voice_intensity, b.voice_intensity);
  }
  return total / static_cast<double>(bars);
}

double entropy_mean(const Piece& result, const Piece& piano, Descriptor d) {
  require_equal_bars(result, piano);
  if (result.tracks.empty()) throw ValidationError("result has no tracks");
  int64_t bars = metric_bar_count(result);
  size_t n_tracks = result.tracks.size();
  double total = 0;
  for (int64_t k = 0; k < bars; ++k) {
    BarFeatures pno = bar_features(piano, k);
    std::vector<double> sim(n_tracks);
    double sum = 0;
    for (size_t n = 0; n < n_tracks; ++n) {
      BarFeatures f = bar_features(result, k, static_cast<int>(n));
      sim[n] = d == Descriptor::pitch ? cosine(f.pitch_hist, pno.pitch_hist)
                                      : cosine(f.voice_intensity, pno.voice_intensity);
      sum += sim[n];
    }
    double entropy = 0;
    if (sum == 0.0) {
      entropy = std::log(static_cast<double>(n_tracks));  // uniform by convention
    } else {
      for (size_t n = 0; n < n_tracks; ++n) {
        double p = sim[n] / sum;
        if (p > 0) entropy -= p * std::log(p);
      }
    }
    total += entropy;
  }
  return total / static_cast<double>(bars);
}

double consistency(const std::array<uint8_t, 16>& a, const std::array<uint8_t, 16>& b) {
  int diff = 0;
  for (int q = 0; q < 16; ++q) diff += a[static_cast<size_t>(q)] != b[static_cast<size_t>(q)];
  return 1.0 - diff / 16.0;
}

std::vector<std::array<uint8_t, 16>> grooves_of(const Piece& piece, int scope) {
  int64_t bars = metric_bar_count(piece);
  std::vector<std::array<uint8_t, 16>> out(static_cast<size_t>(bars));
  for (int64_t k = 0; k < bars; ++k) out[static_cast<size_t>(k)] = bar_features(piece, k, scope).groove;
  return out;
}

double groove_self_consistency(const std::vector<std::array<uint8_t, 16>>& g) {
  auto bars = static_cast<int64_t>(g.size());
  double total = 0;
  for (int64_t i = 0; i < bars; ++i)
    for (int64_t j = 0; j < bars; ++j)
      total += consistency(g[static_cast<size_t>(i)], g[static_cast<size_t>(j)]);
  return total / static_cast<double>(bars * bars);
}

}  // namespace

double s_pitch(const Piece& result, const Piece& piano) {
  return similarity_mean(result, piano, Descriptor::pitch);
}

double s_groove(const Piece& result, const Piece& piano) {
  return similarity_mean(result, piano, Descriptor::groove);
}

double h_pitch(const Piece& result, const Piece& piano) {
  return entropy_mean(result, piano, Descriptor::pitch);
}

double h_groove(const Piece& result, const Piece& piano) {
  return entropy_mean(result, piano, Descriptor::groove);
}

double a_chord(const Piece& arrangement, const LeadSheet& lead) {
  std::vector<ChordSymbol> recognized = recognize_chords(arrangement);
  if (recognized.size() != lead.chords.size())
    throw ValidationError("beat-count mismatch: " + std::to_string(recognized.size()) +
                          " vs " + std::to_string(lead.chords.size()));
  size_t hits = 0;
  for (size_t i = 0; i < recognized.size(); ++i)
    if (recognized[i] == lead.chords[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(recognized.size());
}

double g_mix(const Piece& piece) {
  return groove_self_consistency(grooves_of(piece, kMixtureScope));
}

double g_track(const Piece& piece) {
  if (piece.tracks.empty()) throw ValidationError("piece has no tracks");
  double total = 0;
  for (size_t n = 0; n < piece.tracks.size(); ++n)
    total += groove_self_consistency(grooves_of(piece, static_cast<int>(n)));
  return total / static_cast<double>(piece.tracks.size());
}

double g_phrase(const Piece& piece, const std::vector<Phrase>& phrases) {
  int64_t bars = metric_bar_count(piece);
  if (phrases.size() < 2) throw MetricUndefined("g_phrase needs at least two phrases");
  int64_t sum = 0;
  for (const auto& p : phrases) {
    if (p.length_bars <= 0 || p.length_bars >= bars)
      throw MetricUndefined("phrase must cover a proper subset of the piece");
    sum += p.length_bars;
  }
  if (sum != bars) throw ValidationError("phrase lengths do not sum to bar count");

  auto grooves = grooves_of(piece, kMixtureScope);
  double total = 0;
  int64_t start = 0;
  for (const auto& p : phrases) {
    int64_t lo = start, hi = start + p.length_bars;
    start = hi;
    double intra = 0;
    for (int64_t i = lo; i < hi; ++i)
      for (int64_t j = lo; j < hi; ++j)
        intra += consistency(grooves[static_cast<size_t>(i)], grooves[static_cast<size_t>(j)]);
    intra /= static_cast<double>(p.length_bars) * static_cast<double>(p.length_bars);
    double inter = 0;
    for (int64_t i = lo; i < hi; ++i)
      for (int64_t k = 0; k < bars; ++k)
        if (k < lo || k >= hi)
          inter += consistency(grooves[static_cast<size_t>(i)], grooves[static_cast<size_t>(k)]);
    inter /= static_cast<double>(p.length_bars) * static_cast<double>(bars - p.length_bars);
    if (inter == 0.0)
      throw MetricUndefined("inter-phrase consistency is zero; g_phrase diverges");
    total += intra / inter;
  }
  return total / static_cast<double>(phrases.size());
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

MetricStat aggregate(std::span<const double> values) {
  MetricStat s;
  s.n = values.size();
  if (s.n == 0) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    double stderr_ = std::sqrt(ss / static_cast<double>(s.n - 1)) /
                     std::sqrt(static_cast<double>(s.n));
    s.ci_half = 1.96 * stderr_;
  }
  return s;
}

std::map<std::string, MetricStat> MetricReport::stats() const {
  std::map<std::string, MetricStat> out;
  for (const auto& [name, values] : per_piece) out[name] = aggregate(values);
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  for (const auto& [name, values] : per_piece) {
    MetricStat s = aggregate(values);
    j[name] = {{"mean", s.mean}, {"ci95_half", s.ci_half}, {"n", s.n}, {"values", values}};
  }
  return j.dump(2);
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << "metric        mean      95% CI    n\n";
  for (const auto& [name, values] : per_piece) {
    MetricStat s = aggregate(values);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-12s %8.4f  +-%7.4f  %zu\n", name.c_str(), s.mean,
                  s.ci_half, s.n);
    os << buf;
  }
  return os.str();
}

}  // namespace fullband
