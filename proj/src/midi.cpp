#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <vector>

#include "fullband/score.hpp"

namespace fullband {

namespace {

constexpr int kTicksPerQuarter = 480;  // output resolution
constexpr uint32_t kTempoUsec = 500000;  // 120 BPM

// Nearest 1/4-beat step with ties toward the earlier step:
// step = ceil(tick*4/tpq - 1/2), computed exactly in integers.
int64_t quantize_tick(int64_t tick, int64_t tpq) {
  int64_t num = 8 * tick - tpq;
  int64_t den = 2 * tpq;
  int64_t q = num / den;
  if (num % den > 0) ++q;
  return std::max<int64_t>(0, q);
}

int64_t exact_tick_step(int64_t tick, int64_t tpq, size_t offset) {
  if ((tick * 4) % tpq != 0)
    throw ValidationError("event at tick " + std::to_string(tick) +
                          " is off the 1/4-beat grid (byte offset " +
                          std::to_string(offset) + ")");
  return tick * 4 / tpq;
}

struct Cursor {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  uint8_t u8() {
    if (pos >= bytes.size()) throw ParseError("unexpected end of file", pos);
    return bytes[pos++];
  }
  uint16_t u16() { return static_cast<uint16_t>(u8() << 8 | u8()); }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = v << 8 | u8();
    return v;
  }
  uint32_t vlq() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      uint8_t b = u8();
      v = (v << 7) | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    throw ParseError("variable-length quantity longer than 4 bytes", pos);
  }
  void skip(size_t n) {
    if (pos + n > bytes.size()) throw ParseError("chunk runs past end of file", pos);
    pos += n;
  }
  void expect_tag(const char* tag) {
    size_t at = pos;
    for (int i = 0; i < 4; ++i)
      if (u8() != static_cast<uint8_t>(tag[i]))
        throw ParseError(std::string("expected '") + tag + "' chunk", at);
  }
};

struct RawNote {
  int64_t on_tick;
  int64_t off_tick;
  int pitch;
};

struct Voice {
  int chunk;
  int channel;
  int program = -1;  // first program change seen, -1 = none
  std::vector<RawNote> notes;
};

}  // namespace

Piece read_midi_bytes(const std::vector<uint8_t>& bytes, bool quantize) {
  Cursor cur{bytes};
  cur.expect_tag("MThd");
  uint32_t header_len = cur.u32();
  if (header_len < 6) throw ParseError("MThd shorter than 6 bytes", cur.pos);
  size_t header_end = cur.pos + header_len;
  uint16_t format = cur.u16();
  uint16_t ntrks = cur.u16();
  uint16_t division = cur.u16();
  cur.pos = header_end;
  if (format > 1)
    throw ValidationError("unsupported SMF format " + std::to_string(format) +
                          " (only types 0 and 1)");
  if (division & 0x8000) throw ValidationError("SMPTE time division is unsupported");
  int64_t tpq = division;
  if (tpq == 0) throw ParseError("time division of zero", cur.pos - 2);

  std::map<std::pair<int, int>, Voice> voices;  // (chunk, channel) -> voice
  std::vector<std::string> chunk_names;
  std::optional<std::pair<int, int>> meter;

  for (int chunk = 0; chunk < ntrks; ++chunk) {
    cur.expect_tag("MTrk");
    uint32_t track_len = cur.u32();
    size_t track_end = cur.pos + track_len;
    if (track_end > bytes.size()) throw ParseError("MTrk length runs past end of file", cur.pos - 4);

    chunk_names.emplace_back();
    int64_t tick = 0;
    uint8_t running = 0;
    // open note-ons per (channel, pitch); LIFO pairing keeps nested
    // same-pitch overlaps intact
    std::map<std::pair<int, int>, std::vector<int64_t>> open;

    auto close_note = [&](int channel, int pitch, int64_t off_tick) {
      auto it = open.find({channel, pitch});
      if (it == open.end() || it->second.empty()) return;  // stray note-off
      Voice& v = voices.try_emplace({chunk, channel}, Voice{chunk, channel, -1, {}}).first->second;
      v.notes.push_back({it->second.back(), off_tick, pitch});
      it->second.pop_back();
    };

    while (cur.pos < track_end) {
      tick += cur.vlq();
      size_t event_at = cur.pos;
      uint8_t status = cur.u8();
      if (status < 0x80) {
        if (running == 0) throw ParseError("data byte with no running status", event_at);
        status = running;
        --cur.pos;
      }
      if (status == 0xff) {
        uint8_t type = cur.u8();
        uint32_t len = cur.vlq();
        size_t body = cur.pos;
        if (type == 0x58) {
          if (len < 2) throw ParseError("time signature meta too short", body);
          int numerator = bytes[body];
          int denominator = 1 << bytes[body + 1];
          if (meter && *meter != std::make_pair(numerator, denominator))
            throw ValidationError("meter change from " + std::to_string(meter->first) + "/" +
                                  std::to_string(meter->second) + " to " +
                                  std::to_string(numerator) + "/" +
                                  std::to_string(denominator) + " is unsupported");
          meter = {numerator, denominator};
        } else if (type == 0x03 && chunk_names[chunk].empty()) {
          chunk_names[chunk].assign(bytes.begin() + static_cast<ptrdiff_t>(body),
                                    bytes.begin() + static_cast<ptrdiff_t>(body + len));
        }
        cur.skip(len);
        running = 0;
        continue;
      }
      if (status == 0xf0 || status == 0xf7) {
        uint32_t len = cur.vlq();
        cur.skip(len);
        running = 0;
        continue;
      }
      if (status < 0x80) throw ParseError("bad status byte", event_at);
      running = status;
      int kind = status >> 4;
      int channel = status & 0x0f;
      switch (kind) {
        case 0x8: {  // note off
          uint8_t pitch = cur.u8();
          cur.u8();
          close_note(channel, pitch, tick);
          break;
        }
        case 0x9: {  // note on (velocity 0 = off)
          uint8_t pitch = cur.u8();
          uint8_t vel = cur.u8();
          if (pitch > 127) throw ParseError("pitch out of range", event_at);
          if (vel == 0) {
            close_note(channel, pitch, tick);
          } else {
            voices.try_emplace({chunk, channel}, Voice{chunk, channel, -1, {}});
            open[{channel, pitch}].push_back(tick);
          }
          break;
        }
        case 0xa:  // poly aftertouch
        case 0xb:  // control change
        case 0xe:  // pitch bend
          cur.u8();
          cur.u8();
          break;
        case 0xc: {  // program change
          uint8_t program = cur.u8();
          Voice& v = voices.try_emplace({chunk, channel}, Voice{chunk, channel, -1, {}}).first->second;
          if (v.program < 0) v.program = program;
          break;
        }
        case 0xd:  // channel aftertouch
          cur.u8();
          break;
        default:
          throw ParseError("unknown event status", event_at);
      }
    }
    // unterminated notes close at the end of the track
    for (auto& [key, stack] : open)
      for (int64_t on_tick : stack)
        voices.try_emplace({chunk, key.first}, Voice{chunk, key.first, -1, {}})
            .first->second.notes.push_back({on_tick, tick, key.second});
    cur.pos = track_end;
  }

  Meter m = Meter::m44;
  if (meter) {
    if (*meter == std::make_pair(4, 4))
      m = Meter::m44;
    else if (*meter == std::make_pair(2, 4))
      m = Meter::m24;
    else
      throw ValidationError("unsupported meter " + std::to_string(meter->first) + "/" +
                            std::to_string(meter->second));
  }

  Piece piece;
  piece.meter = m;
  int64_t max_end = 0;
  for (auto& [key, voice] : voices) {
    if (voice.channel == 9) continue;  // drums
    if (voice.notes.empty()) continue;
    Track tr;
    tr.gm_program = voice.program < 0 ? 0 : voice.program;
    tr.instrument_class = instrument_class_for_program(tr.gm_program);
    tr.name = chunk_names[static_cast<size_t>(voice.chunk)];
    for (const auto& raw : voice.notes) {
      int64_t on, off;
      if (quantize) {
        on = quantize_tick(raw.on_tick, tpq);
        off = quantize_tick(raw.off_tick, tpq);
      } else {
        on = exact_tick_step(raw.on_tick, tpq, 0);
        off = exact_tick_step(raw.off_tick, tpq, 0);
      }
      int64_t dur = std::max<int64_t>(1, off - on);
      tr.notes.push_back({on, dur, raw.pitch});
      max_end = std::max(max_end, on + dur);
    }
    tr.sort_notes();
    piece.tracks.push_back(std::move(tr));
  }
  int spb = piece.steps_per_bar();
  piece.bar_count = std::max<int64_t>(1, (max_end + spb - 1) / spb);
  validate(piece);
  return piece;
}

Piece read_midi(const std::string& path, bool quantize) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open MIDI file: " + path);
  std::vector<uint8_t> bytes;
  uint8_t buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) bytes.insert(bytes.end(), buf, buf + n);
  std::fclose(f);
  return read_midi_bytes(bytes, quantize);
}

// ---------------------------------------------------------------------------
// Writer
// ---------------------------------------------------------------------------

namespace {

void push_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void push_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}

void push_vlq(std::vector<uint8_t>& out, uint32_t v) {
  uint8_t stack[4];
  int n = 0;
  do {
    stack[n++] = static_cast<uint8_t>(v & 0x7f);
    v >>= 7;
  } while (v != 0);
  while (n > 1) out.push_back(stack[--n] | 0x80);
  out.push_back(stack[0]);
}

void push_chunk(std::vector<uint8_t>& out, const char* tag, const std::vector<uint8_t>& body) {
  out.insert(out.end(), tag, tag + 4);
  push_u32(out, static_cast<uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
}

struct WireEvent {
  int64_t tick;
  int order;  // 0 = off, 1 = on; offs first at equal ticks
  int pitch;
  bool is_on;
};

}  // namespace

std::vector<uint8_t> write_midi_bytes(const Piece& piece) {
  validate(piece);
  int64_t ticks_per_step = kTicksPerQuarter / kStepsPerBeat;
  std::vector<uint8_t> out;
  out.reserve(1024);

  // header
  std::vector<uint8_t> header;
  push_u16(header, 1);  // format 1
  push_u16(header, static_cast<uint16_t>(piece.tracks.size() + 1));
  push_u16(header, kTicksPerQuarter);
  push_chunk(out, "MThd", header);

  // conductor track: time signature + tempo
  std::vector<uint8_t> meta;
  push_vlq(meta, 0);
  meta.insert(meta.end(), {0xff, 0x58, 0x04});
  meta.push_back(piece.meter == Meter::m44 ? 4 : 2);
  meta.insert(meta.end(), {0x02, 0x18, 0x08});
  push_vlq(meta, 0);
  meta.insert(meta.end(), {0xff, 0x51, 0x03});
  meta.push_back(static_cast<uint8_t>(kTempoUsec >> 16));
  meta.push_back(static_cast<uint8_t>(kTempoUsec >> 8));
  meta.push_back(static_cast<uint8_t>(kTempoUsec));
  push_vlq(meta, 0);
  meta.insert(meta.end(), {0xff, 0x2f, 0x00});
  push_chunk(out, "MTrk", meta);

  for (size_t t = 0; t < piece.tracks.size(); ++t) {
    const Track& tr = piece.tracks[t];
    int ch_index = static_cast<int>(t % 15);
    uint8_t channel = static_cast<uint8_t>(ch_index < 9 ? ch_index : ch_index + 1);

    std::vector<WireEvent> events;
    events.reserve(tr.notes.size() * 2);
    for (const auto& n : tr.notes) {
      events.push_back({n.onset * ticks_per_step, 1, n.pitch, true});
      events.push_back({(n.onset + n.duration) * ticks_per_step, 0, n.pitch, false});
    }
    std::sort(events.begin(), events.end(), [](const WireEvent& a, const WireEvent& b) {
      return std::tie(a.tick, a.order, a.pitch) < std::tie(b.tick, b.order, b.pitch);
    });

    std::vector<uint8_t> body;
    if (!tr.name.empty()) {
      push_vlq(body, 0);
      body.insert(body.end(), {0xff, 0x03});
      push_vlq(body, static_cast<uint32_t>(tr.name.size()));
      body.insert(body.end(), tr.name.begin(), tr.name.end());
    }
    push_vlq(body, 0);
    body.push_back(static_cast<uint8_t>(0xc0 | channel));
    body.push_back(static_cast<uint8_t>(tr.gm_program));
    int64_t last_tick = 0;
    for (const auto& e : events) {
      push_vlq(body, static_cast<uint32_t>(e.tick - last_tick));
      last_tick = e.tick;
      body.push_back(static_cast<uint8_t>((e.is_on ? 0x90 : 0x80) | channel));
      body.push_back(static_cast<uint8_t>(e.pitch));
      body.push_back(e.is_on ? 80 : 0);
    }
    push_vlq(body, 0);
    body.insert(body.end(), {0xff, 0x2f, 0x00});
    push_chunk(out, "MTrk", body);
  }
  return out;
}

void write_midi(const Piece& piece, const std::string& path) {
  std::vector<uint8_t> bytes = write_midi_bytes(piece);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open for writing: " + path);
  size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (written != bytes.size()) throw IoError("short write: " + path);
}

}  // namespace fullband
