#include "fullband/score.hpp"

namespace fullband {

// Slakh-style grouping of the 128 GM programs into 34 playable classes.
// Programs 88..127 (pads, effects, ethnic, percussive, SFX) all fold into
// the final "Synth" class.
namespace {

struct ClassInfo {
  const char* name;
  int representative;  // GM program written on MIDI output
};

const ClassInfo kClasses[kNumInstrumentClasses] = {
    {"Acoustic Piano", 0},      {"Electric Piano", 4},
    {"Chromatic Percussion", 8}, {"Organ", 16},
    {"Acoustic Guitar", 24},    {"Clean Electric Guitar", 26},
    {"Distorted Electric Guitar", 30}, {"Acoustic Bass", 32},
    {"Electric Bass", 33},      {"Violin", 40},
    {"Viola", 41},              {"Cello", 42},
    {"Contrabass", 43},         {"Harp", 46},
    {"Timpani", 47},            {"String Ensemble", 48},
    {"Synth Strings", 50},      {"Voice", 52},
    {"Orchestral Hit", 55},     {"Trumpet", 56},
    {"Trombone", 57},           {"Tuba", 58},
    {"French Horn", 60},        {"Brass Section", 61},
    {"Synth Brass", 62},        {"Soprano/Alto Sax", 65},
    {"Tenor Sax", 66},          {"Baritone Sax", 67},
    {"Oboe", 68},               {"English Horn", 69},
    {"Bassoon", 70},            {"Clarinet", 71},
    {"Pipe", 73},               {"Synth", 80},
};

constexpr int kProgramClass[128] = {
    // 0-7: pianos
    0, 0, 0, 0, 1, 1, 1, 1,
    // 8-15: chromatic percussion
    2, 2, 2, 2, 2, 2, 2, 2,
    // 16-23: organs
    3, 3, 3, 3, 3, 3, 3, 3,
    // 24-31: guitars
    4, 4, 5, 5, 5, 6, 6, 6,
    // 32-39: basses
    7, 8, 8, 8, 8, 8, 8, 8,
    // 40-47: strings
    9, 10, 11, 12, 15, 15, 13, 14,
    // 48-55: ensemble
    15, 15, 16, 16, 17, 17, 17, 18,
    // 56-63: brass
    19, 20, 21, 19, 22, 23, 24, 24,
    // 64-71: reeds
    25, 25, 26, 27, 28, 29, 30, 31,
    // 72-79: pipes
    32, 32, 32, 32, 32, 32, 32, 32,
    // 80-127: synth leads/pads/effects, ethnic, percussive, SFX
    33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33,
    33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33,
    33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33, 33,
};

}  // namespace

int instrument_class_for_program(int gm_program) {
  if (gm_program < 0 || gm_program > 127) return 33;
  return kProgramClass[gm_program];
}

int representative_program(int instrument_class) {
  if (instrument_class < 0 || instrument_class >= kNumInstrumentClasses)
    throw ValidationError("instrument class out of range: " +
                          std::to_string(instrument_class));
  return kClasses[instrument_class].representative;
}

const char* instrument_class_name(int instrument_class) {
  if (instrument_class < 0 || instrument_class >= kNumInstrumentClasses)
    throw ValidationError("instrument class out of range: " +
                          std::to_string(instrument_class));
  return kClasses[instrument_class].name;
}

}  // namespace fullband
