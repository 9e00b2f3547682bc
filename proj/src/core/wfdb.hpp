#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ekgnet::wfdb {

struct SignalSpec {
  std::string file_name;
  int storage_format = 212;
  double gain = 200.0;  // ADC units per mV; 0 in the file means the default 200
  int baseline = 0;
  int adc_resolution = 12;
  int adc_zero = 0;
  int initial_value = 0;
  std::int16_t checksum = 0;
  int block_size = 0;
  std::string description;
};

struct RecordHeader {
  std::string record_name;
  int num_signals = 0;
  double sampling_rate = 250.0;
  std::int64_t num_samples = 0;  // 0 = unknown, inferred from the signal file
  std::vector<SignalSpec> signals;
};

struct Annotation {
  std::int64_t sample_index = 0;
  char symbol = 0;
  int channel = 0;
  int subtype = 0;
  int num = 0;
  std::string aux;
};

struct Record {
  RecordHeader header;
  std::vector<std::vector<double>> signals_mv;  // [channel][sample]
  std::vector<Annotation> annotations;
  std::vector<std::string> warnings;
};

enum class AamiClass : int { N = 0, S = 1, V = 2, Q = 3 };

const char* aami_name(AamiClass c);

RecordHeader parse_header(const std::string& text);

// Format 212: 3 bytes hold two 12-bit two's-complement samples,
// channel-interleaved. Returns [channel][sample] raw ADC values.
std::vector<std::vector<int>> decode_format212(std::span<const std::uint8_t> bytes, int num_signals,
                                               std::int64_t num_samples);

// MIT annotation format: little-endian 16-bit words, code in the top 6 bits,
// interval in the low 10; pseudo-codes SKIP/NUM/SUB/CHN/AUX; 0x0000 terminates.
// Only beat-type codes emit annotations; every word still advances time.
std::vector<Annotation> parse_annotations(std::span<const std::uint8_t> bytes);

bool is_beat_symbol(char symbol);

// Returns the AAMI class for a beat symbol, or nullopt for non-beat codes.
// Beat symbols outside the four mapped groups fall into Q (unclassifiable).
std::optional<AamiClass> map_to_aami(char symbol);

char symbol_for_code(int code);
int code_for_symbol(char symbol);

std::int16_t adc_checksum(std::span<const int> samples);

Record load_record(const std::string& path_prefix, bool strict = false);

}  // namespace ekgnet::wfdb
