#include "core/wfdb.hpp"

#include <algorithm>
#include <filesystem>

#include "core/error.hpp"
#include "core/textio.hpp"

namespace ekgnet::wfdb {

namespace {

// MIT annotation codes, indexed by code value (0..49).
constexpr char kSymbolForCode[50] = {
    0,   'N', 'L', 'R', 'a', 'V', 'F', 'J', 'A', 'S',   // 0-9
    'E', 'j', '/', 'Q', '~', 0,   '|', 0,   's', 'T',   // 10-19
    '*', 'D', '"', '=', 'p', 'B', '^', 't', '+', 'u',   // 20-29
    '?', '!', '[', ']', 'e', 'n', '@', 'x', 'f', '(',   // 30-39
    ')', 'r', 0,   0,   0,   0,   0,   0,   0,   0};    // 40-49

// QRS (beat) codes per the standard annotation table.
constexpr int kBeatCodes[] = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 25, 30, 34, 35, 38, 41};

constexpr int kSkip = 59, kNum = 60, kSub = 61, kChn = 62, kAux = 63;

bool is_beat_code(int code) {
  for (int b : kBeatCodes)
    if (b == code) return true;
  return false;
}

}  // namespace

const char* aami_name(AamiClass c) {
  switch (c) {
    case AamiClass::N: return "N";
    case AamiClass::S: return "S";
    case AamiClass::V: return "V";
    case AamiClass::Q: return "Q";
  }
  return "?";
}

char symbol_for_code(int code) {
  if (code < 0 || code >= 50) return 0;
  return kSymbolForCode[code];
}

int code_for_symbol(char symbol) {
  for (int c = 1; c < 50; ++c)
    if (kSymbolForCode[c] == symbol) return c;
  return -1;
}

bool is_beat_symbol(char symbol) {
  const int code = code_for_symbol(symbol);
  return code > 0 && is_beat_code(code);
}

std::optional<AamiClass> map_to_aami(char symbol) {
  switch (symbol) {
    case 'N': case 'L': case 'R': case 'e': case 'j':
      return AamiClass::N;
    case 'A': case 'a': case 'J': case 'S':
      return AamiClass::S;
    case 'V': case 'E':
      return AamiClass::V;
    case '/': case 'f': case 'Q':
      return AamiClass::Q;
    default:
      break;
  }
  if (is_beat_symbol(symbol)) return AamiClass::Q;  // unclassifiable beat
  return std::nullopt;                              // non-beat annotation
}

RecordHeader parse_header(const std::string& text) {
  std::vector<std::string_view> lines;
  for (std::string_view rest = text; !rest.empty();) {
    const std::size_t nl = rest.find('\n');
    std::string_view line = nl == std::string_view::npos ? rest : rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    // comment and blank lines are ignored
    std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string_view::npos || line[first] == '#') continue;
    lines.push_back(line);
  }
  require(!lines.empty(), Errc::parse, "header: no record line");

  RecordHeader hdr;
  {
    const auto tok = split_tokens(lines[0]);
    require(tok.size() >= 2, Errc::parse, "header: malformed record line");
    hdr.record_name = std::string(tok[0]);
    require(hdr.record_name.find('/') == std::string::npos, Errc::format,
            "header: multi-segment records are not supported");
    hdr.num_signals = static_cast<int>(parse_int(tok[1], "num_signals"));
    require(hdr.num_signals >= 1, Errc::parse, "header: num_signals must be >= 1");
    if (tok.size() >= 3) {
      // the rate field may carry a counter spec: FS/COUNTER(BASE)
      std::string_view fs = tok[2].substr(0, tok[2].find('/'));
      hdr.sampling_rate = parse_double(fs, "sampling_rate");
      require(hdr.sampling_rate > 0, Errc::parse, "header: sampling_rate must be > 0");
    }
    if (tok.size() >= 4) {
      hdr.num_samples = parse_int(tok[3], "num_samples");
      require(hdr.num_samples >= 0, Errc::parse, "header: negative num_samples");
    }
  }
  require(static_cast<int>(lines.size()) - 1 >= hdr.num_signals, Errc::parse,
          "header: fewer signal lines than declared signals");

  for (int s = 0; s < hdr.num_signals; ++s) {
    const auto tok = split_tokens(lines[static_cast<std::size_t>(s) + 1]);
    require(tok.size() >= 2, Errc::parse, "header: malformed signal line");
    SignalSpec sig;
    sig.file_name = std::string(tok[0]);

    // FORMAT[xSAMPS][:SKEW][+OFFSET]
    std::string_view fmt = tok[1];
    const std::size_t fmt_end = fmt.find_first_of("x:+");
    sig.storage_format = static_cast<int>(parse_int(fmt.substr(0, fmt_end), "storage_format"));
    if (fmt_end != std::string_view::npos) {
      std::string_view suffix = fmt.substr(fmt_end);
      require(suffix == "x1", Errc::format, "header: unsupported format modifier '" + std::string(fmt) + "'");
    }
    require(sig.storage_format == 212, Errc::format,
            "header: unsupported storage format " + std::to_string(sig.storage_format) + " (only 212)");

    std::optional<int> baseline;
    if (tok.size() >= 3) {
      // GAIN[(BASELINE)][/UNITS]
      std::string_view g = tok[2];
      const std::size_t slash = g.find('/');
      if (slash != std::string_view::npos) g = g.substr(0, slash);
      const std::size_t paren = g.find('(');
      if (paren != std::string_view::npos) {
        const std::size_t close = g.find(')', paren);
        require(close != std::string_view::npos, Errc::parse, "header: unterminated baseline");
        baseline = static_cast<int>(parse_int(g.substr(paren + 1, close - paren - 1), "baseline"));
        g = g.substr(0, paren);
      }
      sig.gain = parse_double(g, "gain");
      if (sig.gain == 0.0) sig.gain = 200.0;  // WFDB default
      require(sig.gain > 0, Errc::parse, "header: negative gain");
    }
    if (tok.size() >= 4) sig.adc_resolution = static_cast<int>(parse_int(tok[3], "adc_resolution"));
    if (tok.size() >= 5) sig.adc_zero = static_cast<int>(parse_int(tok[4], "adc_zero"));
    sig.initial_value = sig.adc_zero;
    if (tok.size() >= 6) sig.initial_value = static_cast<int>(parse_int(tok[5], "initial_value"));
    if (tok.size() >= 7) sig.checksum = static_cast<std::int16_t>(parse_int(tok[6], "checksum"));
    if (tok.size() >= 8) sig.block_size = static_cast<int>(parse_int(tok[7], "block_size"));
    if (tok.size() >= 9) {
      // description is the rest of the line, spaces included
      const char* start = tok[8].data();
      const std::string_view line = lines[static_cast<std::size_t>(s) + 1];
      sig.description = std::string(line.substr(static_cast<std::size_t>(start - line.data())));
    }
    sig.baseline = baseline.value_or(sig.adc_zero);
    hdr.signals.push_back(std::move(sig));
  }
  return hdr;
}

std::vector<std::vector<int>> decode_format212(std::span<const std::uint8_t> bytes, int num_signals,
                                               std::int64_t num_samples) {
  require(num_signals >= 1, Errc::invalid_argument, "decode: num_signals must be >= 1");
  require(num_samples >= 0, Errc::invalid_argument, "decode: negative num_samples");
  const std::int64_t total = static_cast<std::int64_t>(num_signals) * num_samples;
  const std::int64_t pairs = total / 2;
  const std::int64_t min_bytes = pairs * 3 + (total % 2 ? 2 : 0);
  const std::int64_t max_bytes = pairs * 3 + (total % 2 ? 3 : 0);
  require(static_cast<std::int64_t>(bytes.size()) >= min_bytes, Errc::parse,
          "decode: signal file truncated (" + std::to_string(bytes.size()) + " bytes, need " +
              std::to_string(min_bytes) + ")");
  require(static_cast<std::int64_t>(bytes.size()) <= max_bytes, Errc::parse,
          "decode: trailing bytes beyond padding");

  std::vector<std::vector<int>> out(static_cast<std::size_t>(num_signals));
  for (auto& ch : out) ch.resize(static_cast<std::size_t>(num_samples));

  auto sign_extend_12 = [](int v) { return v >= 2048 ? v - 4096 : v; };

  std::int64_t idx = 0;  // flat interleaved sample index
  auto store = [&](int value) {
    out[static_cast<std::size_t>(idx % num_signals)][static_cast<std::size_t>(idx / num_signals)] = value;
    ++idx;
  };
  for (std::int64_t g = 0; idx < total; ++g) {
    const std::uint8_t b0 = bytes[static_cast<std::size_t>(3 * g)];
    const std::uint8_t b1 = bytes[static_cast<std::size_t>(3 * g + 1)];
    store(sign_extend_12(b0 | ((b1 & 0x0F) << 8)));
    if (idx >= total) break;
    const std::uint8_t b2 = bytes[static_cast<std::size_t>(3 * g + 2)];
    store(sign_extend_12(b2 | ((b1 & 0xF0) << 4)));
  }
  return out;
}

std::vector<Annotation> parse_annotations(std::span<const std::uint8_t> bytes) {
  std::vector<Annotation> out;
  std::int64_t time = 0;
  int cur_sub = 0, cur_chn = 0, cur_num = 0;
  std::size_t i = 0;
  bool terminated = false;
  bool seen_annotation_word = false;
  bool last_was_beat = false;

  auto read_word = [&]() -> std::uint16_t {
    require(i + 2 <= bytes.size(), Errc::parse, "annotations: truncated word");
    const std::uint16_t w = static_cast<std::uint16_t>(bytes[i] | (bytes[i + 1] << 8));
    i += 2;
    return w;
  };

  while (i < bytes.size()) {
    const std::uint16_t word = read_word();
    const int code = word >> 10;
    const int data = word & 0x3FF;
    if (code == 0 && data == 0) {
      terminated = true;
      break;
    }
    switch (code) {
      case kSkip: {
        // 32-bit interval, high word first, each word little-endian
        const std::uint16_t hi = read_word();
        const std::uint16_t lo = read_word();
        time += static_cast<std::int32_t>((static_cast<std::uint32_t>(hi) << 16) | lo);
        break;
      }
      case kNum:
        cur_num = data;
        break;
      case kSub:
        cur_sub = data;
        break;
      case kChn:
        cur_chn = data;
        break;
      case kAux: {
        require(i + static_cast<std::size_t>(data) <= bytes.size(), Errc::parse, "annotations: truncated aux field");
        require(seen_annotation_word, Errc::parse, "annotations: aux field before any annotation");
        if (last_was_beat && !out.empty()) {
          std::string aux(reinterpret_cast<const char*>(bytes.data() + i), static_cast<std::size_t>(data));
          while (!aux.empty() && aux.back() == '\0') aux.pop_back();
          out.back().aux = std::move(aux);
        }
        i += static_cast<std::size_t>(data) + (data % 2);  // padded to even
        break;
      }
      default: {
        time += data;
        require(time >= 0, Errc::parse, "annotations: negative time");
        seen_annotation_word = true;
        last_was_beat = is_beat_code(code);
        if (last_was_beat) {
          Annotation ann;
          ann.sample_index = time;
          ann.symbol = symbol_for_code(code);
          ann.channel = cur_chn;
          ann.subtype = cur_sub;
          ann.num = cur_num;
          require(out.empty() || ann.sample_index > out.back().sample_index, Errc::parse,
                  "annotations: beat sample indices not strictly increasing");
          out.push_back(std::move(ann));
        }
        break;
      }
    }
  }
  require(terminated, Errc::parse, "annotations: missing terminator word");
  return out;
}

std::int16_t adc_checksum(std::span<const int> samples) {
  std::int64_t sum = 0;
  for (int v : samples) sum += v;
  return static_cast<std::int16_t>(static_cast<std::uint16_t>(sum & 0xFFFF));
}

Record load_record(const std::string& path_prefix, bool strict) {
  Record rec;
  rec.header = parse_header(read_text_file(path_prefix + ".hea"));
  const RecordHeader& hdr = rec.header;

  // All signals must live in a single interleaved .dat for format 212.
  for (const auto& sig : hdr.signals)
    require(sig.file_name == hdr.signals[0].file_name, Errc::format,
            "load: signals split across multiple files are not supported");

  const std::string dat_path =
      (std::filesystem::path(path_prefix).parent_path() / hdr.signals[0].file_name).string();
  const auto bytes = read_binary_file(dat_path);

  std::int64_t num_samples = hdr.num_samples;
  if (num_samples == 0) {
    // unknown length: infer whole frames from the file size
    const std::int64_t total = (static_cast<std::int64_t>(bytes.size()) * 2) / 3;
    num_samples = total / hdr.num_signals;
    rec.header.num_samples = num_samples;
  }

  const auto adc = decode_format212(bytes, hdr.num_signals, num_samples);

  rec.signals_mv.resize(adc.size());
  for (std::size_t ch = 0; ch < adc.size(); ++ch) {
    const SignalSpec& sig = hdr.signals[ch];
    const std::int16_t sum = adc_checksum(adc[ch]);
    if (sum != sig.checksum) {
      const std::string msg = "checksum mismatch on signal " + std::to_string(ch) + " (" +
                              std::to_string(sum) + " != " + std::to_string(sig.checksum) + ")";
      require(!strict, Errc::parse, "load: " + msg);
      rec.warnings.push_back(msg);
    }
    rec.signals_mv[ch].resize(adc[ch].size());
    for (std::size_t t = 0; t < adc[ch].size(); ++t)
      rec.signals_mv[ch][t] = (adc[ch][t] - sig.baseline) / sig.gain;
  }

  const std::string atr_path = path_prefix + ".atr";
  if (std::filesystem::exists(atr_path)) {
    rec.annotations = parse_annotations(read_binary_file(atr_path));
    // drop annotations past the end of the signal
    const auto it = std::find_if(rec.annotations.begin(), rec.annotations.end(),
                                 [&](const Annotation& a) { return a.sample_index >= num_samples; });
    if (it != rec.annotations.end()) {
      const std::string msg =
          "dropped " + std::to_string(rec.annotations.end() - it) + " annotation(s) beyond the signal end";
      require(!strict, Errc::parse, "load: " + msg);
      rec.warnings.push_back(msg);
      rec.annotations.erase(it, rec.annotations.end());
    }
  } else {
    const std::string msg = "no annotation file: " + atr_path;
    require(!strict, Errc::io, "load: " + msg);
    rec.warnings.push_back(msg);
  }
  return rec;
}

}  // namespace ekgnet::wfdb
