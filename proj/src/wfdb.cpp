#include "esn/wfdb.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace esn::wfdb {

namespace {

// MIT annotation type codes (see WFDB ecgcodes).
enum AnnType : int {
    kNormal = 1,
    kLbbb = 2,
    kRbbb = 3,
    kAberr = 4,
    kPvc = 5,
    kFusion = 6,
    kNpc = 7,
    kApc = 8,
    kSvpb = 9,
    kVesc = 10,
    kNesc = 11,
    kPace = 12,
    kUnknownBeat = 13,
    kBbb = 25,
    kLearn = 30,
    kFlwav = 31,
    kAesc = 34,
    kSvesc = 35,
    kPfus = 38,
    kRonT = 41,
    kSkip = 59,
    kNum = 60,
    kSub = 61,
    kChn = 62,
    kAux = 63,
};

constexpr int kMaxAnnType = 49;  // largest assigned ordinary annotation code

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

// Numeric prefix of a token (header fields carry suffixes like "360/360",
// "212x2" or "200(1024)/mV").
double num_prefix(const std::string& tok, const char* field, int line_no) {
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str()) {
        throw ParseError(std::string("header line ") + std::to_string(line_no) +
                         ": cannot parse " + field + " from '" + tok + "'");
    }
    return v;
}

int int_prefix(const std::string& tok, const char* field, int line_no) {
    return static_cast<int>(num_prefix(tok, field, line_no));
}

int sign_extend12(int v) {
    return (v & 0x800) ? v - 0x1000 : v;
}

std::vector<uint8_t> read_binary_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw IoError("cannot read file: " + path);
    return bytes;
}

std::string read_text_file(const std::string& path) {
    auto bytes = read_binary_file(path);
    return std::string(bytes.begin(), bytes.end());
}

void append_double(std::string& out, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    out += buf;
}

}  // namespace

int AnnotatedRecord::lead2_index() const {
    for (size_t i = 0; i < signals.size(); ++i) {
        if (signals[i].channel_name == "MLII" || signals[i].channel_name == "II")
            return static_cast<int>(i);
    }
    return -1;
}

int AnnotatedRecord::analysis_channel() const {
    const int lead2 = lead2_index();
    if (lead2 >= 0) return lead2;
    return signals.empty() ? -1 : 0;
}

double AnnotatedRecord::duration_s() const {
    if (signals.empty() || header.sampling_frequency <= 0) return 0.0;
    return static_cast<double>(signals[0].samples.size()) / header.sampling_frequency;
}

RecordHeader parse_header(const std::string& text, Log* log) {
    RecordHeader hdr;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    bool have_record_line = false;
    int signals_parsed = 0;

    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto tok = split_ws(line);

        if (!have_record_line) {
            if (tok.size() < 2) {
                throw ParseError("header line " + std::to_string(line_no) +
                                 ": record line needs at least 'name num_signals'");
            }
            // Record name may carry a "/segments" suffix.
            hdr.record_name = tok[0].substr(0, tok[0].find('/'));
            hdr.num_signals = int_prefix(tok[1], "num_signals", line_no);
            if (hdr.num_signals < 1) {
                throw ParseError("header line " + std::to_string(line_no) +
                                 ": num_signals must be >= 1");
            }
            if (tok.size() >= 3) {
                hdr.sampling_frequency = num_prefix(tok[2], "sampling_frequency", line_no);
            } else {
                hdr.sampling_frequency = 250.0;
                warn_to(log, "header: sampling frequency missing, defaulting to 250 Hz");
            }
            if (hdr.sampling_frequency <= 0) {
                throw ParseError("header line " + std::to_string(line_no) +
                                 ": sampling frequency must be positive");
            }
            if (tok.size() >= 4) {
                hdr.num_samples = static_cast<int64_t>(num_prefix(tok[3], "num_samples", line_no));
            }
            have_record_line = true;
            continue;
        }

        if (signals_parsed >= hdr.num_signals) break;  // trailing info lines ignored

        if (tok.size() < 2) {
            throw ParseError("header line " + std::to_string(line_no) +
                             ": signal line needs at least 'file format'");
        }
        SignalInfo sig;
        sig.file_name = tok[0];
        sig.storage_format = int_prefix(tok[1], "storage format", line_no);
        if (sig.storage_format != 212) {
            throw UnsupportedFormatError("header line " + std::to_string(line_no) +
                                         ": storage format " +
                                         std::to_string(sig.storage_format) +
                                         " is not supported (only format 212)");
        }
        if (tok.size() >= 3) {
            // gain token: gain[(baseline)][/units]
            sig.adc_gain = num_prefix(tok[2], "adc_gain", line_no);
            auto lp = tok[2].find('(');
            if (lp != std::string::npos) {
                sig.baseline = num_prefix(tok[2].substr(lp + 1), "baseline", line_no);
            }
        }
        if (sig.adc_gain == 0.0) sig.adc_gain = 200.0;  // WFDB: 0 means unspecified
        if (sig.adc_gain < 0.0) {
            throw ParseError("header line " + std::to_string(line_no) + ": adc_gain must be > 0");
        }
        if (tok.size() >= 4) sig.adc_resolution_bits = int_prefix(tok[3], "adc_resolution", line_no);
        if (tok.size() >= 5) sig.adc_zero = num_prefix(tok[4], "adc_zero", line_no);
        if (tok.size() >= 6) sig.initial_value = int_prefix(tok[5], "initial_value", line_no);
        if (tok.size() >= 7) sig.checksum = static_cast<int16_t>(int_prefix(tok[6], "checksum", line_no));
        if (tok.size() >= 9) {
            // block_size is tok[7]; the rest of the line is the description.
            std::string desc;
            for (size_t i = 8; i < tok.size(); ++i) {
                if (!desc.empty()) desc += ' ';
                desc += tok[i];
            }
            sig.description = desc;
        }
        hdr.signals.push_back(std::move(sig));
        ++signals_parsed;
    }

    if (!have_record_line) throw ParseError("header: empty input");
    if (signals_parsed < hdr.num_signals) {
        throw ParseError("header: expected " + std::to_string(hdr.num_signals) +
                         " signal lines, found " + std::to_string(signals_parsed));
    }
    return hdr;
}

std::vector<std::vector<int>> decode_format212(std::span<const uint8_t> bytes,
                                               int num_signals, Log* log) {
    if (num_signals < 1) throw ParamError("decode_format212: num_signals must be >= 1");
    const size_t triplets = bytes.size() / 3;
    if (bytes.size() % 3 != 0) {
        warn_to(log, "format 212: dropping trailing partial triplet (" +
                         std::to_string(bytes.size() % 3) + " byte(s))");
    }
    std::vector<std::vector<int>> out(static_cast<size_t>(num_signals));
    const size_t total = triplets * 2;
    for (auto& ch : out) ch.reserve(total / num_signals + 1);

    size_t k = 0;  // running flat sample index, distributed round-robin
    for (size_t t = 0; t < triplets; ++t) {
        const uint8_t b0 = bytes[3 * t];
        const uint8_t b1 = bytes[3 * t + 1];
        const uint8_t b2 = bytes[3 * t + 2];
        const int a = sign_extend12(((b1 & 0x0F) << 8) | b0);
        const int b = sign_extend12(((b1 & 0xF0) << 4) | b2);
        out[k++ % num_signals].push_back(a);
        out[k++ % num_signals].push_back(b);
    }
    return out;
}

bool is_beat_type(int c) {
    switch (c) {
        case kNormal: case kLbbb: case kRbbb: case kAberr: case kPvc:
        case kFusion: case kNpc: case kApc: case kSvpb: case kVesc:
        case kNesc: case kPace: case kUnknownBeat: case kBbb: case kLearn:
        case kFlwav: case kAesc: case kSvesc: case kPfus: case kRonT:
            return true;
        default:
            return false;
    }
}

BeatCode beat_code_from_type(int c) {
    switch (c) {
        case kNormal: return BeatCode::Normal;
        case kLbbb: return BeatCode::Lbbb;
        case kRbbb: return BeatCode::Rbbb;
        case kApc: return BeatCode::Apb;
        case kPvc: return BeatCode::Pvc;
        case kFusion: return BeatCode::FusionVN;
        case kFlwav: return BeatCode::VFlutter;
        case kVesc: return BeatCode::VEscape;
        case kPace: return BeatCode::Paced;
        case kPfus: return BeatCode::FusionPN;
        default: return BeatCode::Other;
    }
}

std::vector<BeatAnnotation> parse_annotations(std::span<const uint8_t> bytes, Log* log) {
    std::vector<BeatAnnotation> out;
    size_t pos = 0;
    int64_t time = 0;
    int64_t pending_skip = 0;
    int chan = 0;

    auto read_word = [&](const char* what) -> uint16_t {
        if (pos + 2 > bytes.size()) {
            throw ParseError(std::string("annotation stream truncated at byte offset ") +
                             std::to_string(pos) + " while reading " + what);
        }
        const uint16_t w = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return w;
    };

    while (pos < bytes.size()) {
        const size_t word_off = pos;
        const uint16_t word = read_word("annotation word");
        const int type = (word >> 10) & 0x3F;
        const int data = word & 0x3FF;

        if (type == 0) {
            if (data == 0) break;  // end of file sentinel
            // A type-0 word with a nonzero increment is not assigned; skip it
            // but keep the cursor consistent.
            warn_to(log, "annotations: unassigned type 0 word with increment " +
                             std::to_string(data) + " at offset " + std::to_string(word_off));
            time += pending_skip + data;
            pending_skip = 0;
            continue;
        }

        switch (type) {
            case kSkip: {
                // Four-byte interval, high 16 bits first (PDP-11 long layout).
                const uint16_t hi = read_word("SKIP interval");
                const uint16_t lo = read_word("SKIP interval");
                pending_skip += static_cast<int32_t>((static_cast<uint32_t>(hi) << 16) | lo);
                break;
            }
            case kNum:
            case kSub:
                break;  // field modifiers we do not carry
            case kChn:
                chan = data;
                if (!out.empty()) out.back().channel = chan;
                break;
            case kAux: {
                const size_t len = static_cast<size_t>(data) + (data & 1);  // null pad to even
                if (pos + len > bytes.size()) {
                    throw ParseError("annotation stream truncated at byte offset " +
                                     std::to_string(pos) + " inside AUX data");
                }
                pos += len;
                break;
            }
            default: {
                time += pending_skip + data;
                pending_skip = 0;
                if (type > kMaxAnnType) {
                    warn_to(log, "annotations: unknown type code " + std::to_string(type) +
                                     " at offset " + std::to_string(word_off) + ", skipped");
                    break;
                }
                if (!is_beat_type(type)) break;  // rhythm/quality/etc.
                if (!out.empty() && time <= out.back().sample_index) {
                    throw ParseError("annotations: beat sample indices not strictly increasing "
                                     "at offset " + std::to_string(word_off));
                }
                out.push_back(BeatAnnotation{time, beat_code_from_type(type), chan});
                break;
            }
        }
    }
    return out;
}

AnnotatedRecord load_record(const std::string& path_stem, Log* log) {
    AnnotatedRecord rec;
    rec.header = parse_header(read_text_file(path_stem + ".hea"), log);
    const auto& hdr = rec.header;

    const auto dat = read_binary_file(path_stem + ".dat");
    auto raw = decode_format212(dat, hdr.num_signals, log);

    for (int i = 0; i < hdr.num_signals; ++i) {
        auto& channel = raw[static_cast<size_t>(i)];
        const auto& sig = hdr.signals[static_cast<size_t>(i)];
        if (hdr.num_samples > 0) {
            if (static_cast<int64_t>(channel.size()) < hdr.num_samples) {
                throw IntegrityError("record " + hdr.record_name + " signal " +
                                     std::to_string(i) + ": decoded " +
                                     std::to_string(channel.size()) + " samples, header says " +
                                     std::to_string(hdr.num_samples));
            }
            if (static_cast<int64_t>(channel.size()) > hdr.num_samples) {
                warn_to(log, "record " + hdr.record_name + ": truncating decoded signal " +
                                 std::to_string(i) + " to header length");
                channel.resize(static_cast<size_t>(hdr.num_samples));
            }
        }
        if (sig.checksum.has_value()) {
            int16_t sum = 0;
            for (int v : channel) sum = static_cast<int16_t>(sum + v);
            if (sum != *sig.checksum) {
                throw IntegrityError("record " + hdr.record_name + " signal " +
                                     std::to_string(i) + ": checksum mismatch (computed " +
                                     std::to_string(sum) + ", header " +
                                     std::to_string(*sig.checksum) + ")");
            }
        }
        if (sig.initial_value.has_value() && !channel.empty() && channel[0] != *sig.initial_value) {
            warn_to(log, "record " + hdr.record_name + ": initial value mismatch on signal " +
                             std::to_string(i));
        }

        SignalBuffer buf;
        buf.channel_name = sig.description.empty() ? ("ch" + std::to_string(i)) : sig.description;
        buf.dt = 1.0 / hdr.sampling_frequency;
        const double base = sig.baseline.value_or(sig.adc_zero);
        buf.samples.reserve(channel.size());
        for (int v : channel) buf.samples.push_back((v - base) / sig.adc_gain);
        rec.signals.push_back(std::move(buf));
    }

    rec.annotations = parse_annotations(read_binary_file(path_stem + ".atr"), log);
    const int64_t n = rec.signals.empty() ? 0 : static_cast<int64_t>(rec.signals[0].samples.size());
    for (const auto& a : rec.annotations) {
        if (a.sample_index < 0 || a.sample_index >= n) {
            throw IntegrityError("record " + hdr.record_name + ": annotation at sample " +
                                 std::to_string(a.sample_index) + " outside signal of length " +
                                 std::to_string(n));
        }
    }
    return rec;
}

std::string export_signal_csv(const AnnotatedRecord& record, const std::string& channel) {
    const SignalBuffer* buf = nullptr;
    for (const auto& s : record.signals) {
        if (s.channel_name == channel) {
            buf = &s;
            break;
        }
    }
    if (!buf) {
        std::string available;
        for (const auto& s : record.signals) {
            if (!available.empty()) available += ", ";
            available += s.channel_name;
        }
        throw Error("unknown channel '" + channel + "' (available: " + available + ")");
    }
    std::string out = "time_s,amplitude_mV\n";
    for (size_t i = 0; i < buf->samples.size(); ++i) {
        append_double(out, static_cast<double>(i) * buf->dt);
        out += ',';
        append_double(out, buf->samples[i]);
        out += '\n';
    }
    return out;
}

std::string export_annotations_csv(const AnnotatedRecord& record) {
    std::string out = "sample_index,beat_code\n";
    for (const auto& a : record.annotations) {
        out += std::to_string(a.sample_index);
        out += ',';
        out += beat_symbol(a.beat_code);
        out += '\n';
    }
    return out;
}

}  // namespace esn::wfdb
