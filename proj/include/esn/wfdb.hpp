#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "esn/types.hpp"

namespace esn::wfdb {

// Per-signal descriptor from a WFDB header (.hea) signal line.
struct SignalInfo {
    std::string file_name;
    int storage_format = 212;
    double adc_gain = 200.0;  // adc units per millivolt (WFDB default)
    double adc_zero = 0.0;    // adc units
    std::optional<double> baseline;  // adc units; defaults to adc_zero
    std::optional<int> adc_resolution_bits;
    std::optional<int> initial_value;       // first raw sample, for integrity
    std::optional<int16_t> checksum;        // 16-bit signed sum of raw samples
    std::string description;                // e.g. "MLII", "V1"
};

struct RecordHeader {
    std::string record_name;
    int num_signals = 0;
    double sampling_frequency = 250.0;  // WFDB default when omitted
    int64_t num_samples = 0;            // 0 = unspecified
    std::vector<SignalInfo> signals;
};

// One decoded channel in physical units.
struct SignalBuffer {
    std::vector<double> samples;  // millivolts
    std::string channel_name;
    double dt = 0.0;  // sampling period, seconds
};

// A cardiologist beat label anchored at the QRS fiducial sample.
struct BeatAnnotation {
    int64_t sample_index = 0;
    BeatCode beat_code = BeatCode::Other;
    int channel = 0;

    bool operator==(const BeatAnnotation&) const = default;
};

struct AnnotatedRecord {
    RecordHeader header;
    std::vector<SignalBuffer> signals;
    std::vector<BeatAnnotation> annotations;

    // Index of the lead II channel ("MLII" or "II"); -1 if absent.
    int lead2_index() const;
    // Channel the classifier reads: lead II when present, otherwise the
    // upper signal (a few records carry V5 on top instead of MLII).
    int analysis_channel() const;
    double duration_s() const;
};

// Parses WFDB header text. Lines starting with '#' are comments. Unspecified
// adc_zero defaults to 0 and unspecified gain to 200 adc-units/mV; a missing
// sampling frequency defaults to 250 Hz with a warning.
RecordHeader parse_header(const std::string& text, Log* log = nullptr);

// Unpacks format-212 data: two 12-bit two's-complement samples per 3 octets,
// interleaved across signals. A trailing partial triplet is dropped with a
// warning.
std::vector<std::vector<int>> decode_format212(std::span<const uint8_t> bytes,
                                               int num_signals,
                                               Log* log = nullptr);

// Parses a MIT-format annotation stream (.atr). Only beat annotations are
// returned; rhythm/quality/aux annotations are consumed and skipped.
std::vector<BeatAnnotation> parse_annotations(std::span<const uint8_t> bytes,
                                              Log* log = nullptr);

// True when the raw annotation type code denotes a beat (QRS) label.
bool is_beat_type(int type_code);

// Maps a raw beat type code to the classifier's BeatCode.
BeatCode beat_code_from_type(int type_code);

// Loads <stem>.hea, <stem>.dat and <stem>.atr, converts raw adc samples to
// millivolts and validates sample counts and checksums.
AnnotatedRecord load_record(const std::string& path_stem, Log* log = nullptr);

// CSV export: one row per sample "time_s,amplitude_mV" for the named channel.
std::string export_signal_csv(const AnnotatedRecord& record, const std::string& channel);

// CSV export: one row per annotation "sample_index,beat_code".
std::string export_annotations_csv(const AnnotatedRecord& record);

}  // namespace esn::wfdb
