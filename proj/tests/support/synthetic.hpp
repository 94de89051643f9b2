#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "esn/wfdb.hpp"

// Test-only helpers: WFDB encoders (the library never writes these formats)
// and a deterministic ECG-like synthetic record so every pipeline test runs
// without the real database.
namespace esn::testsupport {

// Inverse of decode_format212 for equal-length channels, interleaved.
std::vector<uint8_t> encode_format212(const std::vector<std::vector<int>>& channels);

// Packs two 12-bit samples into one triplet (the primitive behind the
// round-trip property).
std::array<uint8_t, 3> encode_triplet(int sample_a, int sample_b);

// Beat-only MIT annotation stream; gaps above the 10-bit increment field are
// encoded with SKIP words. Terminated by the end-of-file word.
std::vector<uint8_t> encode_annotations(const std::vector<wfdb::BeatAnnotation>& annotations);

struct SyntheticSpec {
    double duration_s = 240.0;
    double fs = 360.0;
    uint64_t seed = 7;
    int pvc_every = 7;        // every k-th beat is abnormal
    double first_beat_s = 3.5;  // late enough that the encoder needs a SKIP
    double rr_s = 0.8;
    double rr_jitter_s = 0.05;
    // Label used for the abnormal beats (the waveform is the same wide
    // ventricular-style complex regardless).
    BeatCode minority_code = BeatCode::Pvc;
};

struct SyntheticRecord {
    std::vector<double> lead2_mv;  // clean ECG, millivolts (before adc rounding)
    std::vector<wfdb::BeatAnnotation> manifest;
    std::string stem;  // path stem the files were written under
};

// In-memory waveform + labels.
SyntheticRecord make_synthetic_ecg(const SyntheticSpec& spec);

// Writes <stem>.hea/.dat/.atr plus <stem>.manifest.csv, returning the ground
// truth used for generation.
SyntheticRecord write_synthetic_record(const std::string& stem, const SyntheticSpec& spec);

}  // namespace esn::testsupport
