#pragma once

#include <complex>
#include <map>
#include <vector>

#include "esn/types.hpp"
#include "esn/wfdb.hpp"

namespace esn::preprocess {

struct FilterSpec {
    int order = 3;
    double low_cutoff_hz = 0.4;
    double high_cutoff_hz = 45.0;
    double sampling_frequency_hz = 360.0;
};

// One second-order section, denominator normalized to (1, a1, a2).
struct Biquad {
    double b0 = 0, b1 = 0, b2 = 0;
    double a1 = 0, a2 = 0;

    // Both poles strictly inside the unit circle.
    bool stable() const;
};

struct IirCascade {
    std::vector<Biquad> sections;

    // Complex frequency response at digital frequency f (Hz).
    std::complex<double> response(double freq_hz, double fs_hz) const;

    // Largest pole magnitude across sections.
    double max_pole_radius() const;
};

// Designs the band-pass filter: analog Butterworth low-pass prototype,
// low-pass-to-band-pass transform, bilinear discretization with frequency
// pre-warping, factored into second-order sections sorted by ascending pole
// magnitude. Gain is normalized to unity at the pre-warped geometric band
// center, which puts the band edges at exactly -3 dB.
IirCascade design_butterworth_bandpass(const FilterSpec& spec);

// Causal forward-only filtering (direct form II transposed, zero initial
// state). Output length equals input length.
std::vector<double> apply_filter(const IirCascade& cascade, const std::vector<double>& x);
wfdb::SignalBuffer apply_filter(const IirCascade& cascade, const wfdb::SignalBuffer& signal);

// Crops all channels to [start_s, end_s) and rebases annotation indices.
// Annotations closer than pre_margin_s to the slot start or post_margin_s to
// the slot end are dropped (their beat window would cross the boundary).
wfdb::AnnotatedRecord select_time_slot(const wfdb::AnnotatedRecord& record, double start_s,
                                       double end_s, double pre_margin_s = 0.0,
                                       double post_margin_s = 0.0);

struct BeatWindow {
    double pre_s = 0.25;   // window extent before the fiducial
    double post_s = 0.40;  // window extent after the fiducial
};

// Per-class rectangular window lengths; must cover every observed class.
using WindowPolicy = std::map<BeatCode, BeatWindow>;

// Built-in defaults: narrow windows for N/A/paced, wider for ventricular and
// fusion classes.
WindowPolicy default_window_policy();

struct BeatSegment {
    int64_t start_sample = 0;
    int64_t end_sample = 0;  // exclusive
    int64_t fiducial_sample = 0;
    BeatCode class_label = BeatCode::Other;
};

// One segment per annotation: [fiducial - pre, fiducial + post) clipped to
// the record, with overlaps between consecutive beats resolved at the
// midpoint between their fiducials.
std::vector<BeatSegment> segment_beats(const wfdb::AnnotatedRecord& record,
                                       const WindowPolicy& policy);
std::vector<BeatSegment> segment_beats(const std::vector<wfdb::BeatAnnotation>& annotations,
                                       int64_t num_samples, double fs_hz,
                                       const WindowPolicy& policy);

struct TargetMatrix {
    // values(j, t) = 1 iff sample t lies in a beat of class class_order[j].
    // Row-major storage, num_classes x num_samples, entries in {0,1}.
    std::vector<BeatCode> class_order;
    int64_t num_samples = 0;
    std::vector<uint8_t> values;

    uint8_t at(size_t cls, int64_t t) const {
        return values[cls * static_cast<size_t>(num_samples) + static_cast<size_t>(t)];
    }
};

TargetMatrix build_targets(const std::vector<BeatSegment>& segments,
                           const std::vector<BeatCode>& class_order, int64_t num_samples);

std::string export_segments_csv(const std::vector<BeatSegment>& segments);

}  // namespace esn::preprocess
