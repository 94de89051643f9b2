#include "esn/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace esn::preprocess {

namespace {

using cplx = std::complex<double>;

constexpr double kPi = 3.14159265358979323846;

// Pre-warped analog frequency for the bilinear transform.
double prewarp(double f_hz, double fs_hz) {
    return 2.0 * fs_hz * std::tan(kPi * f_hz / fs_hz);
}

void validate(const FilterSpec& s) {
    if (s.order < 1) throw ParamError("filter order must be >= 1");
    if (!(s.low_cutoff_hz > 0.0 && s.low_cutoff_hz < s.high_cutoff_hz &&
          s.high_cutoff_hz < s.sampling_frequency_hz / 2.0)) {
        throw ParamError("filter cutoffs must satisfy 0 < low < high < fs/2");
    }
}

}  // namespace

bool Biquad::stable() const {
    // Roots of z^2 + a1 z + a2.
    const cplx disc = cplx(a1 * a1 - 4.0 * a2, 0.0);
    const cplx root = std::sqrt(disc);
    const cplx p1 = (-a1 + root) / 2.0;
    const cplx p2 = (-a1 - root) / 2.0;
    return std::abs(p1) < 1.0 && std::abs(p2) < 1.0;
}

std::complex<double> IirCascade::response(double freq_hz, double fs_hz) const {
    const double theta = 2.0 * kPi * freq_hz / fs_hz;
    const cplx z1 = std::polar(1.0, -theta);   // z^-1
    const cplx z2 = z1 * z1;
    cplx h(1.0, 0.0);
    for (const auto& s : sections) {
        h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
    }
    return h;
}

double IirCascade::max_pole_radius() const {
    double r = 0.0;
    for (const auto& s : sections) {
        const cplx disc = cplx(s.a1 * s.a1 - 4.0 * s.a2, 0.0);
        const cplx root = std::sqrt(disc);
        r = std::max(r, std::abs((-s.a1 + root) / 2.0));
        r = std::max(r, std::abs((-s.a1 - root) / 2.0));
    }
    return r;
}

IirCascade design_butterworth_bandpass(const FilterSpec& spec) {
    validate(spec);
    const int n = spec.order;
    const double fs = spec.sampling_frequency_hz;
    const double wl = prewarp(spec.low_cutoff_hz, fs);
    const double wh = prewarp(spec.high_cutoff_hz, fs);
    const double bw = wh - wl;
    const double w0sq = wl * wh;

    // Analog low-pass prototype poles on the unit circle, left half-plane.
    std::vector<cplx> proto;
    proto.reserve(static_cast<size_t>(n));
    for (int k = 1; k <= n; ++k) {
        const double phi = kPi * (2.0 * k + n - 1.0) / (2.0 * n);
        proto.emplace_back(std::cos(phi), std::sin(phi));
    }

    // Low-pass -> band-pass: each prototype pole p yields the two roots of
    // s^2 - p*bw*s + w0^2.
    std::vector<cplx> analog;
    analog.reserve(static_cast<size_t>(2 * n));
    for (const cplx& p : proto) {
        const cplx half = p * bw / 2.0;
        const cplx root = std::sqrt(half * half - w0sq);
        analog.push_back(half + root);
        analog.push_back(half - root);
    }

    // Bilinear transform s -> z with the matching 2*fs constant.
    std::vector<cplx> zpoles;
    zpoles.reserve(analog.size());
    for (const cplx& s : analog) {
        zpoles.push_back((2.0 * fs + s) / (2.0 * fs - s));
    }

    // Pair poles into real sections: conjugate pairs for complex poles, real
    // poles paired consecutively after sorting.
    const double im_tol = 1e-9;
    std::vector<cplx> complex_reps;
    std::vector<double> reals;
    for (const cplx& z : zpoles) {
        if (z.imag() > im_tol) {
            complex_reps.push_back(z);
        } else if (z.imag() >= -im_tol) {
            reals.push_back(z.real());
        }
        // Negative-imaginary poles are the conjugates of complex_reps entries.
    }
    if (reals.size() % 2 != 0) {
        throw NumericError("band-pass factorization produced an odd number of real poles");
    }
    std::sort(reals.begin(), reals.end());

    IirCascade cascade;
    for (const cplx& z : complex_reps) {
        Biquad s;
        s.b0 = 1.0;
        s.b1 = 0.0;
        s.b2 = -1.0;  // zeros at z = +1 and z = -1
        s.a1 = -2.0 * z.real();
        s.a2 = std::norm(z);
        cascade.sections.push_back(s);
    }
    for (size_t i = 0; i + 1 < reals.size(); i += 2) {
        Biquad s;
        s.b0 = 1.0;
        s.b1 = 0.0;
        s.b2 = -1.0;
        s.a1 = -(reals[i] + reals[i + 1]);
        s.a2 = reals[i] * reals[i + 1];
        cascade.sections.push_back(s);
    }
    if (cascade.sections.size() != static_cast<size_t>(n)) {
        throw NumericError("band-pass factorization produced an unexpected section count");
    }

    std::sort(cascade.sections.begin(), cascade.sections.end(),
              [](const Biquad& a, const Biquad& b) {
                  const auto radius = [](const Biquad& s) {
                      const cplx disc = cplx(s.a1 * s.a1 - 4.0 * s.a2, 0.0);
                      const cplx r = std::sqrt(disc);
                      return std::max(std::abs((-s.a1 + r) / 2.0), std::abs((-s.a1 - r) / 2.0));
                  };
                  return radius(a) < radius(b);
              });

    for (const auto& s : cascade.sections) {
        if (!s.stable()) throw NumericError("band-pass design produced an unstable section");
    }

    // Normalize to unity gain at the pre-warped geometric band center. The
    // Butterworth band edges then sit at exactly -3 dB.
    const double f_center = fs / kPi * std::atan(std::sqrt(w0sq) / (2.0 * fs));
    const double g = std::abs(cascade.response(f_center, fs));
    if (g <= 0.0 || !std::isfinite(g)) {
        throw NumericError("band-pass design: degenerate center-frequency gain");
    }
    const double per_section = std::pow(1.0 / g, 1.0 / n);
    for (auto& s : cascade.sections) {
        s.b0 *= per_section;
        s.b1 *= per_section;
        s.b2 *= per_section;
    }
    return cascade;
}

std::vector<double> apply_filter(const IirCascade& cascade, const std::vector<double>& x) {
    std::vector<double> y(x);
    for (const auto& s : cascade.sections) {
        double s1 = 0.0, s2 = 0.0;
        for (double& v : y) {
            const double in = v;
            const double out = s.b0 * in + s1;
            s1 = s.b1 * in - s.a1 * out + s2;
            s2 = s.b2 * in - s.a2 * out;
            v = out;
        }
    }
    return y;
}

wfdb::SignalBuffer apply_filter(const IirCascade& cascade, const wfdb::SignalBuffer& signal) {
    if (signal.samples.empty()) throw ParamError("apply_filter: empty signal");
    wfdb::SignalBuffer out = signal;
    out.samples = apply_filter(cascade, signal.samples);
    return out;
}

wfdb::AnnotatedRecord select_time_slot(const wfdb::AnnotatedRecord& record, double start_s,
                                       double end_s, double pre_margin_s, double post_margin_s) {
    const double fs = record.header.sampling_frequency;
    const double duration = record.duration_s();
    if (!(0.0 <= start_s && start_s < end_s && end_s <= duration + 1e-9)) {
        throw ParamError("select_time_slot: slot [" + std::to_string(start_s) + ", " +
                         std::to_string(end_s) + ") outside record of " +
                         std::to_string(duration) + " s");
    }
    const int64_t n_total = static_cast<int64_t>(record.signals[0].samples.size());
    const int64_t first = static_cast<int64_t>(std::llround(start_s * fs));
    const int64_t last = std::min<int64_t>(n_total, static_cast<int64_t>(std::llround(end_s * fs)));

    wfdb::AnnotatedRecord out;
    out.header = record.header;
    out.header.num_samples = last - first;
    for (const auto& sig : record.signals) {
        wfdb::SignalBuffer buf;
        buf.channel_name = sig.channel_name;
        buf.dt = sig.dt;
        buf.samples.assign(sig.samples.begin() + first, sig.samples.begin() + last);
        out.signals.push_back(std::move(buf));
    }
    const int64_t pre = static_cast<int64_t>(std::llround(pre_margin_s * fs));
    const int64_t post = static_cast<int64_t>(std::llround(post_margin_s * fs));
    for (const auto& a : record.annotations) {
        if (a.sample_index - pre < first) continue;
        if (a.sample_index + post >= last) continue;
        out.annotations.push_back(
            wfdb::BeatAnnotation{a.sample_index - first, a.beat_code, a.channel});
    }
    return out;
}

WindowPolicy default_window_policy() {
    // Narrow windows for supraventricular morphology, wider for ventricular
    // and fusion classes whose QRS and T waves spread out.
    const BeatWindow narrow{0.25, 0.40};
    const BeatWindow wide{0.30, 0.50};
    WindowPolicy policy;
    policy[BeatCode::Normal] = narrow;
    policy[BeatCode::Apb] = narrow;
    policy[BeatCode::Paced] = narrow;
    policy[BeatCode::Lbbb] = wide;
    policy[BeatCode::Rbbb] = wide;
    policy[BeatCode::Pvc] = wide;
    policy[BeatCode::FusionVN] = wide;
    policy[BeatCode::VFlutter] = wide;
    policy[BeatCode::VEscape] = wide;
    policy[BeatCode::FusionPN] = wide;
    policy[BeatCode::Other] = wide;
    return policy;
}

std::vector<BeatSegment> segment_beats(const std::vector<wfdb::BeatAnnotation>& annotations,
                                       int64_t num_samples, double fs_hz,
                                       const WindowPolicy& policy) {
    std::vector<BeatSegment> segments;
    segments.reserve(annotations.size());
    for (const auto& a : annotations) {
        const auto it = policy.find(a.beat_code);
        if (it == policy.end()) {
            throw ConfigError(std::string("segment_beats: no window policy for class '") +
                              beat_symbol(a.beat_code) + "'");
        }
        const int64_t pre = static_cast<int64_t>(std::llround(it->second.pre_s * fs_hz));
        const int64_t post = static_cast<int64_t>(std::llround(it->second.post_s * fs_hz));
        BeatSegment seg;
        seg.fiducial_sample = a.sample_index;
        seg.start_sample = std::max<int64_t>(0, a.sample_index - pre);
        seg.end_sample = std::min<int64_t>(num_samples, a.sample_index + post);
        seg.class_label = a.beat_code;
        segments.push_back(seg);
    }

    // Overlapping neighbours share a boundary at the fiducial midpoint.
    for (size_t i = 0; i + 1 < segments.size(); ++i) {
        auto& cur = segments[i];
        auto& nxt = segments[i + 1];
        if (cur.end_sample > nxt.start_sample) {
            const int64_t mid = (cur.fiducial_sample + nxt.fiducial_sample) / 2;
            cur.end_sample = mid;
            nxt.start_sample = mid;
        }
    }
    return segments;
}

std::vector<BeatSegment> segment_beats(const wfdb::AnnotatedRecord& record,
                                       const WindowPolicy& policy) {
    const int64_t n = record.signals.empty() ? 0 : static_cast<int64_t>(record.signals[0].samples.size());
    return segment_beats(record.annotations, n, record.header.sampling_frequency, policy);
}

TargetMatrix build_targets(const std::vector<BeatSegment>& segments,
                           const std::vector<BeatCode>& class_order, int64_t num_samples) {
    TargetMatrix target;
    target.class_order = class_order;
    target.num_samples = num_samples;
    target.values.assign(class_order.size() * static_cast<size_t>(num_samples), 0);

    for (const auto& seg : segments) {
        const auto it = std::find(class_order.begin(), class_order.end(), seg.class_label);
        if (it == class_order.end()) {
            throw ConfigError(std::string("build_targets: class '") + beat_symbol(seg.class_label) +
                              "' not present in class_order");
        }
        const size_t row = static_cast<size_t>(it - class_order.begin());
        const int64_t lo = std::max<int64_t>(0, seg.start_sample);
        const int64_t hi = std::min<int64_t>(num_samples, seg.end_sample);
        for (int64_t t = lo; t < hi; ++t) {
            target.values[row * static_cast<size_t>(num_samples) + static_cast<size_t>(t)] = 1;
        }
    }
    return target;
}

std::string export_segments_csv(const std::vector<BeatSegment>& segments) {
    std::string out = "start,end,fiducial,class\n";
    for (const auto& s : segments) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%lld,%s\n",
                      static_cast<long long>(s.start_sample), static_cast<long long>(s.end_sample),
                      static_cast<long long>(s.fiducial_sample), beat_symbol(s.class_label));
        out += buf;
    }
    return out;
}

}  // namespace esn::preprocess
