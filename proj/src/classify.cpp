#include "esn/classify.hpp"

#include <algorithm>
#include <cmath>

namespace esn::classify {

std::vector<int> argmax_per_sample(const Eigen::Ref<const Mat>& y, Log* log) {
    std::vector<int> out(static_cast<size_t>(y.cols()));
    int64_t ties = 0;
    for (Eigen::Index t = 0; t < y.cols(); ++t) {
        int best = 0;
        double best_v = y(0, t);
        bool tied = false;
        for (Eigen::Index j = 1; j < y.rows(); ++j) {
            const double v = y(j, t);
            if (v > best_v) {
                best = static_cast<int>(j);
                best_v = v;
                tied = false;
            } else if (v == best_v) {
                tied = true;  // equal keeps the lower index
            }
        }
        if (tied) ++ties;
        out[static_cast<size_t>(t)] = best;
    }
    if (ties > 0) {
        warn_to(log, "argmax: " + std::to_string(ties) +
                         " tied sample(s) resolved to the lower class index");
    }
    return out;
}

std::vector<int> predict_labels(const Eigen::Ref<const Mat>& y, const DecisionConfig& config,
                                double dt_s, Log* log) {
    if (!y.allFinite()) throw NumericError("predict_labels: non-finite outputs");
    const Mat averaged = readout::time_average_states(y, config.tau_s, dt_s);
    return argmax_per_sample(averaged, log);
}

std::vector<BeatDecision> beat_majority_label(const std::vector<int>& per_sample_predictions,
                                              const Eigen::Ref<const Mat>& y_averaged,
                                              const std::vector<preprocess::BeatSegment>& segments,
                                              const std::vector<BeatCode>& class_order,
                                              Log* log) {
    const int64_t n = static_cast<int64_t>(per_sample_predictions.size());
    const int num_classes = static_cast<int>(class_order.size());
    std::vector<BeatDecision> out;
    out.reserve(segments.size());

    for (const auto& seg : segments) {
        const int64_t lo = std::max<int64_t>(0, seg.start_sample);
        const int64_t hi = std::min<int64_t>(n, seg.end_sample);
        if (lo >= hi) {
            if (seg.start_sample >= n || seg.end_sample <= 0) {
                throw Error("beat_majority_label: segment [" + std::to_string(seg.start_sample) +
                            ", " + std::to_string(seg.end_sample) +
                            ") outside prediction range of length " + std::to_string(n));
            }
            warn_to(log, "beat at sample " + std::to_string(seg.fiducial_sample) +
                             ": empty segment after clipping, skipped");
            continue;
        }

        std::vector<int64_t> votes(static_cast<size_t>(num_classes), 0);
        for (int64_t t = lo; t < hi; ++t) {
            const int c = per_sample_predictions[static_cast<size_t>(t)];
            if (c >= 0 && c < num_classes) ++votes[static_cast<size_t>(c)];
        }
        int best = 0;
        bool tied = false;
        for (int c = 1; c < num_classes; ++c) {
            if (votes[static_cast<size_t>(c)] > votes[static_cast<size_t>(best)]) {
                best = c;
                tied = false;
            } else if (votes[static_cast<size_t>(c)] == votes[static_cast<size_t>(best)]) {
                tied = true;
            }
        }
        if (tied) {
            // Tie: integrate the averaged output over the segment.
            double best_mass = -std::numeric_limits<double>::infinity();
            int best_c = best;
            const int64_t top_votes = votes[static_cast<size_t>(best)];
            for (int c = 0; c < num_classes; ++c) {
                if (votes[static_cast<size_t>(c)] != top_votes) continue;
                const double mass =
                    y_averaged.row(c).segment(lo, hi - lo).sum();
                if (mass > best_mass) {
                    best_mass = mass;
                    best_c = c;
                }
            }
            best = best_c;
        }

        BeatDecision d;
        d.fiducial_sample = seg.fiducial_sample;
        d.true_label = seg.class_label;
        d.predicted_label = class_order[static_cast<size_t>(best)];
        out.push_back(d);
    }
    return out;
}

std::map<BeatCode, ConfusionCounts> confusion(const std::vector<BeatDecision>& decisions,
                                              const std::vector<BeatCode>& class_order) {
    std::map<BeatCode, ConfusionCounts> out;
    for (BeatCode c : class_order) {
        ConfusionCounts& k = out[c];
        for (const auto& d : decisions) {
            const bool is_true = d.true_label == c;
            const bool is_pred = d.predicted_label == c;
            if (is_true && is_pred) ++k.tp;
            else if (!is_true && is_pred) ++k.fp;
            else if (is_true && !is_pred) ++k.fn;
            else ++k.tn;
        }
    }
    return out;
}

ClassMetrics compute_metrics(const ConfusionCounts& counts, Log* log) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    ClassMetrics m;
    m.counts = counts;
    const int64_t total = counts.total();
    m.acc = total > 0 ? static_cast<double>(counts.tp + counts.tn) / static_cast<double>(total) : nan;
    m.se = (counts.tp + counts.fn) > 0
               ? static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fn)
               : nan;
    m.p = (counts.tp + counts.fp) > 0
              ? static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fp)
              : nan;
    m.f1 = (2 * counts.tp + counts.fp + counts.fn) > 0
               ? static_cast<double>(2 * counts.tp) /
                     static_cast<double>(2 * counts.tp + counts.fp + counts.fn)
               : nan;
    if (total == 0) {
        warn_to(log, "metrics: empty decision list, all metrics undefined");
    } else if (std::isnan(m.se) || std::isnan(m.p) || std::isnan(m.f1)) {
        warn_to(log, "metrics: undefined ratio (zero denominator) reported as NaN");
    }
    return m;
}

void CvPlan::validate() const {
    if (num_folds < 2) throw ConfigError("CvPlan: need at least 2 folds");
    if (gammas.empty() || weight_options.empty() || taus.empty()) {
        throw ConfigError("CvPlan: gamma/weight/tau grids must be non-empty");
    }
    for (double g : gammas) {
        if (g < 0.0) throw ConfigError("CvPlan: gamma must be >= 0");
    }
    for (double t : taus) {
        if (t < 0.0) throw ConfigError("CvPlan: tau must be >= 0");
    }
    for (const auto& w : weight_options) {
        if (w && (w->a < 1.0 || w->s < 1.0)) {
            throw ConfigError("CvPlan: robust options require a >= 1 and s >= 1");
        }
    }
}

std::vector<BeatCode> derive_class_order(const std::vector<wfdb::BeatAnnotation>& annotations,
                                         int min_count) {
    std::map<BeatCode, int> counts;
    for (const auto& a : annotations) ++counts[a.beat_code];
    std::vector<BeatCode> order;
    for (BeatCode c : all_beat_codes()) {
        if (c == BeatCode::Normal) {
            order.push_back(c);  // the normal row is always present
        } else if (c != BeatCode::Other) {
            auto it = counts.find(c);
            if (it != counts.end() && it->second >= min_count) order.push_back(c);
        }
    }
    return order;
}

}  // namespace esn::classify
