#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include "esn/classify.hpp"

namespace esn::classify {

namespace {

using readout::GramPair;

struct FoldRange {
    int64_t lo = 0, hi = 0;  // column range [lo, hi)
    int64_t guard = 0;       // leading columns excluded from training when
                             // the preceding block was the validation fold
};

std::vector<FoldRange> fold_ranges(int64_t n, int folds, int64_t guard) {
    std::vector<FoldRange> out(static_cast<size_t>(folds));
    const int64_t base = n / folds;
    const int64_t extra = n % folds;
    int64_t pos = 0;
    for (int f = 0; f < folds; ++f) {
        const int64_t len = base + (f < extra ? 1 : 0);
        out[static_cast<size_t>(f)] = FoldRange{pos, pos + len, std::min(guard, len)};
        pos += len;
    }
    return out;
}

double max_pre_margin(const preprocess::WindowPolicy& policy) {
    double m = 0.0;
    for (const auto& [cls, w] : policy) m = std::max(m, w.pre_s);
    return m;
}

double max_post_margin(const preprocess::WindowPolicy& policy) {
    double m = 0.0;
    for (const auto& [cls, w] : policy) m = std::max(m, w.post_s);
    return m;
}

Mat targets_to_mat(const preprocess::TargetMatrix& t) {
    Mat y(static_cast<Eigen::Index>(t.class_order.size()),
          static_cast<Eigen::Index>(t.num_samples));
    for (size_t c = 0; c < t.class_order.size(); ++c) {
        for (int64_t i = 0; i < t.num_samples; ++i) {
            y(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) = t.at(c, i);
        }
    }
    return y;
}

// Annotations with fiducials inside [start_s, end_s) minus the window
// margins, rebased to the slot start.
std::vector<wfdb::BeatAnnotation> annotations_in_slot(const wfdb::AnnotatedRecord& record,
                                                      double start_s, double end_s,
                                                      double pre_margin_s, double post_margin_s) {
    const double fs = record.header.sampling_frequency;
    const int64_t first = static_cast<int64_t>(std::llround(start_s * fs));
    const int64_t last = static_cast<int64_t>(std::llround(end_s * fs));
    const int64_t pre = static_cast<int64_t>(std::llround(pre_margin_s * fs));
    const int64_t post = static_cast<int64_t>(std::llround(post_margin_s * fs));
    std::vector<wfdb::BeatAnnotation> out;
    for (const auto& a : record.annotations) {
        if (a.sample_index - pre < first || a.sample_index + post >= last) continue;
        out.push_back(wfdb::BeatAnnotation{a.sample_index - first, a.beat_code, a.channel});
    }
    return out;
}

void add_gram(GramPair& acc, const GramPair& part) {
    acc.G += part.G;
    acc.C += part.C;
}

// Column ranges forming the training partition for one fold.
std::vector<std::pair<int64_t, int64_t>> train_ranges(const std::vector<FoldRange>& folds,
                                                      int val_fold) {
    std::vector<std::pair<int64_t, int64_t>> out;
    for (int b = 0; b < static_cast<int>(folds.size()); ++b) {
        if (b == val_fold) continue;
        const auto& fr = folds[static_cast<size_t>(b)];
        // Drop the state-memory guard right after the validation block.
        const int64_t lo = (b == val_fold + 1) ? fr.lo + fr.guard : fr.lo;
        if (lo < fr.hi) out.emplace_back(lo, fr.hi);
    }
    return out;
}

struct GridScore {
    double f1_sum = 0.0;
    int folds = 0;
    double mean() const { return folds > 0 ? f1_sum / folds : -1.0; }
};

}  // namespace

std::vector<std::pair<int64_t, int64_t>> cv_fold_ranges(int64_t n, int folds) {
    std::vector<std::pair<int64_t, int64_t>> out;
    for (const auto& fr : fold_ranges(n, folds, 0)) out.emplace_back(fr.lo, fr.hi);
    return out;
}

PreparedSlot prepare_slot(const wfdb::AnnotatedRecord& filtered_record, double start_s,
                          double end_s, const reservoir::ReservoirWeights& weights,
                          const reservoir::ReservoirParams& params,
                          const preprocess::WindowPolicy& policy,
                          const std::vector<BeatCode>& class_order, Log* log) {
    const int channel = filtered_record.analysis_channel();
    if (channel < 0) throw ConfigError("record has no signals");
    const auto& sig = filtered_record.signals[static_cast<size_t>(channel)];
    const double fs = filtered_record.header.sampling_frequency;
    const double duration = filtered_record.duration_s();
    if (!(0.0 <= start_s && start_s < end_s && end_s <= duration + 1e-9)) {
        throw ParamError("prepare_slot: slot outside record");
    }

    const int64_t s0 = static_cast<int64_t>(std::llround(start_s * fs));
    const int64_t s1 = std::min<int64_t>(static_cast<int64_t>(sig.samples.size()),
                                         static_cast<int64_t>(std::llround(end_s * fs)));
    // Washout context comes from the signal immediately before the slot, so
    // trajectory columns line up one-to-one with slot samples.
    const int64_t context = std::min<int64_t>(params.washout, s0);
    if (context < params.washout) {
        warn_to(log, "slot starts " + std::to_string(s0) + " samples into the record; washout "
                     "context shortened to " + std::to_string(context) + " samples");
    }
    std::vector<double> input(sig.samples.begin() + (s0 - context), sig.samples.begin() + s1);

    PreparedSlot slot;
    slot.dt = 1.0 / fs;
    slot.num_samples = s1 - s0;
    slot.class_order = class_order;
    auto traj = reservoir::harvest(weights, params, input, slot.dt, static_cast<int>(context));
    slot.Z = std::move(traj.Z);

    const auto annotations =
        annotations_in_slot(filtered_record, start_s, end_s, max_pre_margin(policy),
                            max_post_margin(policy));
    slot.segments = preprocess::segment_beats(annotations, slot.num_samples, fs, policy);
    // Beats of classes without an output row stay in `segments` (they score
    // as negatives) but contribute no target mass.
    std::vector<preprocess::BeatSegment> modeled;
    for (const auto& seg : slot.segments) {
        if (std::find(class_order.begin(), class_order.end(), seg.class_label) !=
            class_order.end()) {
            modeled.push_back(seg);
        }
    }
    slot.Y = targets_to_mat(preprocess::build_targets(modeled, class_order, slot.num_samples));
    return slot;
}

CvResult kfold_cv(const PreparedSlot& slot, const CvPlan& plan, int washout_guard, int jobs,
                  Log* log) {
    plan.validate();
    const int64_t n = slot.Z.cols();
    if (n < plan.num_folds) throw ConfigError("kfold_cv: fewer samples than folds");
    const int nf = plan.num_folds;
    const auto folds = fold_ranges(n, nf, washout_guard);
    const auto& classes = slot.class_order;
    const int nc = static_cast<int>(classes.size());

    // Per-fold validation segments (rebased) and class presence.
    std::vector<std::vector<preprocess::BeatSegment>> fold_segments(static_cast<size_t>(nf));
    std::vector<std::vector<bool>> fold_has_class(static_cast<size_t>(nf),
                                                  std::vector<bool>(static_cast<size_t>(nc), false));
    for (int f = 0; f < nf; ++f) {
        const auto& fr = folds[static_cast<size_t>(f)];
        for (const auto& seg : slot.segments) {
            if (seg.fiducial_sample < fr.lo || seg.fiducial_sample >= fr.hi) continue;
            preprocess::BeatSegment s = seg;
            s.start_sample = std::max(s.start_sample, fr.lo) - fr.lo;
            s.end_sample = std::min(s.end_sample, fr.hi) - fr.lo;
            s.fiducial_sample -= fr.lo;
            fold_segments[static_cast<size_t>(f)].push_back(s);
            for (int c = 0; c < nc; ++c) {
                if (classes[static_cast<size_t>(c)] == seg.class_label) {
                    fold_has_class[static_cast<size_t>(f)][static_cast<size_t>(c)] = true;
                }
            }
        }
    }
    for (int f = 0; f < nf; ++f) {
        for (int c = 0; c < nc; ++c) {
            if (!fold_has_class[static_cast<size_t>(f)][static_cast<size_t>(c)]) {
                warn_to(log, std::string("cv: fold ") + std::to_string(f) + " has no '" +
                                 beat_symbol(classes[static_cast<size_t>(c)]) +
                                 "' beats; skipped for that class");
            }
        }
    }

    const int ng = static_cast<int>(plan.gammas.size());
    const int nw = static_cast<int>(plan.weight_options.size());
    const int nt = static_cast<int>(plan.taus.size());
    auto grid_index = [&](int ig, int iw, int it) { return (ig * nw + iw) * nt + it; };
    std::vector<std::vector<GridScore>> scores(
        static_cast<size_t>(nc), std::vector<GridScore>(static_cast<size_t>(ng * nw * nt)));

    for (int it = 0; it < nt; ++it) {
        const Mat Z_tau = readout::time_average_states(slot.Z, plan.taus[static_cast<size_t>(it)],
                                                       slot.dt);
        // Split each block into guard prefix and rest so every fold's
        // training Gram is a pure sum of precomputed partials.
        std::vector<GramPair> prefix(static_cast<size_t>(nf)), rest(static_cast<size_t>(nf));
        for (int b = 0; b < nf; ++b) {
            const auto& fr = folds[static_cast<size_t>(b)];
            prefix[static_cast<size_t>(b)] = readout::accumulate_gram(
                Z_tau.middleCols(fr.lo, fr.guard), slot.Y.middleCols(fr.lo, fr.guard), jobs);
            rest[static_cast<size_t>(b)] = readout::accumulate_gram(
                Z_tau.middleCols(fr.lo + fr.guard, fr.hi - fr.lo - fr.guard),
                slot.Y.middleCols(fr.lo + fr.guard, fr.hi - fr.lo - fr.guard), jobs);
        }

        for (int f = 0; f < nf; ++f) {
            const auto& fr = folds[static_cast<size_t>(f)];
            GramPair train_gram;
            train_gram.G = Mat::Zero(Z_tau.rows(), Z_tau.rows());
            train_gram.C = Mat::Zero(slot.Y.rows(), Z_tau.rows());
            for (int b = 0; b < nf; ++b) {
                if (b == f) continue;
                if (b != f + 1) add_gram(train_gram, prefix[static_cast<size_t>(b)]);
                add_gram(train_gram, rest[static_cast<size_t>(b)]);
            }
            const auto ranges = train_ranges(folds, f);
            const auto Z_val = Z_tau.middleCols(fr.lo, fr.hi - fr.lo);  // view, not a copy

            auto score_candidate = [&](const Mat& W, int ig, int iw) {
                const Mat y_val = W * Z_val;
                const auto preds = argmax_per_sample(y_val, nullptr);
                const auto decisions = beat_majority_label(
                    preds, y_val, fold_segments[static_cast<size_t>(f)], classes, nullptr);
                const auto conf = confusion(decisions, classes);
                for (int c = 0; c < nc; ++c) {
                    if (!fold_has_class[static_cast<size_t>(f)][static_cast<size_t>(c)]) continue;
                    const auto m = compute_metrics(conf.at(classes[static_cast<size_t>(c)]), nullptr);
                    if (std::isnan(m.f1)) continue;
                    auto& sc = scores[static_cast<size_t>(c)][static_cast<size_t>(grid_index(ig, iw, it))];
                    sc.f1_sum += m.f1;
                    sc.folds += 1;
                }
            };

            for (int ig = 0; ig < ng; ++ig) {
                const double gamma = plan.gammas[static_cast<size_t>(ig)];
                const Mat W_plain = readout::solve_normal_equations(train_gram, gamma, log);

                // Residual norms over the training columns (shared by all
                // robust options at this gamma/tau/fold).
                bool need_residuals = false;
                for (const auto& w : plan.weight_options) need_residuals |= w.has_value();
                std::vector<Vec> rnorm_per_range;
                if (need_residuals) {
                    for (const auto& [lo, hi] : ranges) {
                        const Mat r = slot.Y.middleCols(lo, hi - lo) -
                                      W_plain * Z_tau.middleCols(lo, hi - lo);
                        rnorm_per_range.push_back(r.colwise().norm());
                    }
                }

                for (int iw = 0; iw < nw; ++iw) {
                    const auto& opt = plan.weight_options[static_cast<size_t>(iw)];
                    if (!opt) {
                        score_candidate(W_plain, ig, iw);
                        continue;
                    }
                    GramPair wg;
                    wg.G = Mat::Zero(Z_tau.rows(), Z_tau.rows());
                    wg.C = Mat::Zero(slot.Y.rows(), Z_tau.rows());
                    for (size_t ri = 0; ri < ranges.size(); ++ri) {
                        const auto [lo, hi] = ranges[ri];
                        const Vec v =
                            readout::weights_from_residual_norms(rnorm_per_range[ri], opt->a, opt->s);
                        add_gram(wg, readout::accumulate_weighted_gram(
                                         Z_tau.middleCols(lo, hi - lo),
                                         slot.Y.middleCols(lo, hi - lo), v, jobs));
                    }
                    const Mat W_w = readout::solve_normal_equations(wg, gamma, log);
                    score_candidate(W_w, ig, iw);
                }
            }
        }
    }

    // Selection: best mean F1; ties by smaller gamma, then smaller tau, then
    // the plan's weight-option order.
    CvResult result;
    for (int c = 0; c < nc; ++c) {
        int best_g = -1;
        double best_f1 = -1.0;
        int best_ig = 0, best_iw = 0, best_it = 0;
        for (int ig = 0; ig < ng; ++ig) {
            for (int it = 0; it < nt; ++it) {
                for (int iw = 0; iw < nw; ++iw) {
                    const int g = grid_index(ig, iw, it);
                    const auto& sc = scores[static_cast<size_t>(c)][static_cast<size_t>(g)];
                    if (sc.folds == 0) continue;
                    const double f1 = sc.mean();
                    const bool better =
                        f1 > best_f1 ||
                        (f1 == best_f1 && best_g >= 0 &&
                         (plan.gammas[static_cast<size_t>(ig)] < plan.gammas[static_cast<size_t>(best_ig)] ||
                          (plan.gammas[static_cast<size_t>(ig)] == plan.gammas[static_cast<size_t>(best_ig)] &&
                           (plan.taus[static_cast<size_t>(it)] < plan.taus[static_cast<size_t>(best_it)] ||
                            (plan.taus[static_cast<size_t>(it)] == plan.taus[static_cast<size_t>(best_it)] &&
                             iw < best_iw)))));
                    if (best_g < 0 || better) {
                        best_g = g;
                        best_f1 = f1;
                        best_ig = ig;
                        best_iw = iw;
                        best_it = it;
                    }
                }
            }
        }
        const BeatCode cls = classes[static_cast<size_t>(c)];
        if (best_g < 0) {
            throw ConfigError(std::string("cv: class '") + beat_symbol(cls) +
                              "' was absent from every fold");
        }
        ClassHyper hyper;
        hyper.gamma = plan.gammas[static_cast<size_t>(best_ig)];
        hyper.robust = plan.weight_options[static_cast<size_t>(best_iw)];
        hyper.tau_s = plan.taus[static_cast<size_t>(best_it)];
        hyper.cv_f1 = best_f1;

        // Best robust option at the selected (gamma, tau), for the ablation.
        double best_rob_f1 = -1.0;
        for (int iw = 0; iw < nw; ++iw) {
            const auto& opt = plan.weight_options[static_cast<size_t>(iw)];
            if (!opt) continue;
            const auto& sc =
                scores[static_cast<size_t>(c)][static_cast<size_t>(grid_index(best_ig, iw, best_it))];
            if (sc.folds == 0) continue;
            if (sc.mean() > best_rob_f1) {
                best_rob_f1 = sc.mean();
                hyper.best_robust_alternative = opt;
            }
        }
        result.per_class[cls] = hyper;
    }
    return result;
}

CvResult kfold_cv(const wfdb::AnnotatedRecord& train_slot, const CvPlan& plan,
                  const reservoir::ReservoirWeights& weights,
                  const reservoir::ReservoirParams& params,
                  const preprocess::WindowPolicy& policy,
                  const std::vector<BeatCode>& class_order, int jobs, Log* log) {
    const auto slot = prepare_slot(train_slot, 0.0, train_slot.duration_s(), weights, params,
                                   policy, class_order, log);
    return kfold_cv(slot, plan, params.washout, jobs, log);
}

namespace {

// Per-class readout rows (selected config plus both ablation variants).
struct TrainedRows {
    TrainedReadout readout;
    std::map<BeatCode, Vec> plain_row;
    std::map<BeatCode, std::pair<readout::RobustScaling, Vec>> weighted_row;
};

TrainedRows train_rows(const PreparedSlot& train, const CvResult& cv, bool want_ablation,
                       int jobs, Log* log) {
    const auto& classes = train.class_order;
    const Eigen::Index p = train.Z.rows();

    TrainedRows out;
    out.readout.class_order = classes;
    out.readout.W = Mat::Zero(static_cast<Eigen::Index>(classes.size()), p);

    // Cache of averaged states, Grams and plain solutions keyed by the grid
    // values actually selected.
    std::map<double, Mat> z_by_tau;
    std::map<double, GramPair> gram_by_tau;
    std::map<std::pair<double, double>, Mat> plain_by_gamma_tau;

    auto z_tau = [&](double tau) -> const Mat& {
        auto it = z_by_tau.find(tau);
        if (it == z_by_tau.end()) {
            it = z_by_tau.emplace(tau, readout::time_average_states(train.Z, tau, train.dt)).first;
        }
        return it->second;
    };
    auto gram_tau = [&](double tau) -> const GramPair& {
        auto it = gram_by_tau.find(tau);
        if (it == gram_by_tau.end()) {
            const Mat& z = z_tau(tau);
            it = gram_by_tau.emplace(tau, readout::accumulate_gram(z, train.Y, jobs)).first;
        }
        return it->second;
    };
    auto plain_solution = [&](double gamma, double tau) -> const Mat& {
        const auto key = std::make_pair(gamma, tau);
        auto it = plain_by_gamma_tau.find(key);
        if (it == plain_by_gamma_tau.end()) {
            it = plain_by_gamma_tau
                     .emplace(key, readout::solve_normal_equations(gram_tau(tau), gamma, log))
                     .first;
        }
        return it->second;
    };
    auto weighted_solution = [&](double gamma, double tau,
                                 const readout::RobustScaling& rb) -> Mat {
        const Mat& w_tilde = plain_solution(gamma, tau);
        const Mat& z = z_tau(tau);
        const Mat residuals = train.Y - w_tilde * z;
        const Vec v = readout::robust_weights(residuals, rb.a, rb.s);
        const GramPair wg = readout::accumulate_weighted_gram(z, train.Y, v, jobs);
        return readout::solve_normal_equations(wg, gamma, log);
    };

    for (size_t c = 0; c < classes.size(); ++c) {
        const BeatCode cls = classes[c];
        const auto hit = cv.per_class.find(cls);
        if (hit == cv.per_class.end()) {
            throw ConfigError(std::string("train_readout: no hyperparameters for class '") +
                              beat_symbol(cls) + "'");
        }
        const ClassHyper& hyper = hit->second;
        out.readout.hyper_per_class.push_back(hyper);

        const Mat& plain = plain_solution(hyper.gamma, hyper.tau_s);
        const Vec plain_row = plain.row(static_cast<Eigen::Index>(c));
        Vec selected_row = plain_row;
        std::optional<std::pair<readout::RobustScaling, Vec>> weighted;
        const auto robust_opt = hyper.robust ? hyper.robust : hyper.best_robust_alternative;
        if (robust_opt && (hyper.robust || want_ablation)) {
            const Mat w = weighted_solution(hyper.gamma, hyper.tau_s, *robust_opt);
            weighted = {*robust_opt, Vec(w.row(static_cast<Eigen::Index>(c)))};
            if (hyper.robust) selected_row = weighted->second;
        }
        out.readout.W.row(static_cast<Eigen::Index>(c)) = selected_row;
        if (want_ablation || !hyper.robust) out.plain_row[cls] = plain_row;
        if (weighted) out.weighted_row[cls] = *weighted;
    }
    return out;
}

std::vector<BeatDecision> decide(const PreparedSlot& slot, const Mat& W,
                                 const std::vector<ClassHyper>& hyper_per_class, Log* log) {
    const Mat y_raw = W * slot.Z;
    Mat y_avg(y_raw.rows(), y_raw.cols());
    for (Eigen::Index j = 0; j < y_raw.rows(); ++j) {
        y_avg.row(j) = readout::time_average_states(
            y_raw.row(j), hyper_per_class[static_cast<size_t>(j)].tau_s, slot.dt);
    }
    const auto preds = argmax_per_sample(y_avg, log);
    return beat_majority_label(preds, y_avg, slot.segments, slot.class_order, log);
}

}  // namespace

TrainedReadout train_readout(const PreparedSlot& train, const CvResult& cv, int jobs, Log* log) {
    return train_rows(train, cv, /*want_ablation=*/false, jobs, log).readout;
}

std::vector<BeatDecision> score_slot(const PreparedSlot& slot, const TrainedReadout& readout,
                                     Log* log) {
    if (readout.class_order != slot.class_order) {
        throw ConfigError("score_slot: class order mismatch between slot and readout");
    }
    return decide(slot, readout.W, readout.hyper_per_class, log);
}

RecordEvaluation evaluate_record(const wfdb::AnnotatedRecord& filtered_record,
                                 const std::string& record_id, SlotSpec train, SlotSpec test,
                                 const reservoir::ReservoirWeights& weights,
                                 const reservoir::ReservoirParams& params,
                                 const EvalOptions& options, Log* log) {
    const auto train_annotations =
        annotations_in_slot(filtered_record, train.start_s, train.end_s,
                            max_pre_margin(options.policy), max_post_margin(options.policy));
    const auto class_order = derive_class_order(train_annotations, options.min_class_train_beats);
    if (class_order.size() < 2) {
        throw ConfigError("record " + record_id +
                          ": training slot offers no pathological class with enough beats");
    }

    TrainedRows rows = [&] {
        const auto train_slot = prepare_slot(filtered_record, train.start_s, train.end_s, weights,
                                             params, options.policy, class_order, log);
        const auto cv = kfold_cv(train_slot, options.plan, params.washout, options.jobs, log);
        return train_rows(train_slot, cv, options.run_ablation, options.jobs, log);
    }();  // training states freed here, before the test harvest

    const auto test_slot = prepare_slot(filtered_record, test.start_s, test.end_s, weights, params,
                                        options.policy, class_order, log);

    RecordEvaluation eval;
    eval.record_id = record_id;
    eval.train_slot = train;
    eval.test_slot = test;
    eval.readout = rows.readout;

    const auto decisions = score_slot(test_slot, rows.readout, log);
    const auto conf = confusion(decisions, class_order);

    for (size_t c = 0; c < class_order.size(); ++c) {
        const BeatCode cls = class_order[c];
        if (cls == BeatCode::Normal) continue;

        ClassReport report;
        report.cls = cls;
        report.hyper = rows.readout.hyper_per_class[c];
        report.metrics = compute_metrics(conf.at(cls), log);
        report.test_beats_total = static_cast<int64_t>(decisions.size());
        report.test_beats_class = report.metrics.counts.tp + report.metrics.counts.fn;
        if (report.test_beats_class == 0) {
            warn_to(log, "record " + record_id + ": no '" + beat_symbol(cls) +
                             "' beats in the test slot; sensitivity undefined");
        }

        if (options.run_ablation) {
            // Same stacked readout with row c swapped for each variant.
            auto f1_with_row = [&](const Vec& row) {
                Mat W = rows.readout.W;
                W.row(static_cast<Eigen::Index>(c)) = row;
                const auto d = decide(test_slot, W, rows.readout.hyper_per_class, nullptr);
                return compute_metrics(confusion(d, class_order).at(cls), nullptr).f1;
            };
            if (auto it = rows.plain_row.find(cls); it != rows.plain_row.end()) {
                report.plain_f1 = f1_with_row(it->second);
            }
            if (auto it = rows.weighted_row.find(cls); it != rows.weighted_row.end()) {
                report.weighted_f1 = f1_with_row(it->second.second);
            }
        }
        eval.reports.push_back(std::move(report));
    }
    return eval;
}

}  // namespace esn::classify
