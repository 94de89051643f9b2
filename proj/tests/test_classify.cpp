#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "esn/classify.hpp"
#include "esn/rng.hpp"

using namespace esn;
using classify::BeatDecision;
using classify::ConfusionCounts;
using classify::Mat;
using classify::Vec;
using preprocess::BeatSegment;

namespace {

const std::vector<BeatCode> kNV = {BeatCode::Normal, BeatCode::Pvc};

std::vector<BeatDecision> decisions_from(const std::vector<std::pair<BeatCode, BeatCode>>& pairs) {
    std::vector<BeatDecision> out;
    int64_t t = 0;
    for (const auto& [truth, pred] : pairs) {
        out.push_back(BeatDecision{t += 100, truth, pred});
    }
    return out;
}

}  // namespace

TEST_CASE("predict_labels: constant dominance and the raw-argmax degenerate window") {
    Mat y(2, 20);
    y.row(0).setConstant(0.9);
    y.row(1).setConstant(0.1);
    classify::DecisionConfig cfg;
    cfg.class_order = kNV;
    for (double tau : {0.0, 0.1, 1.0}) {
        cfg.tau_s = tau;
        const auto preds = classify::predict_labels(y, cfg, 1.0 / 360.0);
        for (int p : preds) CHECK(p == 0);
    }

    // tau = 0 must be the per-sample argmax of the raw outputs.
    Rng rng(1);
    Mat raw(3, 50);
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
        for (Eigen::Index i = 0; i < 3; ++i) raw(i, j) = rng.next_symmetric();
    }
    cfg.tau_s = 0.0;
    const auto preds = classify::predict_labels(raw, cfg, 1.0 / 360.0);
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
        Eigen::Index expect;
        raw.col(j).maxCoeff(&expect);
        CHECK(preds[static_cast<size_t>(j)] == static_cast<int>(expect));
    }
}

TEST_CASE("predict_labels: a one-sample spike is smoothed away by the window") {
    Mat y = Mat::Zero(3, 21);
    y.row(0).setConstant(0.6);
    y(2, 10) = 1.0;  // spike
    classify::DecisionConfig cfg;
    cfg.class_order = {BeatCode::Normal, BeatCode::Lbbb, BeatCode::Pvc};

    cfg.tau_s = 0.0;  // raw: the spike wins its own sample
    CHECK(classify::predict_labels(y, cfg, 1.0)[10] == 2);

    cfg.tau_s = 4.0;  // 5-sample window: spike average 0.2 < 0.6
    const auto smoothed = classify::predict_labels(y, cfg, 1.0);
    for (int p : smoothed) CHECK(p == 0);
}

TEST_CASE("argmax ties go to the lower index and are logged") {
    Mat y = Mat::Zero(2, 4);
    Log log(false);
    const auto preds = classify::argmax_per_sample(y, &log);
    for (int p : preds) CHECK(p == 0);
    CHECK(log.warnings().size() == 1);
}

TEST_CASE("argmax is invariant under uniform monotone transforms") {
    Rng rng(2);
    Mat y(3, 100);
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
        for (Eigen::Index i = 0; i < 3; ++i) y(i, j) = rng.next_symmetric();
    }
    const Mat scaled = (2.5 * y).array() + 3.0;
    CHECK(classify::argmax_per_sample(y) == classify::argmax_per_sample(scaled));
}

TEST_CASE("beat_majority_label") {
    const Mat y_avg = Mat::Zero(2, 100);

    SUBCASE("unanimous segment") {
        std::vector<int> preds(100, 1);
        std::vector<BeatSegment> segs = {{10, 40, 25, BeatCode::Pvc}};
        const auto d = classify::beat_majority_label(preds, y_avg, segs, kNV);
        REQUIRE(d.size() == 1);
        CHECK(d[0].predicted_label == BeatCode::Pvc);
        CHECK(d[0].true_label == BeatCode::Pvc);
        CHECK(d[0].fiducial_sample == 25);
    }
    SUBCASE("60/40 majority") {
        std::vector<int> preds(100, 0);
        for (int i = 0; i < 40; ++i) preds[static_cast<size_t>(i)] = 1;  // 40 of the first 100
        std::vector<BeatSegment> segs = {{0, 100, 50, BeatCode::Normal}};
        const auto d = classify::beat_majority_label(preds, y_avg, segs, kNV);
        CHECK(d[0].predicted_label == BeatCode::Normal);
    }
    SUBCASE("50/50 tie resolves by summed averaged output") {
        std::vector<int> preds(100, 0);
        for (int i = 0; i < 50; ++i) preds[static_cast<size_t>(i)] = 1;
        Mat mass = Mat::Zero(2, 100);
        mass.row(1).setConstant(0.2);  // class 1 carries more output mass
        std::vector<BeatSegment> segs = {{0, 100, 50, BeatCode::Pvc}};
        const auto d = classify::beat_majority_label(preds, mass, segs, kNV);
        CHECK(d[0].predicted_label == BeatCode::Pvc);
    }
    SUBCASE("segment outside the prediction range") {
        std::vector<int> preds(100, 0);
        std::vector<BeatSegment> segs = {{120, 150, 130, BeatCode::Normal}};
        CHECK_THROWS_AS(classify::beat_majority_label(preds, y_avg, segs, kNV), Error);
    }
}

TEST_CASE("confusion: one-vs-rest bookkeeping") {
    const auto decisions = decisions_from({{BeatCode::Normal, BeatCode::Normal},
                                           {BeatCode::Normal, BeatCode::Pvc},
                                           {BeatCode::Pvc, BeatCode::Pvc},
                                           {BeatCode::Pvc, BeatCode::Normal},
                                           {BeatCode::Lbbb, BeatCode::Normal}});
    const auto conf = classify::confusion(decisions, kNV);
    CHECK(conf.at(BeatCode::Pvc).tp == 1);
    CHECK(conf.at(BeatCode::Pvc).fp == 1);
    CHECK(conf.at(BeatCode::Pvc).fn == 1);
    CHECK(conf.at(BeatCode::Pvc).tn == 2);  // the L beat counts as a negative
    for (BeatCode c : kNV) {
        CHECK(conf.at(c).total() == static_cast<int64_t>(decisions.size()));
    }

    // All-correct decisions have empty off-diagonals.
    const auto perfect = decisions_from({{BeatCode::Normal, BeatCode::Normal},
                                         {BeatCode::Pvc, BeatCode::Pvc}});
    for (const auto& [cls, counts] : classify::confusion(perfect, kNV)) {
        CHECK(counts.fp == 0);
        CHECK(counts.fn == 0);
    }
}

TEST_CASE("confusion: order of decisions does not matter") {
    Rng rng(3);
    std::vector<BeatDecision> decisions;
    for (int i = 0; i < 200; ++i) {
        decisions.push_back(BeatDecision{
            i, rng.next_unit() < 0.3 ? BeatCode::Pvc : BeatCode::Normal,
            rng.next_unit() < 0.3 ? BeatCode::Pvc : BeatCode::Normal});
    }
    auto shuffled = decisions;
    for (size_t i = shuffled.size() - 1; i > 0; --i) {
        std::swap(shuffled[i], shuffled[rng.next_below(i + 1)]);
    }
    const auto a = classify::confusion(decisions, kNV);
    const auto b = classify::confusion(shuffled, kNV);
    for (BeatCode c : kNV) {
        CHECK(a.at(c).tp == b.at(c).tp);
        CHECK(a.at(c).fp == b.at(c).fp);
        CHECK(a.at(c).tn == b.at(c).tn);
        CHECK(a.at(c).fn == b.at(c).fn);
    }
}

TEST_CASE("metrics: worked example and degenerate tables") {
    const auto m = classify::compute_metrics(ConfusionCounts{9, 1, 89, 1});
    CHECK(m.acc == doctest::Approx(0.98).epsilon(1e-12));
    CHECK(m.se == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(m.p == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(m.f1 == doctest::Approx(0.9).epsilon(1e-12));

    Log log(false);
    const auto empty = classify::compute_metrics(ConfusionCounts{}, &log);
    CHECK(std::isnan(empty.acc));
    CHECK(std::isnan(empty.se));
    CHECK(std::isnan(empty.p));
    CHECK(std::isnan(empty.f1));
    CHECK(!log.warnings().empty());

    const auto no_positives = classify::compute_metrics(ConfusionCounts{0, 0, 10, 0});
    CHECK(std::isnan(no_positives.se));  // TP = FN = 0
    CHECK(no_positives.acc == 1.0);
}

TEST_CASE("metrics: the published record-119 PVC row follows from its counts") {
    // Counts implied by the reported row: 156 PVCs all found, one false alarm
    // among 499 test beats.
    const auto m = classify::compute_metrics(ConfusionCounts{156, 1, 342, 0});
    CHECK(std::round(m.acc * 1e4) / 1e4 == 0.9980);
    CHECK(std::round(m.se * 1e4) / 1e4 == 1.0000);
    CHECK(std::round(m.p * 1e4) / 1e4 == 0.9936);
    CHECK(std::round(m.f1 * 1e4) / 1e4 == 0.9968);
}

TEST_CASE("metrics: formulas and the harmonic-mean identity on random tables") {
    Rng rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        ConfusionCounts c;
        c.tp = static_cast<int64_t>(rng.next_below(50));
        c.fp = static_cast<int64_t>(rng.next_below(50));
        c.tn = static_cast<int64_t>(rng.next_below(200));
        c.fn = static_cast<int64_t>(rng.next_below(50));
        if (c.total() == 0) continue;
        const auto m = classify::compute_metrics(c, nullptr);
        CHECK(m.acc == static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total()));
        if (c.tp + c.fn > 0) CHECK(m.se == static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn));
        if (c.tp + c.fp > 0) CHECK(m.p == static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp));
        if (!std::isnan(m.se) && !std::isnan(m.p) && m.se + m.p > 0.0) {
            const double harmonic = 2.0 * m.se * m.p / (m.se + m.p);
            CHECK(m.f1 == doctest::Approx(harmonic).epsilon(1e-12));
        }
    }
}

TEST_CASE("fold ranges: contiguous blocks at 90-second multiples") {
    // 7.5 minutes at 360 Hz, five folds.
    const auto folds = classify::cv_fold_ranges(162000, 5);
    REQUIRE(folds.size() == 5);
    for (int f = 0; f < 5; ++f) {
        CHECK(folds[static_cast<size_t>(f)].first == f * 32400);  // 90 s at 360 Hz
        CHECK(folds[static_cast<size_t>(f)].second == (f + 1) * 32400);
    }
    // Remainder spreads over the leading folds.
    const auto uneven = classify::cv_fold_ranges(17, 5);
    CHECK(uneven[0] == std::pair<int64_t, int64_t>{0, 4});
    CHECK(uneven[4] == std::pair<int64_t, int64_t>{14, 17});
}

namespace {

// A synthetic PreparedSlot whose extended states carry the class signal
// directly, so a small ridge penalty must fit it nearly perfectly.
classify::PreparedSlot make_separable_slot(int beats_per_fold, double noise, uint64_t seed) {
    const int folds = 5;
    const int beat_len = 60;
    const int n_beats = beats_per_fold * folds;
    const int64_t n = static_cast<int64_t>(n_beats) * beat_len;

    classify::PreparedSlot slot;
    slot.dt = 1.0 / 360.0;
    slot.num_samples = n;
    slot.class_order = kNV;
    slot.Z.resize(3, n);
    slot.Y = Mat::Zero(2, n);

    Rng rng(seed);
    for (int b = 0; b < n_beats; ++b) {
        const bool pvc = (b % 5) == 3;  // one PVC per group of five
        const int64_t lo = static_cast<int64_t>(b) * beat_len;
        for (int64_t t = lo; t < lo + beat_len; ++t) {
            slot.Z(0, t) = (pvc ? 1.0 : 0.0) + noise * rng.next_symmetric();
            slot.Z(1, t) = (pvc ? 0.0 : 1.0) + noise * rng.next_symmetric();
            slot.Z(2, t) = 1.0;
            slot.Y(pvc ? 1 : 0, t) = 1.0;
        }
        slot.segments.push_back(BeatSegment{lo, lo + beat_len, lo + beat_len / 2,
                                            pvc ? BeatCode::Pvc : BeatCode::Normal});
    }
    return slot;
}

}  // namespace

TEST_CASE("kfold_cv: a single grid point is returned as-is") {
    const auto slot = make_separable_slot(10, 0.05, 5);
    classify::CvPlan plan;
    plan.num_folds = 5;
    plan.gammas = {1e-4};
    plan.weight_options = {std::nullopt};
    plan.taus = {0.0};
    const auto cv = classify::kfold_cv(slot, plan, 0, 1, nullptr);
    for (BeatCode c : kNV) {
        CHECK(cv.per_class.at(c).gamma == 1e-4);
        CHECK(!cv.per_class.at(c).robust.has_value());
        CHECK(cv.per_class.at(c).tau_s == 0.0);
    }
}

TEST_CASE("kfold_cv: separable toy selects the small regularizer") {
    const auto slot = make_separable_slot(10, 0.05, 6);
    classify::CvPlan plan;
    plan.num_folds = 5;
    plan.gammas = {1e-6, 1e3};  // fits vs. crushes the weights
    plan.weight_options = {std::nullopt};
    plan.taus = {0.0};
    const auto cv = classify::kfold_cv(slot, plan, 0, 1, nullptr);
    CHECK(cv.per_class.at(BeatCode::Pvc).gamma == 1e-6);
    CHECK(cv.per_class.at(BeatCode::Pvc).cv_f1 > 0.99);

    // Exhaustive check with an independent dense solve per fold: the small
    // gamma achieves the higher mean validation F1.
    const auto folds = classify::cv_fold_ranges(slot.Z.cols(), 5);
    for (const double gamma : {1e-6, 1e3}) {
        double f1_sum = 0.0;
        int counted = 0;
        for (int f = 0; f < 5; ++f) {
            std::vector<Eigen::Index> train_cols;
            for (Eigen::Index t = 0; t < slot.Z.cols(); ++t) {
                if (t < folds[static_cast<size_t>(f)].first || t >= folds[static_cast<size_t>(f)].second)
                    train_cols.push_back(t);
            }
            Mat Zt(3, static_cast<Eigen::Index>(train_cols.size()));
            Mat Yt(2, static_cast<Eigen::Index>(train_cols.size()));
            for (size_t i = 0; i < train_cols.size(); ++i) {
                Zt.col(static_cast<Eigen::Index>(i)) = slot.Z.col(train_cols[i]);
                Yt.col(static_cast<Eigen::Index>(i)) = slot.Y.col(train_cols[i]);
            }
            Mat A = Zt * Zt.transpose();
            A.diagonal().array() += gamma * gamma;
            const Mat W = A.partialPivLu().solve(Zt * Yt.transpose()).transpose();

            int64_t tp = 0, fp = 0, fn = 0;
            for (const auto& seg : slot.segments) {
                if (seg.fiducial_sample < folds[static_cast<size_t>(f)].first ||
                    seg.fiducial_sample >= folds[static_cast<size_t>(f)].second)
                    continue;
                int votes = 0, total = 0;
                for (int64_t t = seg.start_sample; t < seg.end_sample; ++t) {
                    const Vec y = W * slot.Z.col(t);
                    votes += (y[1] > y[0]) ? 1 : 0;
                    ++total;
                }
                const bool pred_pvc = votes * 2 > total;
                const bool is_pvc = seg.class_label == BeatCode::Pvc;
                if (pred_pvc && is_pvc) ++tp;
                else if (pred_pvc && !is_pvc) ++fp;
                else if (!pred_pvc && is_pvc) ++fn;
            }
            if (tp + fn == 0) continue;
            if (2 * tp + fp + fn > 0) {
                f1_sum += 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
                ++counted;
            }
        }
        const double mean_f1 = counted ? f1_sum / counted : 0.0;
        if (gamma == 1e-6) CHECK(mean_f1 > 0.99);
        else CHECK(mean_f1 < 0.99);
    }
}

TEST_CASE("kfold_cv: perfect ties resolve to smaller gamma, then tau, then plain weights") {
    const auto slot = make_separable_slot(10, 0.01, 7);
    classify::CvPlan plan;
    plan.num_folds = 5;
    plan.gammas = {1e-4, 1e-6};  // both fit perfectly; unordered on purpose
    plan.weight_options = {std::nullopt, readout::RobustScaling{1.5, 1.0, 1}};
    plan.taus = {0.05, 0.02};
    const auto cv = classify::kfold_cv(slot, plan, 0, 1, nullptr);
    const auto& h = cv.per_class.at(BeatCode::Pvc);
    CHECK(h.cv_f1 == 1.0);
    CHECK(h.gamma == 1e-6);
    CHECK(h.tau_s == 0.02);
    CHECK(!h.robust.has_value());
    REQUIRE(h.best_robust_alternative.has_value());
    CHECK(h.best_robust_alternative->a == 1.5);
}

TEST_CASE("kfold_cv: folds without a class are skipped; a class absent everywhere fails") {
    auto slot = make_separable_slot(10, 0.05, 8);
    // Erase PVC beats from the first two folds (relabel as Normal).
    const auto folds = classify::cv_fold_ranges(slot.Z.cols(), 5);
    for (auto& seg : slot.segments) {
        if (seg.fiducial_sample < folds[1].second && seg.class_label == BeatCode::Pvc) {
            seg.class_label = BeatCode::Normal;
        }
    }
    classify::CvPlan plan;
    plan.num_folds = 5;
    plan.gammas = {1e-6};
    plan.weight_options = {std::nullopt};
    plan.taus = {0.0};
    Log log(false);
    const auto cv = classify::kfold_cv(slot, plan, 0, 1, &log);
    CHECK(cv.per_class.count(BeatCode::Pvc) == 1);
    bool skipped_warning = false;
    for (const auto& w : log.warnings()) {
        skipped_warning |= w.find("no 'V' beats") != std::string::npos;
    }
    CHECK(skipped_warning);

    // Absent everywhere: slot claims a class no segment carries.
    auto empty = make_separable_slot(4, 0.05, 9);
    for (auto& seg : empty.segments) seg.class_label = BeatCode::Normal;
    empty.Y.row(1).setZero();
    CHECK_THROWS_AS(classify::kfold_cv(empty, plan, 0, 1, nullptr), ConfigError);
}

TEST_CASE("kfold_cv: grid validation") {
    classify::CvPlan plan;
    plan.num_folds = 1;
    plan.gammas = {1e-6};
    plan.weight_options = {std::nullopt};
    plan.taus = {0.0};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan.num_folds = 5;
    plan.gammas.clear();
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan.gammas = {-1.0};
    CHECK_THROWS_AS(plan.validate(), ConfigError);
}

TEST_CASE("derive_class_order: normal row plus sufficiently common classes") {
    std::vector<wfdb::BeatAnnotation> anns;
    for (int i = 0; i < 30; ++i) anns.push_back({i * 100, BeatCode::Normal, 0});
    for (int i = 0; i < 12; ++i) anns.push_back({i * 100 + 50, BeatCode::Pvc, 0});
    for (int i = 0; i < 3; ++i) anns.push_back({i * 100 + 70, BeatCode::Apb, 0});
    anns.push_back({5000, BeatCode::Other, 0});
    const auto order = classify::derive_class_order(anns, 10);
    CHECK(order == std::vector<BeatCode>{BeatCode::Normal, BeatCode::Pvc});
}

TEST_CASE("per-class true-beat counts match TP + FN") {
    Rng rng(10);
    std::vector<BeatDecision> decisions;
    int64_t true_pvc = 0;
    for (int i = 0; i < 500; ++i) {
        const BeatCode truth = rng.next_unit() < 0.2 ? BeatCode::Pvc : BeatCode::Normal;
        const BeatCode pred = rng.next_unit() < 0.25 ? BeatCode::Pvc : BeatCode::Normal;
        true_pvc += truth == BeatCode::Pvc;
        decisions.push_back(BeatDecision{i, truth, pred});
    }
    const auto conf = classify::confusion(decisions, kNV);
    CHECK(conf.at(BeatCode::Pvc).tp + conf.at(BeatCode::Pvc).fn == true_pvc);
}
