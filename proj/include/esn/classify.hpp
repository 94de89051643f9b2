#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "esn/preprocess.hpp"
#include "esn/readout.hpp"
#include "esn/reservoir.hpp"
#include "esn/types.hpp"

namespace esn::classify {

using readout::Mat;
using readout::Vec;

// ---------------------------------------------------------------------------
// Per-sample and per-beat decisions

struct DecisionConfig {
    double tau_s = 0.0;  // centered integration window for the output average
    std::vector<BeatCode> class_order;
};

// Index of the largest entry per column; ties go to the lower index and are
// counted in the log.
std::vector<int> argmax_per_sample(const Eigen::Ref<const Mat>& y, Log* log = nullptr);

// Time-averages each output row over the tau window (same truncation rule as
// the state averaging) and takes the per-sample argmax.
std::vector<int> predict_labels(const Eigen::Ref<const Mat>& y, const DecisionConfig& config,
                                double dt_s, Log* log = nullptr);

struct BeatDecision {
    int64_t fiducial_sample = 0;
    BeatCode true_label = BeatCode::Other;
    BeatCode predicted_label = BeatCode::Other;
};

// Assigns each beat the modal predicted class over its segment; ties resolve
// to the class with the larger summed averaged output across the segment.
std::vector<BeatDecision> beat_majority_label(const std::vector<int>& per_sample_predictions,
                                              const Eigen::Ref<const Mat>& y_averaged,
                                              const std::vector<preprocess::BeatSegment>& segments,
                                              const std::vector<BeatCode>& class_order,
                                              Log* log = nullptr);

// ---------------------------------------------------------------------------
// Confusion counts and metrics

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    int64_t total() const { return tp + fp + tn + fn; }
};

// One-vs-rest counts per class; every decision lands in each class's table
// exactly once.
std::map<BeatCode, ConfusionCounts> confusion(const std::vector<BeatDecision>& decisions,
                                              const std::vector<BeatCode>& class_order);

// Acc/Se/P/F1 from one 2x2 table. Undefined ratios (zero denominator) are
// reported as NaN, never as 0 or 1.
struct ClassMetrics {
    ConfusionCounts counts;
    double acc = 0, se = 0, p = 0, f1 = 0;
};

ClassMetrics compute_metrics(const ConfusionCounts& counts, Log* log = nullptr);

// ---------------------------------------------------------------------------
// Cross-validation harness

struct CvPlan {
    int num_folds = 5;
    std::vector<double> gammas;
    // nullopt = plain ridge ("no weights"); otherwise robust (a, s).
    std::vector<std::optional<readout::RobustScaling>> weight_options;
    std::vector<double> taus;

    void validate() const;
};

struct ClassHyper {
    double gamma = 0.0;
    std::optional<readout::RobustScaling> robust;
    double tau_s = 0.0;
    double cv_f1 = 0.0;  // mean validation F1 at the selected point
    // Best robust option seen for this class at the selected (gamma, tau),
    // kept for the weighted-vs-plain ablation.
    std::optional<readout::RobustScaling> best_robust_alternative;
};

struct CvResult {
    std::map<BeatCode, ClassHyper> per_class;
};

// A slot of a filtered record turned into everything the trainer needs:
// harvested extended states aligned one-to-one with slot samples, beat
// segments and the binary target matrix. State context for the washout is
// taken from the signal immediately before the slot when available.
struct PreparedSlot {
    Mat Z;      // (N_x + N_u) x N_slot, column t = slot sample t
    double dt = 0.0;
    int64_t num_samples = 0;
    std::vector<preprocess::BeatSegment> segments;  // slot coordinates
    std::vector<BeatCode> class_order;
    Mat Y;  // targets as doubles, |class_order| x N_slot
};

PreparedSlot prepare_slot(const wfdb::AnnotatedRecord& filtered_record, double start_s,
                          double end_s, const reservoir::ReservoirWeights& weights,
                          const reservoir::ReservoirParams& params,
                          const preprocess::WindowPolicy& policy,
                          const std::vector<BeatCode>& class_order, Log* log = nullptr);

// Contiguous fold boundaries: n columns split into `folds` blocks of equal
// size (earlier blocks absorb the remainder).
std::vector<std::pair<int64_t, int64_t>> cv_fold_ranges(int64_t n, int folds);

// 5-fold (contiguous time blocks) grid search. The slot is harvested once;
// fold Grams are accumulated per tau and reused across the grid. Selection
// per class: highest mean validation F1, ties broken by smaller gamma, then
// smaller tau, then the plan's weight-option order.
CvResult kfold_cv(const PreparedSlot& slot, const CvPlan& plan, int washout_guard,
                  int jobs = 1, Log* log = nullptr);

// Convenience overload matching the slot-level signature: harvests the given
// (already filtered and cropped) training slot and runs the grid search.
CvResult kfold_cv(const wfdb::AnnotatedRecord& train_slot, const CvPlan& plan,
                  const reservoir::ReservoirWeights& weights,
                  const reservoir::ReservoirParams& params,
                  const preprocess::WindowPolicy& policy,
                  const std::vector<BeatCode>& class_order, int jobs = 1, Log* log = nullptr);

// ---------------------------------------------------------------------------
// Record evaluation (train on one slot, test on another)

struct SlotSpec {
    double start_s = 0.0;
    double end_s = 0.0;
};

struct ClassReport {
    BeatCode cls = BeatCode::Other;
    ClassHyper hyper;
    ClassMetrics metrics;
    int64_t test_beats_total = 0;  // decided beats in the test slot
    int64_t test_beats_class = 0;  // true beats of this class among them
    // Weighted-vs-plain comparison at the selected (gamma, tau).
    std::optional<double> plain_f1;
    std::optional<double> weighted_f1;
};

struct TrainedReadout {
    Mat W;  // |class_order| x (N_x + N_u), rows per class_order
    std::vector<BeatCode> class_order;
    std::vector<ClassHyper> hyper_per_class;  // parallel to class_order
};

struct RecordEvaluation {
    std::string record_id;
    SlotSpec train_slot, test_slot;
    TrainedReadout readout;
    std::vector<ClassReport> reports;  // pathological classes only
};

struct EvalOptions {
    CvPlan plan;
    preprocess::WindowPolicy policy;
    int jobs = 1;
    bool run_ablation = true;   // also score plain vs weighted per class
    int min_class_train_beats = 10;  // classes rarer than this get no output row
};

// Beat classes that get an output row: Normal plus every class with at least
// min_count beats among the given annotations, in canonical order.
std::vector<BeatCode> derive_class_order(const std::vector<wfdb::BeatAnnotation>& annotations,
                                         int min_count);

// Trains per-class readout rows on the training slot (cross-validated
// hyperparameters per class) and returns the stacked readout.
TrainedReadout train_readout(const PreparedSlot& train, const CvResult& cv, int jobs = 1,
                             Log* log = nullptr);

// Full per-record protocol: CV + final fit on the training slot, scoring on
// the test slot, one report per pathological class.
RecordEvaluation evaluate_record(const wfdb::AnnotatedRecord& filtered_record,
                                 const std::string& record_id, SlotSpec train, SlotSpec test,
                                 const reservoir::ReservoirWeights& weights,
                                 const reservoir::ReservoirParams& params,
                                 const EvalOptions& options, Log* log = nullptr);

// Scores an already-trained stacked readout on a prepared slot.
std::vector<BeatDecision> score_slot(const PreparedSlot& slot, const TrainedReadout& readout,
                                     Log* log = nullptr);

}  // namespace esn::classify
