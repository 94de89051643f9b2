#pragma once

#include <string>
#include <utility>
#include <vector>

#include "esn/classify.hpp"
#include "esn/config.hpp"
#include "esn/model_io.hpp"

namespace esn::pipeline {

inline constexpr const char* kVersion = "0.1.0";

// Loads <data_dir>/<id> and band-pass filters the lead II channel in place.
// Warns when the sampling frequency differs from the 360 Hz the protocol
// assumes.
wfdb::AnnotatedRecord load_and_filter(const PipelineConfig& config, const std::string& id,
                                      Log* log = nullptr);

struct ReportRow {
    classify::ClassReport report;
    classify::SlotSpec train_slot, test_slot;
};

struct RecordResult {
    std::string record_id;
    std::vector<ReportRow> rows;          // pathological classes
    classify::TrainedReadout readout;     // from the record-level slot group
    double seconds = 0.0;                 // wall time of the evaluation
};

// Full train+eval for one configured record, honoring per-class test-slot
// overrides (each override group runs its own split).
RecordResult evaluate_configured_record(const PipelineConfig& config, const RecordConfig& rec,
                                        const reservoir::ReservoirWeights& weights,
                                        Log* log = nullptr);

// ---------------------------------------------------------------------------
// Report formatting

std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& record_id, const ReportRow& row);
std::string record_report_json(const RecordResult& result);

struct GlobalSummary {
    double acc = 0, se = 0, p = 0, f1 = 0;  // non-weighted means over rows
    int rows_counted = 0;
    std::vector<std::string> excluded_records;
};

// Non-weighted average of per-class metrics across all rows of the included
// records. Undefined (NaN) metrics are left out with a warning.
GlobalSummary aggregate(const std::vector<RecordResult>& results,
                        const std::vector<std::string>& exclude, Log* log = nullptr);

std::string global_summary_csv(const GlobalSummary& summary);

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
    std::string command;
    uint64_t config_hash = 0;
    std::vector<std::pair<std::string, double>> record_seconds;
    std::vector<std::string> warnings;
    std::vector<std::string> outputs;

    std::string to_json() const;
};

// Write-then-rename so the manifest appears atomically.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace esn::pipeline
