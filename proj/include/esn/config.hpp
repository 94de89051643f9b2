#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "esn/classify.hpp"
#include "esn/preprocess.hpp"
#include "esn/reservoir.hpp"

namespace esn {

struct RecordConfig {
    std::string id;
    classify::SlotSpec test_slot;  // seconds into the record
    std::optional<classify::SlotSpec> train_slot;  // default: the preceding train_minutes
    // Optional per-class test-slot overrides (key = beat symbol).
    std::map<std::string, classify::SlotSpec> class_slots;
};

struct PipelineConfig {
    std::string data_dir = "data/mitbih";
    std::string output_dir = "out";
    uint64_t seed = 0;
    bool seed_set = false;  // the seed has no wall-clock fallback; it must be given
    std::vector<RecordConfig> records;
    reservoir::ReservoirParams reservoir;
    preprocess::FilterSpec filter;
    preprocess::WindowPolicy window_policy = preprocess::default_window_policy();
    classify::CvPlan cv;
    double train_minutes = 7.5;
    int min_class_train_beats = 10;
    std::vector<std::string> exclude;  // records left out of sweep aggregates
    int jobs = 1;

    void validate() const;
    const RecordConfig* find_record(const std::string& id) const;
    classify::SlotSpec train_slot_for(const RecordConfig& rec) const;
};

// Defaults: the fixed reservoir parameters, the 0.4-45 Hz band-pass, the
// published per-record test slots and a compact CV grid.
PipelineConfig default_config();

PipelineConfig parse_config_json(const std::string& json_text);
PipelineConfig load_config(const std::string& path, Log* log = nullptr);

// Canonical JSON serialization (sorted keys); basis of the config hash.
std::string config_to_json(const PipelineConfig& config);

// FNV-1a over the canonical serialization.
uint64_t config_hash(const PipelineConfig& config);

}  // namespace esn
