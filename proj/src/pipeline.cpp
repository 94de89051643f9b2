#include "esn/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>

namespace esn::pipeline {

using nlohmann::json;

namespace {

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), format, v);
    return buf;
}

// Metrics column: fixed four decimals, NaN spelled out.
std::string metric_str(double v) {
    return std::isnan(v) ? "NA" : fmt("%.4f", v);
}

std::string weights_str(const std::optional<readout::RobustScaling>& rb) {
    if (!rb) return "no weights";
    return fmt("%g", rb->a / rb->s);
}

std::string slot_str(const classify::SlotSpec& s) {
    return fmt("%g", s.start_s / 60.0) + "-" + fmt("%g", s.end_s / 60.0);
}

json metric_json(double v) {
    if (std::isnan(v)) return nullptr;  // undefined, never imputed
    return v;
}

}  // namespace

wfdb::AnnotatedRecord load_and_filter(const PipelineConfig& config, const std::string& id,
                                      Log* log) {
    const std::string stem = config.data_dir + "/" + id;
    auto record = wfdb::load_record(stem, log);
    if (record.header.sampling_frequency != 360.0) {
        warn_to(log, "record " + id + ": sampling frequency " +
                         fmt("%g", record.header.sampling_frequency) +
                         " Hz differs from the 360 Hz protocol");
    }
    const int channel = record.analysis_channel();
    if (channel < 0) throw ConfigError("record " + id + ": no signals");
    if (record.lead2_index() < 0) {
        warn_to(log, "record " + id + ": no lead II channel; using upper signal '" +
                         record.signals[0].channel_name + "'");
    }

    preprocess::FilterSpec spec = config.filter;
    spec.sampling_frequency_hz = record.header.sampling_frequency;
    const auto cascade = preprocess::design_butterworth_bandpass(spec);
    record.signals[static_cast<size_t>(channel)] =
        preprocess::apply_filter(cascade, record.signals[static_cast<size_t>(channel)]);
    return record;
}

RecordResult evaluate_configured_record(const PipelineConfig& config, const RecordConfig& rec,
                                        const reservoir::ReservoirWeights& weights,
                                        Log* log) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto record = load_and_filter(config, rec.id, log);

    classify::EvalOptions options;
    options.plan = config.cv;
    options.policy = config.window_policy;
    options.jobs = config.jobs;
    options.min_class_train_beats = config.min_class_train_beats;

    RecordResult result;
    result.record_id = rec.id;

    // Record-level split.
    const classify::SlotSpec test = rec.test_slot;
    const classify::SlotSpec train = config.train_slot_for(rec);
    std::set<BeatCode> overridden;
    for (const auto& [sym, slot] : rec.class_slots) overridden.insert(beat_from_symbol(sym));

    auto eval = classify::evaluate_record(record, rec.id, train, test, weights, config.reservoir,
                                          options, log);
    result.readout = eval.readout;
    for (auto& report : eval.reports) {
        if (overridden.count(report.cls)) continue;  // reported from its own slot below
        result.rows.push_back(ReportRow{std::move(report), train, test});
    }

    // Per-class overrides get their own split ending at their own test slot.
    for (const auto& [sym, slot] : rec.class_slots) {
        const BeatCode cls = beat_from_symbol(sym);
        classify::SlotSpec otrain;
        otrain.end_s = slot.start_s;
        otrain.start_s = std::max(0.0, otrain.end_s - config.train_minutes * 60.0);
        auto oeval = classify::evaluate_record(record, rec.id, otrain, slot, weights,
                                               config.reservoir, options, log);
        bool found = false;
        for (auto& report : oeval.reports) {
            if (report.cls != cls) continue;
            result.rows.push_back(ReportRow{std::move(report), otrain, slot});
            found = true;
        }
        if (!found) {
            warn_to(log, "record " + rec.id + ": override class '" + sym +
                             "' has too few beats in its own training slot; no report row");
        }
    }

    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

std::string metrics_csv_header() {
    return "record,class,slot_min,beats,gamma,weights,tau_s,acc,se,p,f1,"
           "class_beats,cv_f1,plain_f1,weighted_f1\n";
}

std::string metrics_csv_row(const std::string& record_id, const ReportRow& row) {
    const auto& r = row.report;
    std::string out;
    out += record_id;
    out += ',';
    out += beat_symbol(r.cls);
    out += ',';
    out += slot_str(row.test_slot);
    out += ',';
    out += std::to_string(r.test_beats_total);
    out += ',';
    out += fmt("%g", r.hyper.gamma);
    out += ',';
    out += weights_str(r.hyper.robust);
    out += ',';
    out += fmt("%g", r.hyper.tau_s);
    out += ',';
    out += metric_str(r.metrics.acc);
    out += ',';
    out += metric_str(r.metrics.se);
    out += ',';
    out += metric_str(r.metrics.p);
    out += ',';
    out += metric_str(r.metrics.f1);
    out += ',';
    out += std::to_string(r.test_beats_class);
    out += ',';
    out += metric_str(r.hyper.cv_f1);
    out += ',';
    out += r.plain_f1 ? metric_str(*r.plain_f1) : "NA";
    out += ',';
    out += r.weighted_f1 ? metric_str(*r.weighted_f1) : "NA";
    out += '\n';
    return out;
}

std::string record_report_json(const RecordResult& result) {
    json j;
    j["record"] = result.record_id;
    json rows = json::array();
    for (const auto& row : result.rows) {
        const auto& r = row.report;
        json e;
        e["class"] = beat_symbol(r.cls);
        e["test_slot_min"] = {row.test_slot.start_s / 60.0, row.test_slot.end_s / 60.0};
        e["train_slot_min"] = {row.train_slot.start_s / 60.0, row.train_slot.end_s / 60.0};
        e["beats"] = r.test_beats_total;
        e["class_beats"] = r.test_beats_class;
        e["gamma"] = r.hyper.gamma;
        if (r.hyper.robust) {
            e["weights"] = {{"a", r.hyper.robust->a}, {"s", r.hyper.robust->s}};
        } else {
            e["weights"] = "none";
        }
        e["tau_s"] = r.hyper.tau_s;
        e["cv_f1"] = r.hyper.cv_f1;
        e["acc"] = metric_json(r.metrics.acc);
        e["se"] = metric_json(r.metrics.se);
        e["p"] = metric_json(r.metrics.p);
        e["f1"] = metric_json(r.metrics.f1);
        e["counts"] = {{"tp", r.metrics.counts.tp},
                       {"fp", r.metrics.counts.fp},
                       {"tn", r.metrics.counts.tn},
                       {"fn", r.metrics.counts.fn}};
        if (r.plain_f1) e["plain_f1"] = metric_json(*r.plain_f1);
        if (r.weighted_f1) e["weighted_f1"] = metric_json(*r.weighted_f1);
        rows.push_back(e);
    }
    j["classes"] = rows;
    return j.dump(2) + "\n";
}

GlobalSummary aggregate(const std::vector<RecordResult>& results,
                        const std::vector<std::string>& exclude, Log* log) {
    GlobalSummary s;
    s.excluded_records = exclude;
    double acc = 0, se = 0, p = 0, f1 = 0;
    int n_acc = 0, n_se = 0, n_p = 0, n_f1 = 0;
    for (const auto& res : results) {
        bool skip = false;
        for (const auto& ex : exclude) skip |= (ex == res.record_id);
        if (skip) continue;
        for (const auto& row : res.rows) {
            const auto& m = row.report.metrics;
            const auto add = [&](double v, double& sum, int& n) {
                if (std::isnan(v)) {
                    warn_to(log, "aggregate: undefined metric for record " + res.record_id +
                                     " class " + beat_symbol(row.report.cls) + " left out");
                    return;
                }
                sum += v;
                ++n;
            };
            add(m.acc, acc, n_acc);
            add(m.se, se, n_se);
            add(m.p, p, n_p);
            add(m.f1, f1, n_f1);
            ++s.rows_counted;
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.acc = n_acc ? acc / n_acc : nan;
    s.se = n_se ? se / n_se : nan;
    s.p = n_p ? p / n_p : nan;
    s.f1 = n_f1 ? f1 / n_f1 : nan;
    return s;
}

std::string global_summary_csv(const GlobalSummary& s) {
    std::string excluded;
    for (const auto& e : s.excluded_records) {
        if (!excluded.empty()) excluded += ' ';
        excluded += e;
    }
    std::string out = "rows,acc,se,p,f1,excluded\n";
    out += std::to_string(s.rows_counted);
    out += ',' + metric_str(s.acc);
    out += ',' + metric_str(s.se);
    out += ',' + metric_str(s.p);
    out += ',' + metric_str(s.f1);
    out += ',' + excluded + '\n';
    return out;
}

std::string RunManifest::to_json() const {
    json j;
    j["command"] = command;
    char hash_hex[32];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                  static_cast<unsigned long long>(config_hash));
    j["config_hash"] = hash_hex;
    j["version"] = kVersion;
    json recs = json::array();
    for (const auto& [id, sec] : record_seconds) {
        recs.push_back(json{{"id", id}, {"seconds", sec}});
    }
    j["records"] = recs;
    j["warnings"] = warnings;
    j["outputs"] = outputs;
    return j.dump(2) + "\n";
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + tmp);
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw IoError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace esn::pipeline
