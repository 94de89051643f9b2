#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <map>
#include <thread>

#include <CLI11.hpp>

#include "esn/pipeline.hpp"
#include "esn/rng.hpp"

namespace fs = std::filesystem;
using namespace esn;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string record_id;
    std::string out_dir;
    std::vector<std::string> exclude;
    uint64_t seed = 0;
    bool seed_given = false;
    int jobs = 0;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_record) {
    cmd->add_option("--config", flags.config_path, "pipeline config file (JSON)");
    if (with_record) cmd->add_option("--record", flags.record_id, "record id, e.g. 119");
    cmd->add_option("--out", flags.out_dir, "output directory override");
    cmd->add_option("--exclude", flags.exclude, "records excluded from sweep aggregates");
    cmd->add_option("--jobs", flags.jobs, "worker threads");
    auto* seed_opt = cmd->add_option("--seed", flags.seed, "random seed override");
    seed_opt->each([&flags](const std::string&) { flags.seed_given = true; });
}

PipelineConfig make_config(const CommonFlags& flags, Log* log) {
    PipelineConfig cfg =
        flags.config_path.empty() ? default_config() : load_config(flags.config_path, log);
    if (flags.seed_given) {
        cfg.seed = flags.seed;
        cfg.seed_set = true;
        cfg.reservoir.seed = flags.seed;
    }
    if (!flags.out_dir.empty()) cfg.output_dir = flags.out_dir;
    if (!flags.exclude.empty()) cfg.exclude = flags.exclude;
    if (flags.jobs > 0) cfg.jobs = flags.jobs;
    cfg.validate();
    return cfg;
}

void finish_manifest(pipeline::RunManifest manifest, const PipelineConfig& cfg, const Log& log) {
    manifest.warnings = log.warnings();
    std::sort(manifest.warnings.begin(), manifest.warnings.end());
    std::sort(manifest.outputs.begin(), manifest.outputs.end());
    fs::create_directories(cfg.output_dir);
    pipeline::write_file_atomic(cfg.output_dir + "/manifest_" + manifest.command + ".json",
                                manifest.to_json());
}

std::vector<RecordConfig> selected_records(const PipelineConfig& cfg, const std::string& id) {
    if (id.empty()) return cfg.records;
    const RecordConfig* rec = cfg.find_record(id);
    if (!rec) throw ConfigError("record '" + id + "' is not in the config");
    return {*rec};
}

int cmd_ingest(const CommonFlags& flags) {
    Log log;
    const auto cfg = make_config(flags, &log);
    pipeline::RunManifest manifest;
    manifest.command = "ingest";
    manifest.config_hash = config_hash(cfg);

    const std::string cache_dir = cfg.output_dir + "/ingest";
    fs::create_directories(cache_dir);

    bool any_missing = false;
    for (const auto& rec : selected_records(cfg, flags.record_id)) {
        const std::string stem = cfg.data_dir + "/" + rec.id;
        if (!fs::exists(stem + ".hea")) {
            std::fprintf(stderr, "record %s: %s.hea not found\n", rec.id.c_str(), stem.c_str());
            any_missing = true;
            continue;
        }
        const auto record = wfdb::load_record(stem, &log);
        if (record.header.sampling_frequency != 360.0) {
            log.warn("record " + rec.id + ": sampling frequency differs from 360 Hz");
        }

        std::map<BeatCode, int64_t> histogram;
        for (const auto& a : record.annotations) ++histogram[a.beat_code];
        int classes_over_50 = 0;
        std::string hist_str;
        for (const auto& [cls, count] : histogram) {
            hist_str += std::string(" ") + beat_symbol(cls) + "=" + std::to_string(count);
            if (count > 50) ++classes_over_50;
        }
        std::printf("record %s: %lld beats,%s%s\n", rec.id.c_str(),
                    static_cast<long long>(record.annotations.size()), hist_str.c_str(),
                    classes_over_50 >= 2 ? "  [>=2 classes above 50 beats]" : "");

        const std::string path = cache_dir + "/" + rec.id + "_annotations.csv";
        pipeline::write_file_atomic(path, wfdb::export_annotations_csv(record));
        manifest.outputs.push_back(path);

        const auto segments = preprocess::segment_beats(record, cfg.window_policy);
        const std::string seg_path = cache_dir + "/" + rec.id + "_segments.csv";
        pipeline::write_file_atomic(seg_path, preprocess::export_segments_csv(segments));
        manifest.outputs.push_back(seg_path);
    }
    if (any_missing) {
        std::fprintf(stderr,
                     "\nMIT-BIH arrhythmia records were not found under '%s'.\n"
                     "Fetch them from https://physionet.org/content/mitdb/1.0.0/ and place\n"
                     "the .hea/.dat/.atr files in that directory.\n",
                     cfg.data_dir.c_str());
        return 1;
    }
    finish_manifest(std::move(manifest), cfg, log);
    return 0;
}

int cmd_train(const CommonFlags& flags) {
    Log log;
    const auto cfg = make_config(flags, &log);
    if (flags.record_id.empty()) throw ConfigError("train: --record is required");
    const RecordConfig* rec = cfg.find_record(flags.record_id);
    if (!rec) throw ConfigError("record '" + flags.record_id + "' is not in the config");

    pipeline::RunManifest manifest;
    manifest.command = "train";
    manifest.config_hash = config_hash(cfg);

    const auto t0 = std::chrono::steady_clock::now();
    const auto record = pipeline::load_and_filter(cfg, rec->id, &log);
    const auto weights = reservoir::build_reservoir(cfg.reservoir);
    const auto train = cfg.train_slot_for(*rec);

    // CV and final fit on the training slot only.
    const auto train_slot_annotations = [&] {
        auto cropped = preprocess::select_time_slot(record, train.start_s, train.end_s);
        return cropped.annotations;
    }();
    const auto class_order =
        classify::derive_class_order(train_slot_annotations, cfg.min_class_train_beats);
    if (class_order.size() < 2) {
        throw ConfigError("record " + rec->id + ": no pathological class with at least " +
                          std::to_string(cfg.min_class_train_beats) + " training beats");
    }
    const auto slot = classify::prepare_slot(record, train.start_s, train.end_s, weights,
                                             cfg.reservoir, cfg.window_policy, class_order, &log);
    const auto cv = classify::kfold_cv(slot, cfg.cv, cfg.reservoir.washout, cfg.jobs, &log);
    const auto readout = classify::train_readout(slot, cv, cfg.jobs, &log);

    const std::string model_dir = cfg.output_dir + "/models";
    fs::create_directories(model_dir);
    const std::string res_path = model_dir + "/" + rec->id + ".reservoir.json";
    const std::string out_path = model_dir + "/" + rec->id + ".readout.bin";
    model::save_reservoir(res_path, cfg.reservoir, weights);
    model::save_readout(out_path, readout);
    manifest.outputs = {res_path, out_path};
    manifest.record_seconds.emplace_back(
        rec->id, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    for (size_t c = 0; c < readout.class_order.size(); ++c) {
        const auto& h = readout.hyper_per_class[c];
        std::printf("class %s: gamma=%g weights=%s tau=%g cv_f1=%.4f\n",
                    beat_symbol(readout.class_order[c]), h.gamma,
                    h.robust ? "robust" : "none", h.tau_s, h.cv_f1);
    }
    finish_manifest(std::move(manifest), cfg, log);
    return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& model_stem_flag) {
    Log log;
    const auto cfg = make_config(flags, &log);
    if (flags.record_id.empty()) throw ConfigError("eval: --record is required");
    const RecordConfig* rec = cfg.find_record(flags.record_id);
    if (!rec) throw ConfigError("record '" + flags.record_id + "' is not in the config");

    const std::string stem = model_stem_flag.empty()
                                 ? cfg.output_dir + "/models/" + rec->id
                                 : model_stem_flag;
    const auto loaded = model::load_reservoir(stem + ".reservoir.json");
    const auto readout = model::load_readout(stem + ".readout.bin");

    const auto record = pipeline::load_and_filter(cfg, rec->id, &log);
    const auto test = rec->test_slot;
    const auto slot = classify::prepare_slot(record, test.start_s, test.end_s, loaded.weights,
                                             loaded.params, cfg.window_policy,
                                             readout.class_order, &log);
    const auto decisions = classify::score_slot(slot, readout, &log);
    const auto conf = classify::confusion(decisions, readout.class_order);

    pipeline::RecordResult result;
    result.record_id = rec->id;
    for (size_t c = 0; c < readout.class_order.size(); ++c) {
        const BeatCode cls = readout.class_order[c];
        if (cls == BeatCode::Normal) continue;
        classify::ClassReport report;
        report.cls = cls;
        report.hyper = readout.hyper_per_class[c];
        report.metrics = classify::compute_metrics(conf.at(cls), &log);
        report.test_beats_total = static_cast<int64_t>(decisions.size());
        report.test_beats_class = report.metrics.counts.tp + report.metrics.counts.fn;
        result.rows.push_back(pipeline::ReportRow{std::move(report), cfg.train_slot_for(*rec), test});
    }

    fs::create_directories(cfg.output_dir);
    std::string csv = pipeline::metrics_csv_header();
    for (const auto& row : result.rows) {
        const auto line = pipeline::metrics_csv_row(rec->id, row);
        csv += line;
        std::fputs(line.c_str(), stdout);
    }
    const std::string csv_path = cfg.output_dir + "/" + rec->id + "_metrics.csv";
    const std::string json_path = cfg.output_dir + "/" + rec->id + "_metrics.json";
    pipeline::write_file_atomic(csv_path, csv);
    pipeline::write_file_atomic(json_path, pipeline::record_report_json(result));

    pipeline::RunManifest manifest;
    manifest.command = "eval";
    manifest.config_hash = config_hash(cfg);
    manifest.outputs = {csv_path, json_path};
    finish_manifest(std::move(manifest), cfg, log);
    return 0;
}

int cmd_sweep(const CommonFlags& flags) {
    Log log;
    auto cfg = make_config(flags, &log);

    pipeline::RunManifest manifest;
    manifest.command = "sweep";
    manifest.config_hash = config_hash(cfg);

    const auto weights = reservoir::build_reservoir(cfg.reservoir);
    const auto records = selected_records(cfg, flags.record_id);

    // Bounded worker pool across records; Gram-level threading is left to
    // single-record commands so memory stays predictable.
    const int pool = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(records.size())));
    PipelineConfig worker_cfg = cfg;
    if (pool > 1) worker_cfg.jobs = 1;

    std::vector<pipeline::RecordResult> results(records.size());
    std::vector<std::string> errors(records.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= records.size()) return;
            try {
                results[i] = pipeline::evaluate_configured_record(worker_cfg, records[i], weights,
                                                                  &log);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    if (pool == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < pool; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    for (size_t i = 0; i < records.size(); ++i) {
        if (!errors[i].empty()) {
            throw Error("record " + records[i].id + ": " + errors[i]);
        }
    }

    fs::create_directories(cfg.output_dir);
    std::string csv = pipeline::metrics_csv_header();
    for (const auto& res : results) {
        for (const auto& row : res.rows) csv += pipeline::metrics_csv_row(res.record_id, row);
        const std::string path = cfg.output_dir + "/" + res.record_id + "_metrics.json";
        pipeline::write_file_atomic(path, pipeline::record_report_json(res));
        manifest.outputs.push_back(path);
        manifest.record_seconds.emplace_back(res.record_id, res.seconds);
    }
    const std::string csv_path = cfg.output_dir + "/metrics.csv";
    pipeline::write_file_atomic(csv_path, csv);
    manifest.outputs.push_back(csv_path);

    const auto all = pipeline::aggregate(results, {}, &log);
    const auto filtered = pipeline::aggregate(results, cfg.exclude, &log);
    std::string summary = "scope," + pipeline::global_summary_csv(all);
    // Two summary rows: every record, then the configured exclusions applied.
    std::string summary_csv = "scope,rows,acc,se,p,f1,excluded\n";
    auto strip_header = [](const std::string& s) { return s.substr(s.find('\n') + 1); };
    summary_csv += "all," + strip_header(pipeline::global_summary_csv(all));
    summary_csv += "filtered," + strip_header(pipeline::global_summary_csv(filtered));
    const std::string summary_path = cfg.output_dir + "/global.csv";
    pipeline::write_file_atomic(summary_path, summary_csv);
    manifest.outputs.push_back(summary_path);
    (void)summary;

    std::printf("global (all records): acc=%.4f se=%.4f p=%.4f f1=%.4f over %d rows\n", all.acc,
                all.se, all.p, all.f1, all.rows_counted);
    std::printf("global (excluding");
    for (const auto& e : cfg.exclude) std::printf(" %s", e.c_str());
    std::printf("): acc=%.4f se=%.4f p=%.4f f1=%.4f over %d rows\n", filtered.acc, filtered.se,
                filtered.p, filtered.f1, filtered.rows_counted);

    finish_manifest(std::move(manifest), cfg, log);
    return 0;
}

int cmd_export_activations(const CommonFlags& flags, const std::string& model_stem_flag,
                           double t0_s, double t1_s) {
    Log log;
    const auto cfg = make_config(flags, &log);
    if (flags.record_id.empty()) throw ConfigError("export-activations: --record is required");
    const RecordConfig* rec = cfg.find_record(flags.record_id);
    if (!rec) throw ConfigError("record '" + flags.record_id + "' is not in the config");
    if (t1_s < t0_s) throw ConfigError("export-activations: end before start");

    const std::string stem = model_stem_flag.empty()
                                 ? cfg.output_dir + "/models/" + rec->id
                                 : model_stem_flag;
    const auto loaded = model::load_reservoir(stem + ".reservoir.json");
    const auto readout = model::load_readout(stem + ".readout.bin");
    const auto record = pipeline::load_and_filter(cfg, rec->id, &log);

    // Four reservoir neurons chosen by the seeded generator.
    Rng rng = Rng(cfg.seed).fork(0xac71);
    std::vector<int> neurons;
    while (neurons.size() < 4) {
        const int idx = static_cast<int>(rng.next_below(static_cast<uint64_t>(loaded.params.size)));
        if (std::find(neurons.begin(), neurons.end(), idx) == neurons.end()) neurons.push_back(idx);
    }

    std::string csv = "time_s,ecg_mv";
    for (int idx : neurons) csv += ",x" + std::to_string(idx);
    for (BeatCode c : readout.class_order) csv += std::string(",y_") + beat_symbol(c);
    csv += '\n';

    if (t1_s > t0_s) {
        const double fs = record.header.sampling_frequency;
        const auto slot = classify::prepare_slot(record, t0_s, t1_s, loaded.weights, loaded.params,
                                                 cfg.window_policy, readout.class_order, &log);
        const classify::Mat y = readout.W * slot.Z;
        const Eigen::Index nx = loaded.params.size;
        for (Eigen::Index t = 0; t < slot.Z.cols(); ++t) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.6f", t0_s + static_cast<double>(t) / fs);
            csv += buf;
            std::snprintf(buf, sizeof(buf), ",%.6f", slot.Z(nx + 1, t));  // the ECG input row
            csv += buf;
            for (int idx : neurons) {
                std::snprintf(buf, sizeof(buf), ",%.6f", slot.Z(idx, t));
                csv += buf;
            }
            for (Eigen::Index j = 0; j < y.rows(); ++j) {
                std::snprintf(buf, sizeof(buf), ",%.6f", y(j, t));
                csv += buf;
            }
            csv += '\n';
        }
    }

    fs::create_directories(cfg.output_dir);
    const std::string path = cfg.output_dir + "/" + rec->id + "_activations.csv";
    pipeline::write_file_atomic(path, csv);
    std::printf("wrote %s\n", path.c_str());

    pipeline::RunManifest manifest;
    manifest.command = "export-activations";
    manifest.config_hash = config_hash(cfg);
    manifest.outputs = {path};
    finish_manifest(std::move(manifest), cfg, log);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Echo-state-network heartbeat classifier for MIT-BIH ECG records"};
    app.require_subcommand(1);

    CommonFlags ingest_flags, train_flags, eval_flags, sweep_flags, export_flags;
    std::string eval_model, export_model;
    double export_t0 = 0.0, export_t1 = 0.0;

    auto* ingest = app.add_subcommand("ingest", "parse records and report beat histograms");
    add_common(ingest, ingest_flags, true);

    auto* train = app.add_subcommand("train", "cross-validate and fit one record's readout");
    add_common(train, train_flags, true);

    auto* eval = app.add_subcommand("eval", "score a trained model on the test slot");
    add_common(eval, eval_flags, true);
    eval->add_option("--model", eval_model, "model path stem (default <out>/models/<record>)");

    auto* sweep = app.add_subcommand("sweep", "train+eval every configured record");
    add_common(sweep, sweep_flags, true);

    auto* exp = app.add_subcommand("export-activations",
                                   "dump input, reservoir and output traces as CSV");
    add_common(exp, export_flags, true);
    exp->add_option("--model", export_model, "model path stem");
    exp->add_option("--start", export_t0, "range start, seconds")->required();
    exp->add_option("--end", export_t1, "range end, seconds")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (ingest->parsed()) return cmd_ingest(ingest_flags);
        if (train->parsed()) return cmd_train(train_flags);
        if (eval->parsed()) return cmd_eval(eval_flags, eval_model);
        if (sweep->parsed()) return cmd_sweep(sweep_flags);
        if (exp->parsed()) return cmd_export_activations(export_flags, export_model, export_t0, export_t1);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
