#include "esn/config.hpp"

#include <fstream>
#include <json.hpp>

namespace esn {

using nlohmann::json;

namespace {

json slot_to_json(const classify::SlotSpec& s) {
    return json::array({s.start_s / 60.0, s.end_s / 60.0});  // minutes in the file
}

classify::SlotSpec slot_from_json(const json& j) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("slot must be [start_min, end_min]");
    classify::SlotSpec s;
    s.start_s = j[0].get<double>() * 60.0;
    s.end_s = j[1].get<double>() * 60.0;
    return s;
}

json weight_option_to_json(const std::optional<readout::RobustScaling>& w) {
    if (!w) return json("none");
    return json{{"a", w->a}, {"s", w->s}};
}

std::optional<readout::RobustScaling> weight_option_from_json(const json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "none") return std::nullopt;
        throw ConfigError("weight option must be \"none\" or {a, s}");
    }
    readout::RobustScaling rb;
    rb.a = j.at("a").get<double>();
    rb.s = j.at("s").get<double>();
    if (j.contains("irls_rounds")) rb.max_irls_rounds = j["irls_rounds"].get<int>();
    return rb;
}

}  // namespace

void PipelineConfig::validate() const {
    if (!seed_set) throw ConfigError("config: seed is mandatory (no wall-clock seeding)");
    if (records.empty()) throw ConfigError("config: no records configured");
    if (train_minutes <= 0) throw ConfigError("config: train_minutes must be > 0");
    if (jobs < 1) throw ConfigError("config: jobs must be >= 1");
    reservoir.validate();
    cv.validate();
    for (const auto& rec : records) {
        if (rec.test_slot.end_s <= rec.test_slot.start_s) {
            throw ConfigError("config: record " + rec.id + " has an empty test slot");
        }
    }
}

const RecordConfig* PipelineConfig::find_record(const std::string& id) const {
    for (const auto& rec : records) {
        if (rec.id == id) return &rec;
    }
    return nullptr;
}

classify::SlotSpec PipelineConfig::train_slot_for(const RecordConfig& rec) const {
    if (rec.train_slot) return *rec.train_slot;
    classify::SlotSpec s;
    s.end_s = rec.test_slot.start_s;
    s.start_s = std::max(0.0, s.end_s - train_minutes * 60.0);
    return s;
}

PipelineConfig default_config() {
    PipelineConfig cfg;
    cfg.seed = 42;
    cfg.seed_set = true;
    cfg.reservoir.seed = cfg.seed;

    cfg.cv.num_folds = 5;
    cfg.cv.gammas = {1e-5, 1e-3};
    cfg.cv.weight_options = {std::nullopt, readout::RobustScaling{1.5, 1.0, 1},
                             readout::RobustScaling{2.5, 1.0, 1}};
    cfg.cv.taus = {0.5, 1.0};

    // Published per-record test slots, minutes.
    const struct {
        const char* id;
        double lo, hi;
    } slots[] = {
        {"104", 22.5, 30.0}, {"106", 17.5, 25.0}, {"119", 17.5, 25.0}, {"200", 12.5, 20.0},
        {"201", 11.5, 19.0}, {"203", 12.5, 20.0}, {"207", 7.5, 15.0},  {"208", 7.5, 15.0},
        {"209", 10.0, 17.5}, {"212", 7.5, 15.0},  {"213", 9.0, 16.5},  {"217", 21.5, 29.0},
        {"221", 21.5, 29.0}, {"223", 21.5, 29.0}, {"231", 7.5, 15.0},  {"232", 7.5, 15.0},
        {"233", 16.5, 24.0},
    };
    for (const auto& s : slots) {
        RecordConfig rec;
        rec.id = s.id;
        rec.test_slot = classify::SlotSpec{s.lo * 60.0, s.hi * 60.0};
        if (rec.id == "207") {
            // Record 207 reports each class on its own test window.
            rec.class_slots["A"] = classify::SlotSpec{29.0 * 60.0, 30.0 * 60.0};
            rec.class_slots["V"] = classify::SlotSpec{2.5 * 60.0, 5.0 * 60.0};
            rec.class_slots["!"] = classify::SlotSpec{26.5 * 60.0, 29.0 * 60.0};
            rec.class_slots["E"] = classify::SlotSpec{28.0 * 60.0, 30.0 * 60.0};
        }
        cfg.records.push_back(std::move(rec));
    }
    cfg.exclude = {"207", "209"};
    return cfg;
}

std::string config_to_json(const PipelineConfig& cfg) {
    json j;
    j["data_dir"] = cfg.data_dir;
    j["output_dir"] = cfg.output_dir;
    j["seed"] = cfg.seed;
    j["train_minutes"] = cfg.train_minutes;
    j["min_class_train_beats"] = cfg.min_class_train_beats;
    j["exclude"] = cfg.exclude;
    j["jobs"] = cfg.jobs;

    j["reservoir"] = {{"size", cfg.reservoir.size},
                      {"input_scaling", cfg.reservoir.input_scaling},
                      {"connections_per_node", cfg.reservoir.connections_per_node},
                      {"spectral_radius", cfg.reservoir.spectral_radius},
                      {"leakage_rate", cfg.reservoir.leakage_rate},
                      {"bias", cfg.reservoir.bias_value},
                      {"washout", cfg.reservoir.washout}};
    j["filter"] = {{"order", cfg.filter.order},
                   {"low_hz", cfg.filter.low_cutoff_hz},
                   {"high_hz", cfg.filter.high_cutoff_hz}};

    json policy = json::object();
    for (const auto& [cls, w] : cfg.window_policy) {
        policy[beat_symbol(cls)] = {{"pre_s", w.pre_s}, {"post_s", w.post_s}};
    }
    j["window_policy"] = policy;

    json cv;
    cv["folds"] = cfg.cv.num_folds;
    cv["gammas"] = cfg.cv.gammas;
    cv["taus"] = cfg.cv.taus;
    json wopts = json::array();
    for (const auto& w : cfg.cv.weight_options) wopts.push_back(weight_option_to_json(w));
    cv["weight_options"] = wopts;
    j["cv"] = cv;

    json recs = json::array();
    for (const auto& rec : cfg.records) {
        json r;
        r["id"] = rec.id;
        r["test_slot_min"] = slot_to_json(rec.test_slot);
        if (rec.train_slot) r["train_slot_min"] = slot_to_json(*rec.train_slot);
        if (!rec.class_slots.empty()) {
            json cs = json::object();
            for (const auto& [sym, slot] : rec.class_slots) cs[sym] = slot_to_json(slot);
            r["class_slots_min"] = cs;
        }
        recs.push_back(r);
    }
    j["records"] = recs;
    return j.dump(2) + "\n";
}

PipelineConfig parse_config_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    PipelineConfig cfg = default_config();
    cfg.records.clear();
    cfg.seed_set = false;

    try {
        if (j.contains("data_dir")) cfg.data_dir = j["data_dir"].get<std::string>();
        if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
        if (j.contains("seed")) {
            cfg.seed = j["seed"].get<uint64_t>();
            cfg.seed_set = true;
            cfg.reservoir.seed = cfg.seed;
        }
        if (j.contains("train_minutes")) cfg.train_minutes = j["train_minutes"].get<double>();
        if (j.contains("min_class_train_beats"))
            cfg.min_class_train_beats = j["min_class_train_beats"].get<int>();
        if (j.contains("exclude")) cfg.exclude = j["exclude"].get<std::vector<std::string>>();
        if (j.contains("jobs")) cfg.jobs = j["jobs"].get<int>();

        if (j.contains("reservoir")) {
            const auto& r = j["reservoir"];
            if (r.contains("size")) cfg.reservoir.size = r["size"].get<int>();
            if (r.contains("input_scaling"))
                cfg.reservoir.input_scaling = r["input_scaling"].get<double>();
            if (r.contains("connections_per_node"))
                cfg.reservoir.connections_per_node = r["connections_per_node"].get<int>();
            if (r.contains("spectral_radius"))
                cfg.reservoir.spectral_radius = r["spectral_radius"].get<double>();
            if (r.contains("leakage_rate"))
                cfg.reservoir.leakage_rate = r["leakage_rate"].get<double>();
            if (r.contains("bias")) cfg.reservoir.bias_value = r["bias"].get<double>();
            if (r.contains("washout")) cfg.reservoir.washout = r["washout"].get<int>();
        }
        if (j.contains("filter")) {
            const auto& f = j["filter"];
            if (f.contains("order")) cfg.filter.order = f["order"].get<int>();
            if (f.contains("low_hz")) cfg.filter.low_cutoff_hz = f["low_hz"].get<double>();
            if (f.contains("high_hz")) cfg.filter.high_cutoff_hz = f["high_hz"].get<double>();
        }
        if (j.contains("window_policy")) {
            for (const auto& [sym, w] : j["window_policy"].items()) {
                preprocess::BeatWindow bw;
                bw.pre_s = w.at("pre_s").get<double>();
                bw.post_s = w.at("post_s").get<double>();
                cfg.window_policy[beat_from_symbol(sym)] = bw;
            }
        }
        if (j.contains("cv")) {
            const auto& c = j["cv"];
            if (c.contains("folds")) cfg.cv.num_folds = c["folds"].get<int>();
            if (c.contains("gammas")) cfg.cv.gammas = c["gammas"].get<std::vector<double>>();
            if (c.contains("taus")) cfg.cv.taus = c["taus"].get<std::vector<double>>();
            if (c.contains("weight_options")) {
                cfg.cv.weight_options.clear();
                for (const auto& w : c["weight_options"]) {
                    cfg.cv.weight_options.push_back(weight_option_from_json(w));
                }
            }
        }
        if (j.contains("records")) {
            for (const auto& r : j["records"]) {
                RecordConfig rec;
                rec.id = r.at("id").get<std::string>();
                rec.test_slot = slot_from_json(r.at("test_slot_min"));
                if (r.contains("train_slot_min")) rec.train_slot = slot_from_json(r["train_slot_min"]);
                if (r.contains("class_slots_min")) {
                    for (const auto& [sym, slot] : r["class_slots_min"].items()) {
                        rec.class_slots[sym] = slot_from_json(slot);
                    }
                }
                cfg.records.push_back(std::move(rec));
            }
        } else {
            cfg.records = default_config().records;
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

PipelineConfig load_config(const std::string& path, Log*) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config_json(text);
}

uint64_t config_hash(const PipelineConfig& config) {
    const std::string s = config_to_json(config);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace esn
