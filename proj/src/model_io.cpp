#include "esn/model_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace esn::model {

using nlohmann::json;

namespace {

void write_file(const std::string& path, const std::string& data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!f) throw IoError("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

void save_reservoir(const std::string& path, const reservoir::ReservoirParams& params,
                    const reservoir::ReservoirWeights& weights) {
    json j;
    j["seed"] = weights.seed;
    j["size"] = params.size;
    j["input_scaling"] = params.input_scaling;
    j["connections_per_node"] = params.connections_per_node;
    j["spectral_radius"] = params.spectral_radius;
    j["leakage_rate"] = params.leakage_rate;
    j["bias"] = params.bias_value;
    j["washout"] = params.washout;
    j["achieved_spectral_radius"] = weights.achieved_spectral_radius;
    write_file(path, j.dump(2) + "\n");
}

LoadedReservoir load_reservoir(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    LoadedReservoir out;
    try {
        out.params.seed = j.at("seed").get<uint64_t>();
        out.params.size = j.at("size").get<int>();
        out.params.input_scaling = j.at("input_scaling").get<double>();
        out.params.connections_per_node = j.at("connections_per_node").get<int>();
        out.params.spectral_radius = j.at("spectral_radius").get<double>();
        out.params.leakage_rate = j.at("leakage_rate").get<double>();
        out.params.bias_value = j.at("bias").get<double>();
        out.params.washout = j.at("washout").get<int>();
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    out.weights = reservoir::build_reservoir(out.params);
    const double stored = j.value("achieved_spectral_radius", out.weights.achieved_spectral_radius);
    if (std::abs(stored - out.weights.achieved_spectral_radius) >
        1e-9 * std::max(1.0, std::abs(stored))) {
        throw IntegrityError(path + ": rebuilt reservoir does not match the stored spectral radius");
    }
    return out;
}

void save_readout(const std::string& path, const classify::TrainedReadout& readout) {
    json hdr;
    hdr["rows"] = readout.W.rows();
    hdr["cols"] = readout.W.cols();
    json order = json::array();
    for (BeatCode c : readout.class_order) order.push_back(beat_symbol(c));
    hdr["class_order"] = order;
    json per_class = json::array();
    for (size_t i = 0; i < readout.hyper_per_class.size(); ++i) {
        const auto& h = readout.hyper_per_class[i];
        json e;
        e["class"] = beat_symbol(readout.class_order[i]);
        e["gamma"] = h.gamma;
        e["tau_s"] = h.tau_s;
        e["cv_f1"] = h.cv_f1;
        if (h.robust) {
            e["robust"] = {{"a", h.robust->a}, {"s", h.robust->s}};
        } else {
            e["robust"] = nullptr;
        }
        per_class.push_back(e);
    }
    hdr["per_class"] = per_class;

    std::string blob = hdr.dump() + "\n";
    const size_t n = static_cast<size_t>(readout.W.rows() * readout.W.cols());
    std::string payload(n * sizeof(double), '\0');
    // Row-major payload, independent of Eigen's storage order.
    size_t off = 0;
    for (Eigen::Index r = 0; r < readout.W.rows(); ++r) {
        for (Eigen::Index c = 0; c < readout.W.cols(); ++c) {
            const double v = readout.W(r, c);
            std::memcpy(payload.data() + off, &v, sizeof(double));
            off += sizeof(double);
        }
    }
    write_file(path, blob + payload);
}

classify::TrainedReadout load_readout(const std::string& path) {
    const std::string data = read_file(path);
    const auto nl = data.find('\n');
    if (nl == std::string::npos) throw ParseError(path + ": missing header line");
    json hdr;
    try {
        hdr = json::parse(data.substr(0, nl));
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }

    classify::TrainedReadout out;
    try {
        const Eigen::Index rows = hdr.at("rows").get<Eigen::Index>();
        const Eigen::Index cols = hdr.at("cols").get<Eigen::Index>();
        for (const auto& sym : hdr.at("class_order")) {
            out.class_order.push_back(beat_from_symbol(sym.get<std::string>()));
        }
        if (static_cast<Eigen::Index>(out.class_order.size()) != rows) {
            throw ParseError(path + ": class_order length does not match row count");
        }
        for (const auto& e : hdr.at("per_class")) {
            classify::ClassHyper h;
            h.gamma = e.at("gamma").get<double>();
            h.tau_s = e.at("tau_s").get<double>();
            h.cv_f1 = e.value("cv_f1", 0.0);
            if (e.contains("robust") && !e["robust"].is_null()) {
                readout::RobustScaling rb;
                rb.a = e["robust"].at("a").get<double>();
                rb.s = e["robust"].at("s").get<double>();
                h.robust = rb;
            }
            out.hyper_per_class.push_back(h);
        }

        const size_t need = static_cast<size_t>(rows * cols) * sizeof(double);
        if (data.size() - nl - 1 != need) {
            throw IntegrityError(path + ": payload size mismatch (" +
                                 std::to_string(data.size() - nl - 1) + " bytes, expected " +
                                 std::to_string(need) + ")");
        }
        out.W.resize(rows, cols);
        size_t off = nl + 1;
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                double v;
                std::memcpy(&v, data.data() + off, sizeof(double));
                out.W(r, c) = v;
                off += sizeof(double);
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return out;
}

}  // namespace esn::model
