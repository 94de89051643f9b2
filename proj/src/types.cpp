#include "esn/types.hpp"

#include <array>
#include <cstdio>

namespace esn {

namespace {

struct SymbolEntry {
    BeatCode code;
    const char* symbol;
};

constexpr std::array<SymbolEntry, kNumBeatCodes> kSymbols = {{
    {BeatCode::Normal, "N"},
    {BeatCode::Lbbb, "L"},
    {BeatCode::Rbbb, "R"},
    {BeatCode::Apb, "A"},
    {BeatCode::Pvc, "V"},
    {BeatCode::FusionVN, "F"},
    {BeatCode::VFlutter, "!"},
    {BeatCode::VEscape, "E"},
    {BeatCode::Paced, "/"},
    {BeatCode::FusionPN, "f"},
    {BeatCode::Other, "Q"},
}};

}  // namespace

const char* beat_symbol(BeatCode c) {
    for (const auto& e : kSymbols) {
        if (e.code == c) return e.symbol;
    }
    return "?";
}

BeatCode beat_from_symbol(const std::string& sym) {
    for (const auto& e : kSymbols) {
        if (sym == e.symbol) return e.code;
    }
    throw std::invalid_argument("unknown beat symbol: '" + sym + "'");
}

const std::vector<BeatCode>& all_beat_codes() {
    static const std::vector<BeatCode> codes = [] {
        std::vector<BeatCode> v;
        for (const auto& e : kSymbols) v.push_back(e.code);
        return v;
    }();
    return codes;
}

void Log::warn(const std::string& msg) {
    std::lock_guard<std::mutex> lock(mutex_);
    warnings_.push_back(msg);
    if (echo_) std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

std::vector<std::string> Log::warnings() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return warnings_;
}

void warn_to(Log* log, const std::string& msg) {
    if (log) log->warn(msg);
}

}  // namespace esn
