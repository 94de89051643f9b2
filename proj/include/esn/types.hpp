#pragma once

#include <cstdint>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace esn {

// Heartbeat classes of the MIT-BIH annotation scheme that the classifier
// distinguishes. Every other beat-like annotation collapses to Other.
enum class BeatCode : uint8_t {
    Normal = 0,   // N
    Lbbb,         // L
    Rbbb,         // R
    Apb,          // A
    Pvc,          // V
    FusionVN,     // F
    VFlutter,     // !
    VEscape,      // E
    Paced,        // /
    FusionPN,     // f
    Other,        // Q
};

inline constexpr int kNumBeatCodes = 11;

// Display symbol, matching the MIT-BIH convention where one exists.
const char* beat_symbol(BeatCode c);

// Inverse of beat_symbol; throws std::invalid_argument on unknown symbols.
BeatCode beat_from_symbol(const std::string& sym);

// All codes in canonical order (the order used for class_order construction).
const std::vector<BeatCode>& all_beat_codes();

// ---------------------------------------------------------------------------
// Error types

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input bytes/text; carries a human-readable location.
struct ParseError : Error {
    using Error::Error;
};

struct UnsupportedFormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct IntegrityError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ParamError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Warning sink. Warnings never abort a run; they are collected so the CLI can
// persist them into the run manifest. Thread safe.

class Log {
public:
    explicit Log(bool echo_to_stderr = true) : echo_(echo_to_stderr) {}

    void warn(const std::string& msg);
    std::vector<std::string> warnings() const;

private:
    mutable std::mutex mutex_;
    std::vector<std::string> warnings_;
    bool echo_;
};

// Convenience for optional sinks.
void warn_to(Log* log, const std::string& msg);

}  // namespace esn
