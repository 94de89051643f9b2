#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "esn/rng.hpp"
#include "esn/wfdb.hpp"
#include "synthetic.hpp"

using namespace esn;
namespace fs = std::filesystem;

namespace {

std::vector<uint8_t> words_to_bytes(const std::vector<uint16_t>& words) {
    std::vector<uint8_t> bytes;
    for (uint16_t w : words) {
        bytes.push_back(static_cast<uint8_t>(w & 0xFF));
        bytes.push_back(static_cast<uint8_t>(w >> 8));
    }
    return bytes;
}

uint16_t ann_word(int type, int increment) {
    return static_cast<uint16_t>((static_cast<unsigned>(type) << 10) | (increment & 0x3FF));
}

fs::path tmp_dir() {
    const auto dir = fs::temp_directory_path() / "esn_test_wfdb";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("header: MIT-BIH style record") {
    const std::string text =
        "100 2 360 650000\n"
        "100.dat 212 200 11 1024 995 -22131 0 MLII\n"
        "100.dat 212 200 11 1024 1011 20052 0 V5\n";
    const auto hdr = wfdb::parse_header(text);
    CHECK(hdr.record_name == "100");
    CHECK(hdr.num_signals == 2);
    CHECK(hdr.sampling_frequency == 360.0);
    CHECK(hdr.num_samples == 650000);
    REQUIRE(hdr.signals.size() == 2);
    CHECK(hdr.signals[0].storage_format == 212);
    CHECK(hdr.signals[0].adc_gain == 200.0);
    CHECK(hdr.signals[0].adc_zero == 1024.0);
    CHECK(hdr.signals[0].initial_value == 995);
    CHECK(hdr.signals[0].checksum == -22131);
    CHECK(hdr.signals[0].description == "MLII");
    CHECK(hdr.signals[1].description == "V5");
}

TEST_CASE("header: gain with baseline and units") {
    const std::string text =
        "r 1 360 1000\n"
        "r.dat 212 200(1000)/mV 11 1024 0 0 0 MLII\n";
    const auto hdr = wfdb::parse_header(text);
    CHECK(hdr.signals[0].adc_gain == 200.0);
    REQUIRE(hdr.signals[0].baseline.has_value());
    CHECK(*hdr.signals[0].baseline == 1000.0);
}

TEST_CASE("header: missing sampling frequency defaults to 250 with a warning") {
    Log log(false);
    const auto hdr = wfdb::parse_header("r 1\nr.dat 212\n", &log);
    CHECK(hdr.sampling_frequency == 250.0);
    CHECK(hdr.signals[0].adc_gain == 200.0);  // WFDB default
    CHECK(hdr.signals[0].adc_zero == 0.0);
    REQUIRE(log.warnings().size() >= 1);
}

TEST_CASE("header: comments and blank lines are skipped") {
    const auto hdr = wfdb::parse_header("# comment\n\nr 1 360 10\nr.dat 212 200 11 0 0 0 0 MLII\n");
    CHECK(hdr.record_name == "r");
}

TEST_CASE("header: malformed input") {
    CHECK_THROWS_AS(wfdb::parse_header(""), ParseError);
    CHECK_THROWS_AS(wfdb::parse_header("100\n"), ParseError);
    CHECK_THROWS_AS(wfdb::parse_header("r 2 360 10\nr.dat 212\n"), ParseError);  // one line short
    CHECK_THROWS_AS(wfdb::parse_header("r x 360 10\n"), ParseError);
}

TEST_CASE("format 212: documented triplets") {
    {
        const uint8_t bytes[] = {0x01, 0x00, 0x00};
        const auto out = wfdb::decode_format212(bytes, 2);
        CHECK(out[0] == std::vector<int>{1});
        CHECK(out[1] == std::vector<int>{0});
    }
    {
        const uint8_t bytes[] = {0xFF, 0x0F, 0x00};
        const auto out = wfdb::decode_format212(bytes, 2);
        CHECK(out[0] == std::vector<int>{-1});  // sign-extended 0xFFF
        CHECK(out[1] == std::vector<int>{0});
    }
    {
        const uint8_t bytes[] = {0x00, 0x00, 0x00};
        const auto out = wfdb::decode_format212(bytes, 2);
        CHECK(out[0] == std::vector<int>{0});
        CHECK(out[1] == std::vector<int>{0});
    }
}

TEST_CASE("format 212: empty input and trailing partial triplet") {
    const auto empty = wfdb::decode_format212(std::span<const uint8_t>(), 2);
    CHECK(empty[0].empty());
    CHECK(empty[1].empty());

    Log log(false);
    const uint8_t bytes[] = {0x01, 0x00, 0x00, 0xAB};  // one spare byte
    const auto out = wfdb::decode_format212(bytes, 2, &log);
    CHECK(out[0].size() == 1);
    CHECK(log.warnings().size() == 1);
}

TEST_CASE("format 212: single-signal interleaving keeps sample order") {
    const uint8_t bytes[] = {0x01, 0x00, 0x02, 0x03, 0x00, 0x04};
    const auto out = wfdb::decode_format212(bytes, 1);
    CHECK(out[0] == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("format 212: round trip and range over random triplets") {
    Rng rng(0xdec0de212);
    std::vector<uint8_t> bytes(3 * 2000);
    for (auto& b : bytes) b = static_cast<uint8_t>(rng.next_below(256));
    const auto decoded = wfdb::decode_format212(bytes, 2);
    for (const auto& ch : decoded) {
        for (int v : ch) {
            CHECK(v >= -2048);
            CHECK(v <= 2047);
        }
    }
    CHECK(testsupport::encode_format212(decoded) == bytes);
}

TEST_CASE("annotations: basic beat stream") {
    // N at 77, then PVC 300 samples later.
    const auto bytes = words_to_bytes({ann_word(1, 77), ann_word(5, 300), 0x0000});
    const auto anns = wfdb::parse_annotations(bytes);
    REQUIRE(anns.size() == 2);
    CHECK(anns[0].sample_index == 77);
    CHECK(anns[0].beat_code == BeatCode::Normal);
    CHECK(anns[1].sample_index == 377);
    CHECK(anns[1].beat_code == BeatCode::Pvc);
}

TEST_CASE("annotations: end-of-file word stops parsing") {
    const auto bytes = words_to_bytes({ann_word(1, 10), 0x0000, ann_word(1, 10)});
    CHECK(wfdb::parse_annotations(bytes).size() == 1);
}

TEST_CASE("annotations: SKIP carries a 4-byte interval") {
    // SKIP of 1000, then PVC with increment 0 -> PVC at cursor + 1000.
    const auto bytes = words_to_bytes({ann_word(1, 50), ann_word(59, 0),
                                       static_cast<uint16_t>(0),     // high word
                                       static_cast<uint16_t>(1000),  // low word
                                       ann_word(5, 0), 0x0000});
    const auto anns = wfdb::parse_annotations(bytes);
    REQUIRE(anns.size() == 2);
    CHECK(anns[1].sample_index == 1050);
    CHECK(anns[1].beat_code == BeatCode::Pvc);
}

TEST_CASE("annotations: NUM/SUB/CHN/AUX bookkeeping") {
    // CHN applies to current and subsequent annotations; AUX data (3 bytes,
    // padded to 4) is skipped; rhythm annotations (28) advance time only.
    std::vector<uint8_t> bytes = words_to_bytes({ann_word(1, 10), ann_word(62, 1)});
    const auto aux = words_to_bytes({ann_word(63, 3)});
    bytes.insert(bytes.end(), aux.begin(), aux.end());
    const uint8_t aux_payload[] = {'a', 'b', 'c', 0};
    bytes.insert(bytes.end(), aux_payload, aux_payload + 4);
    const auto tail = words_to_bytes({ann_word(60, 2), ann_word(61, 1), ann_word(28, 5),
                                      ann_word(1, 7), 0x0000});
    bytes.insert(bytes.end(), tail.begin(), tail.end());

    const auto anns = wfdb::parse_annotations(bytes);
    REQUIRE(anns.size() == 2);
    CHECK(anns[0].channel == 1);  // retroactive CHN
    CHECK(anns[1].channel == 1);
    CHECK(anns[1].sample_index == 10 + 5 + 7);  // rhythm word advanced the cursor
}

TEST_CASE("annotations: unknown type code warns, truncation throws with offset") {
    Log log(false);
    const auto bytes = words_to_bytes({ann_word(1, 10), ann_word(52, 5), ann_word(1, 5), 0x0000});
    const auto anns = wfdb::parse_annotations(bytes, &log);
    CHECK(anns.size() == 2);
    CHECK(anns[1].sample_index == 20);  // unknown word still advances time
    REQUIRE(log.warnings().size() == 1);

    const auto truncated = words_to_bytes({ann_word(59, 0), static_cast<uint16_t>(0)});
    CHECK_THROWS_WITH_AS(
        wfdb::parse_annotations(truncated),
        doctest::Contains("byte offset"), ParseError);
}

TEST_CASE("annotations: non-increasing beat indices are rejected") {
    const auto bytes = words_to_bytes({ann_word(1, 10), ann_word(5, 0), 0x0000});
    CHECK_THROWS_AS(wfdb::parse_annotations(bytes), ParseError);
}

TEST_CASE("synthetic record: load_record round trip") {
    const auto stem = (tmp_dir() / "syn_load").string();
    testsupport::SyntheticSpec spec;
    spec.duration_s = 30.0;
    const auto synth = testsupport::write_synthetic_record(stem, spec);

    Log log(false);
    const auto rec = wfdb::load_record(stem, &log);
    CHECK(rec.header.sampling_frequency == 360.0);
    CHECK(rec.lead2_index() == 0);
    CHECK(rec.signals.size() == 2);
    CHECK(static_cast<int64_t>(rec.signals[0].samples.size()) == rec.header.num_samples);

    // Parser output must match the generation manifest exactly.
    REQUIRE(rec.annotations.size() == synth.manifest.size());
    for (size_t i = 0; i < synth.manifest.size(); ++i) {
        CHECK(rec.annotations[i] == synth.manifest[i]);
    }

    // Millivolt conversion is affine and invertible within rounding.
    for (size_t i = 0; i < 100; ++i) {
        const double mv = rec.signals[0].samples[i];
        const double raw = mv * 200.0 + 1024.0;
        CHECK(std::abs(raw - std::llround(raw)) < 1e-6);
    }
}

TEST_CASE("load_record: corruption is caught") {
    const auto stem_str = (tmp_dir() / "syn_bad").string();
    testsupport::SyntheticSpec spec;
    spec.duration_s = 10.0;
    testsupport::write_synthetic_record(stem_str, spec);

    SUBCASE("missing file") {
        CHECK_THROWS_AS(wfdb::load_record(stem_str + "_absent"), IoError);
    }
    SUBCASE("checksum mismatch") {
        // Flip one data byte.
        std::fstream f(stem_str + ".dat", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(10);
        f.put(static_cast<char>(0x5A));
        f.close();
        CHECK_THROWS_AS(wfdb::load_record(stem_str), IntegrityError);
    }
    SUBCASE("unsupported storage format") {
        std::ofstream(stem_str + ".hea")
            << "syn_bad 1 360 10\nsyn_bad.dat 16 200 11 1024 0 0 0 MLII\n";
        CHECK_THROWS_WITH_AS(wfdb::load_record(stem_str), doctest::Contains("16"),
                             UnsupportedFormatError);
    }
}

TEST_CASE("csv export") {
    wfdb::AnnotatedRecord rec;
    rec.header.sampling_frequency = 360.0;
    rec.header.num_samples = 3;
    wfdb::SignalBuffer buf;
    buf.channel_name = "MLII";
    buf.dt = 1.0 / 360.0;
    buf.samples = {0.5, -0.25, 1.0};
    rec.signals.push_back(buf);
    rec.annotations.push_back(wfdb::BeatAnnotation{1, BeatCode::Pvc, 0});

    const auto csv = wfdb::export_signal_csv(rec, "MLII");
    CHECK(csv == "time_s,amplitude_mV\n"
                 "0.000000,0.500000\n"
                 "0.002778,-0.250000\n"
                 "0.005556,1.000000\n");

    const auto ann_csv = wfdb::export_annotations_csv(rec);
    CHECK(ann_csv == "sample_index,beat_code\n1,V\n");

    CHECK_THROWS_WITH_AS(wfdb::export_signal_csv(rec, "V9"), doctest::Contains("MLII"), Error);

    rec.signals[0].samples.clear();
    CHECK(wfdb::export_signal_csv(rec, "MLII") == "time_s,amplitude_mV\n");
}
