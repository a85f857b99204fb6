#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "permssl/bytes.hpp"
#include "permssl/error.hpp"
#include "permssl/parallel.hpp"
#include "permssl/rng.hpp"
#include "permssl/spectrogram.hpp"

namespace permssl {

// One synthetic harmonic note with its downstream labels.
struct NoteRecord {
    Spectrogram spectrogram;
    float pitch = 0.0f;        // MIDI-like semitone in [24, 84]
    uint16_t family = 0;       // instrument family in [0, 8)
    uint16_t instrument_id = 0; // instrument in [0, 64)
};

constexpr int kFamilyCount = 8;
constexpr int kInstrumentCount = 64;
constexpr double kPitchLow = 24.0;
constexpr double kPitchHigh = 84.0;
constexpr int kGeneratorVersion = 1;

namespace detail {

// Fixed per-instrument envelope jitters, a function of (family, instrument_id)
// only so the same instrument sounds alike across records and datasets. The
// jitter spread (4x, log-uniform) deliberately dwarfs the per-family envelope
// drift below, so the envelope mostly identifies the instrument and family
// stays decodable chiefly from the harmonic profile along the frequency axis.
inline std::pair<double, double> instrument_jitter(int family, int instrument_id) {
    Rng rng(derive_seed(stream::instrument, static_cast<uint64_t>(family),
                        static_cast<uint64_t>(instrument_id)));
    double jitter_a = 0.5 * std::pow(4.0, rng.next_double());
    double jitter_d = 0.5 * std::pow(4.0, rng.next_double());
    return {jitter_a, jitter_d};
}

} // namespace detail

// Deterministic harmonic-note spectrogram. Families differ in harmonic decay
// and even-harmonic suppression, so family is decodable from the frequency
// axis; pitch sets the fundamental bin; instruments jitter the envelope.
inline NoteRecord synth_note(double pitch, int family, int instrument_id, uint64_t seed,
                             int32_t F, int32_t T) {
    if (!(pitch >= kPitchLow && pitch <= kPitchHigh))
        throw std::invalid_argument("synth_note: pitch outside [24, 84]");
    if (family < 0 || family >= kFamilyCount)
        throw std::invalid_argument("synth_note: family outside [0, 8)");
    if (instrument_id < 0 || instrument_id >= kInstrumentCount)
        throw std::invalid_argument("synth_note: instrument_id outside [0, 64)");
    if (F < 6 || T < 1) throw std::invalid_argument("synth_note: F must be >= 6, T >= 1");

    int f0 = 1 + static_cast<int>(std::lround((pitch - kPitchLow) / (kPitchHigh - kPitchLow) *
                                              (F / 2.0 - 2.0)));
    double alpha = 0.3 + 0.6 * (family / 7.0);
    bool suppress_even = family % 2 == 1;

    std::vector<double> profile(static_cast<size_t>(F), 0.0);
    for (int k = 1; k * f0 < F; ++k) {
        double amp = std::pow(alpha, k - 1);
        if (suppress_even && k % 2 == 0) amp *= 0.1;
        double center = k * f0;
        for (int b = 0; b < F; ++b) {
            double d = b - center;
            profile[static_cast<size_t>(b)] += amp * std::exp(-0.5 * d * d);
        }
    }

    auto [jitter_a, jitter_d] = detail::instrument_jitter(family, instrument_id);
    int tau_a = std::max(1, static_cast<int>(std::lround((2.0 + 0.5 * family) * jitter_a)));
    double tau_d = (8.0 + 1.5 * family) * jitter_d;
    std::vector<double> envelope(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        envelope[static_cast<size_t>(t)] =
            t < tau_a ? (t + 1.0) / tau_a : std::exp(-(t - tau_a + 1.0) / tau_d);
    }

    NoteRecord rec;
    rec.spectrogram = make_spectrogram(F, T);
    rec.pitch = static_cast<float>(pitch);
    rec.family = static_cast<uint16_t>(family);
    rec.instrument_id = static_cast<uint16_t>(instrument_id);
    Rng noise(derive_seed(seed, stream::noise));
    for (int b = 0; b < F; ++b) {
        for (int t = 0; t < T; ++t) {
            double x = profile[static_cast<size_t>(b)] * envelope[static_cast<size_t>(t)] +
                       0.01 * std::abs(noise.next_gaussian());
            rec.spectrogram.at(b, t) = static_cast<float>(std::log1p(10.0 * x));
        }
    }
    return rec;
}

namespace detail {

constexpr char kDatasetMagic[8] = {'P', 'E', 'R', 'M', 'S', 'S', 'L', '1'};

} // namespace detail

// Serializes records to the little-endian container: magic "PERMSSL1",
// u32 count / F / T, then per record f32 pitch, u16 family, u16 instrument_id
// and F*T row-major f32 values.
inline void write_dataset(const std::vector<NoteRecord>& records, const std::string& path) {
    int32_t F = records.empty() ? 0 : records[0].spectrogram.rows;
    int32_t T = records.empty() ? 0 : records[0].spectrogram.cols;
    for (const auto& r : records) {
        if (r.spectrogram.rows != F || r.spectrogram.cols != T)
            throw std::invalid_argument("write_dataset: records disagree on F or T");
    }
    std::string buf;
    buf.reserve(20 + records.size() * (8 + static_cast<size_t>(F) * T * 4));
    detail::append_bytes(buf, detail::kDatasetMagic, 8);
    detail::append_u32(buf, static_cast<uint32_t>(records.size()));
    detail::append_u32(buf, static_cast<uint32_t>(F));
    detail::append_u32(buf, static_cast<uint32_t>(T));
    for (const auto& r : records) {
        detail::append_f32(buf, r.pitch);
        detail::append_u16(buf, r.family);
        detail::append_u16(buf, r.instrument_id);
        detail::append_f32_block(buf, r.spectrogram.data.data(), r.spectrogram.data.size());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failure: " + path);
}

inline std::vector<NoteRecord> load_dataset(const std::string& path) {
    std::string buf = detail::slurp_file(path);
    detail::ByteReader r{buf};
    r.need(8, "magic");
    if (std::memcmp(buf.data(), detail::kDatasetMagic, 8) != 0)
        throw FormatError("bad magic, not a PERMSSL1 dataset", 0);
    r.pos = 8;
    uint32_t count = r.read_u32("record count");
    uint32_t F = r.read_u32("F");
    uint32_t T = r.read_u32("T");
    if (count > 0 && (F == 0 || T == 0))
        throw FormatError("zero spectrogram dimension with nonzero record count", 12);
    std::vector<NoteRecord> records(count);
    for (uint32_t i = 0; i < count; ++i) {
        NoteRecord& rec = records[i];
        rec.pitch = r.read_f32("pitch");
        rec.family = r.read_u16("family");
        uint64_t family_offset = r.pos - 2;
        rec.instrument_id = r.read_u16("instrument_id");
        if (rec.family >= kFamilyCount)
            throw FormatError("family out of range", family_offset);
        if (rec.instrument_id >= kInstrumentCount)
            throw FormatError("instrument_id out of range", family_offset + 2);
        rec.spectrogram.rows = static_cast<int32_t>(F);
        rec.spectrogram.cols = static_cast<int32_t>(T);
        rec.spectrogram.data.resize(static_cast<size_t>(F) * T);
        r.read_f32_block(rec.spectrogram.data.data(), rec.spectrogram.data.size(),
                         "spectrogram values");
    }
    if (r.pos != buf.size())
        throw FormatError("trailing bytes after last record", r.pos);
    return records;
}

// Generation request for one dataset directory: three splits sharing
// dimensions and a master seed.
struct DatasetConfig {
    int train = 2000;
    int valid = 500;
    int test = 500;
    uint64_t seed = 0;
    int32_t F = 64;
    int32_t T = 64;
};

struct SplitInfo {
    std::string path; // resolved, absolute or relative to the working directory
    int count = 0;
};

struct Manifest {
    std::map<std::string, SplitInfo> splits;
    int32_t F = 0;
    int32_t T = 0;
    uint64_t seed = 0;
    int generator_version = kGeneratorVersion;
};

// Stratified draw for one split: family cycles 0..7 so counts divisible by 8
// balance exactly; pitch uniform on [24, 84]; instrument uniform on [0, 64).
// Record i depends only on (seed, split_index, i).
inline std::vector<NoteRecord> make_split(int count, uint64_t seed, int split_index,
                                          int32_t F, int32_t T) {
    if (count < 0) throw std::invalid_argument("make_split: negative count");
    std::vector<NoteRecord> records(static_cast<size_t>(count));
    parallel_for(count, [&](int64_t i) {
        uint64_t rec_seed = derive_seed(seed, stream::data, static_cast<uint64_t>(split_index),
                                        static_cast<uint64_t>(i));
        Rng meta(rec_seed);
        int family = static_cast<int>(i % kFamilyCount);
        double pitch = kPitchLow + (kPitchHigh - kPitchLow) * meta.next_double();
        int instrument = static_cast<int>(meta.next_below(kInstrumentCount));
        records[static_cast<size_t>(i)] = synth_note(pitch, family, instrument, rec_seed, F, T);
    });
    return records;
}

// Writes train/valid/test files plus manifest.json into out_dir. Returns the
// manifest path.
inline std::string make_dataset(const DatasetConfig& config, const std::string& out_dir) {
    if (config.train <= 0 || config.valid <= 0 || config.test <= 0)
        throw std::invalid_argument("make_dataset: split counts must be positive");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create directory " + out_dir + ": " + ec.message());

    const std::pair<const char*, int> splits[] = {
        {"train", config.train}, {"valid", config.valid}, {"test", config.test}};
    nlohmann::json manifest;
    manifest["F"] = config.F;
    manifest["T"] = config.T;
    manifest["seed"] = config.seed;
    manifest["generator_version"] = kGeneratorVersion;
    int split_index = 0;
    for (const auto& [name, count] : splits) {
        auto records = make_split(count, config.seed, split_index, config.F, config.T);
        std::string file_name = std::string(name) + ".bin";
        write_dataset(records, (fs::path(out_dir) / file_name).string());
        manifest["splits"][name] = {{"path", file_name}, {"count", count}};
        ++split_index;
    }
    std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + manifest_path);
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failure: " + manifest_path);
    return manifest_path;
}

// Reads a manifest and resolves split paths relative to its directory.
inline Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed manifest " + path + ": " + e.what());
    }
    Manifest m;
    try {
        m.F = j.at("F").get<int32_t>();
        m.T = j.at("T").get<int32_t>();
        m.seed = j.at("seed").get<uint64_t>();
        m.generator_version = j.at("generator_version").get<int>();
        auto dir = std::filesystem::path(path).parent_path();
        for (const auto& [name, entry] : j.at("splits").items()) {
            SplitInfo info;
            info.path = (dir / entry.at("path").get<std::string>()).string();
            info.count = entry.at("count").get<int>();
            m.splits[name] = info;
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest " + path + " missing fields: " + e.what());
    }
    return m;
}

} // namespace permssl
