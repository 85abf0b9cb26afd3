#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "met/preprocess.hpp"

namespace met {

inline constexpr int kSampleFormatVersion = 1;

/// A sample as stored on disk, with the manifest fields that are not part of
/// the in-memory Sample.
struct SampleRecord {
    Sample sample;
    nlohmann::json config;         // preprocessing config echo
    std::vector<long> raw_labels;  // dense class id -> label as written in the source files
};

/// Container layout: 8-byte magic, u64 manifest length, JSON manifest, then the
/// little-endian arrays at the offsets the manifest lists.
void write_sample(std::ostream& out, const SampleRecord& record);
void write_sample(const std::filesystem::path& path, const SampleRecord& record);
SampleRecord read_sample(std::istream& in);
SampleRecord read_sample(const std::filesystem::path& path);

}  // namespace met
