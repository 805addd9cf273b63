#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dim/motion.hpp"

namespace dim {

enum class Split { Train, Val, Test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
    std::string clip_id;
    std::string speaker;   // paths relative to the manifest directory
    std::string listener;
    std::string audio;
};

// JSON: {"split", "seed", "samples": [{"clip_id","speaker","listener","audio"}]}
struct DatasetManifest {
    Split split = Split::Train;
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> samples;
};

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Parses and checks the manifest: unique clip ids and every referenced file
// present.
DatasetManifest read_manifest(const std::filesystem::path& path);

// Writes clips as DIMT files under `dir/clips/` plus `dir/manifest.json`.
DatasetManifest save_dataset(const std::vector<DyadicSample>& samples, Split split, std::uint64_t seed,
                             const std::filesystem::path& dir);

// Loads every clip of a manifest; audio is aligned to the motion length.
std::vector<DyadicSample> load_dataset(const std::filesystem::path& manifest_path);

}  // namespace dim
