#include "dim/dataset.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "dim/error.hpp"
#include "dim/tensor_file.hpp"

namespace dim {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw InvalidArgument("unknown split '" + s + "'");
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    json doc;
    doc["split"] = to_string(manifest.split);
    doc["seed"] = manifest.seed;
    doc["samples"] = json::array();
    for (const auto& e : manifest.samples) {
        doc["samples"].push_back(
            {{"clip_id", e.clip_id}, {"speaker", e.speaker}, {"listener", e.listener}, {"audio", e.audio}});
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write manifest " + path.string());
    out << doc.dump(2) << "\n";
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPrerequisite("dataset manifest not found: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw InvalidArgument("manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    try {
        m.split = parse_split(doc.at("split").get<std::string>());
        m.seed = doc.at("seed").get<std::uint64_t>();
        std::set<std::string> seen;
        const fs::path base = path.parent_path();
        for (const auto& s : doc.at("samples")) {
            ManifestEntry e{s.at("clip_id").get<std::string>(), s.at("speaker").get<std::string>(),
                            s.at("listener").get<std::string>(), s.at("audio").get<std::string>()};
            if (!seen.insert(e.clip_id).second) {
                throw InvalidArgument("manifest " + path.string() + ": duplicate clip_id " + e.clip_id);
            }
            for (const auto* f : {&e.speaker, &e.listener, &e.audio}) {
                if (!fs::exists(base / *f)) {
                    throw MissingPrerequisite("manifest " + path.string() + ": missing file " + *f);
                }
            }
            m.samples.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw InvalidArgument("manifest " + path.string() + ": " + e.what());
    }
    return m;
}

DatasetManifest save_dataset(const std::vector<DyadicSample>& samples, Split split, std::uint64_t seed,
                             const fs::path& dir) {
    fs::create_directories(dir / "clips");
    DatasetManifest m{split, seed, {}};
    for (const auto& s : samples) {
        s.validate();
        ManifestEntry e{s.clip_id, "clips/" + s.clip_id + "_speaker.dimt", "clips/" + s.clip_id + "_listener.dimt",
                        "clips/" + s.clip_id + "_audio.dimt"};
        save_matrix(s.speaker.frames(), dir / e.speaker);
        save_matrix(s.listener.frames(), dir / e.listener);
        save_matrix(s.audio.features(), dir / e.audio);
        m.samples.push_back(std::move(e));
    }
    write_manifest(m, dir / "manifest.json");
    return m;
}

std::vector<DyadicSample> load_dataset(const fs::path& manifest_path) {
    const DatasetManifest m = read_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    std::vector<DyadicSample> out;
    out.reserve(m.samples.size());
    for (const auto& e : m.samples) {
        DyadicSample s{e.clip_id, MotionSequence(load_matrix(base / e.speaker)),
                       MotionSequence(load_matrix(base / e.listener)),
                       AudioFeatureSequence(load_matrix(base / e.audio))};
        if (s.speaker.length() != s.listener.length()) {
            throw InvalidArgument("clip " + e.clip_id + ": speaker/listener length mismatch");
        }
        out.push_back(with_aligned_audio(s));
    }
    return out;
}

}  // namespace dim
