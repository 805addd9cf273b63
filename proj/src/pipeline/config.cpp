#include <cstdio>
#include <fstream>
#include <sstream>

#include "dim/checkpoint.hpp"
#include "dim/error.hpp"
#include "dim/json_fields.hpp"
#include "dim/pipeline.hpp"

namespace dim {

using nlohmann::json;

namespace {

json synth_to_json(const SynthConfig& c) {
    return json{{"n_clips", c.n_clips},       {"length", c.length},
                {"lag", c.lag},               {"noise", c.noise},
                {"n_modes", c.n_modes},       {"seed", c.seed},
                {"audio_dim", c.audio_dim},   {"n_components", c.n_components},
                {"amplitude", c.amplitude},   {"mode_scale", c.mode_scale},
                {"audio_noise", c.audio_noise}, {"freq_min", c.freq_min},
                {"freq_max", c.freq_max},     {"identity_coupling", c.identity_coupling}};
}

SynthConfig synth_from_json(const json& j, const std::string& path, SynthConfig c) {
    FieldReader r(j, path);
    r.get("n_clips", c.n_clips);
    r.get("length", c.length);
    r.get("lag", c.lag);
    r.get("noise", c.noise);
    r.get("n_modes", c.n_modes);
    r.get("seed", c.seed);
    r.get("audio_dim", c.audio_dim);
    r.get("n_components", c.n_components);
    r.get("amplitude", c.amplitude);
    r.get("mode_scale", c.mode_scale);
    r.get("audio_noise", c.audio_noise);
    r.get("freq_min", c.freq_min);
    r.get("freq_max", c.freq_max);
    r.get("identity_coupling", c.identity_coupling);
    r.finish();
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return c;
}

// 1-based line of a byte offset.
int line_of_offset(const std::string& text, std::size_t offset) {
    int line = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i) line += text[i] == '\n';
    return line;
}

// Line of the innermost key of a JSON pointer, found by scanning for each
// component in turn; 0 when not found.
int line_of_pointer(const std::string& text, const std::string& pointer) {
    std::size_t pos = 0;
    int line = 0;
    std::stringstream ss(pointer);
    std::string part;
    while (std::getline(ss, part, '/')) {
        if (part.empty()) continue;
        const std::string quoted = "\"" + part + "\"";
        std::size_t at = pos;
        while (true) {
            at = text.find(quoted, at);
            if (at == std::string::npos) return line;
            std::size_t k = at + quoted.size();
            while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
            if (k < text.size() && text[k] == ':') break;
            at += quoted.size();
        }
        pos = at + quoted.size();
        line = line_of_offset(text, at);
    }
    return line;
}

std::string located(const std::string& source, int line, const std::string& msg) {
    return line > 0 ? source + ":" + std::to_string(line) + ": " + msg : source + ": " + msg;
}

const char* const kArmFlags[] = {"vq", "dim", "dec_vq", "l_c", "s_l"};

}  // namespace

std::filesystem::path RunConfig::data_path() const {
    const std::filesystem::path p(data_dir);
    return p.is_absolute() ? p : root / p;
}
std::filesystem::path RunConfig::ckpt_path() const {
    const std::filesystem::path p(ckpt_dir);
    return p.is_absolute() ? p : root / p;
}
std::filesystem::path RunConfig::out_path() const {
    const std::filesystem::path p(out_dir);
    return p.is_absolute() ? p : root / p;
}

RunConfig parse_run_config(const std::string& text, const std::string& source,
                           std::optional<std::uint64_t> seed_override) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(located(source, line_of_offset(text, e.byte), std::string("invalid JSON: ") + e.what()));
    }
    RunConfig c;
    try {
        FieldReader r(doc, "");
        r.get("seed", c.seed);
        if (seed_override) c.seed = *seed_override;
        auto section = [&](const char* key) -> const json* {
            if (!r.has(key)) return nullptr;
            const json& v = r.raw(key);
            if (!v.is_object()) throw ConfigError(r.child(key) + ": expected an object");
            return &v;
        };
        auto inherits = [](const json* s, const char* key = "seed") { return !s || !s->contains(key); };

        if (const json* p = section("paths")) {
            FieldReader pr(*p, "/paths");
            pr.get("data_dir", c.data_dir);
            pr.get("ckpt_dir", c.ckpt_dir);
            pr.get("out_dir", c.out_dir);
            pr.finish();
        }
        if (const json* s = section("split")) {
            FieldReader sr(*s, "/split");
            sr.get("test_fraction", c.test_fraction);
            sr.finish();
            if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) {
                throw ConfigError("/split/test_fraction: must be in (0, 1)");
            }
        }
        const json* synth = section("synth");
        if (synth) c.synth = synth_from_json(*synth, "/synth", c.synth);
        if (inherits(synth)) c.synth.seed = c.seed;

        const json* vq = section("vq");
        if (vq) c.vq = vq_config_from_json(*vq, "/vq", c.vq);
        if (inherits(vq)) c.vq.seed = c.seed;

        const json* dim = section("dim");
        if (dim) c.dim = dim_config_from_json(*dim, "/dim", c.dim);
        if (inherits(dim)) c.dim.seed = c.seed;
        if (!dim || !dim->contains("audio_dim")) c.dim.audio_dim = c.synth.audio_dim;

        const json* ft = section("finetune");
        if (ft) c.finetune = finetune_config_from_json(*ft, "/finetune", c.finetune);
        if (inherits(ft)) c.finetune.seed = c.seed;

        const json* met = section("metrics");
        if (met) c.metrics = metric_config_from_json(*met, "/metrics", c.metrics);
        if (inherits(met, "kmeans_seed")) c.metrics.kmeans_seed = c.seed;
        if (inherits(met, "vertex_seed")) c.metrics.vertex_seed = c.seed;

        const json* gen = section("generate");
        if (gen) {
            FieldReader gr(*gen, "/generate");
            gr.get("temperature", c.generate.temperature);
            gr.get("seed", c.generate.seed);
            gr.get("baselines", c.generate.baselines);
            gr.finish();
            if (!(c.generate.temperature >= 0.0)) throw ConfigError("/generate/temperature: must be >= 0");
        }
        if (inherits(gen)) c.generate.seed = c.seed;

        if (const json* ab = section("ablation")) {
            FieldReader ar(*ab, "/ablation");
            ar.get("mode", c.ablation.mode);
            ar.get("repeats", c.ablation.repeats);
            if (ar.has("grid_flags")) {
                const json& flags = ar.raw("grid_flags");
                if (!flags.is_array()) throw ConfigError("/ablation/grid_flags: expected an array of strings");
                c.ablation.grid_flags.clear();
                for (const auto& f : flags) {
                    if (!f.is_string()) throw ConfigError("/ablation/grid_flags: expected an array of strings");
                    const std::string name = f.get<std::string>();
                    bool known = false;
                    for (const char* k : kArmFlags) known = known || name == k;
                    if (!known) throw ConfigError("/ablation/grid_flags: unknown flag '" + name + "'");
                    c.ablation.grid_flags.push_back(name);
                }
            }
            ar.finish();
            if (c.ablation.mode != "table3" && c.ablation.mode != "grid") {
                throw ConfigError("/ablation/mode: expected 'table3' or 'grid'");
            }
            if (c.ablation.repeats < 1) throw ConfigError("/ablation/repeats: must be >= 1");
        }
        r.finish();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        int line = 0;
        if (!msg.empty() && msg[0] == '/') line = line_of_pointer(text, msg.substr(0, msg.find(':')));
        throw ConfigError(located(source, line, msg));
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.string(), seed_override);
}

json to_json(const RunConfig& c) {
    return json{{"seed", c.seed},
                {"paths", {{"data_dir", c.data_dir}, {"ckpt_dir", c.ckpt_dir}, {"out_dir", c.out_dir}}},
                {"split", {{"test_fraction", c.test_fraction}}},
                {"synth", synth_to_json(c.synth)},
                {"vq", to_json(c.vq)},
                {"dim", to_json(c.dim)},
                {"finetune", to_json(c.finetune)},
                {"metrics", to_json(c.metrics)},
                {"generate",
                 {{"temperature", c.generate.temperature},
                  {"seed", c.generate.seed},
                  {"baselines", c.generate.baselines}}},
                {"ablation",
                 {{"mode", c.ablation.mode}, {"repeats", c.ablation.repeats}, {"grid_flags", c.ablation.grid_flags}}}};
}

std::string config_hash(const RunConfig& c) {
    json j = to_json(c);
    j.erase("paths");
    return hex64(fnv1a64(j.dump()));
}

}  // namespace dim
