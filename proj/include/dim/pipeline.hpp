#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dim/dataset.hpp"
#include "dim/dim_model.hpp"
#include "dim/finetune.hpp"
#include "dim/metrics.hpp"
#include "dim/synth.hpp"
#include "dim/vq.hpp"

namespace dim {

struct AblationConfig {
    // "table3": the six fixed rows; "grid": every combination of grid_flags.
    std::string mode = "table3";
    int repeats = 3;
    std::vector<std::string> grid_flags{"dim", "dec_vq", "l_c"};
};

struct GenerateConfig {
    double temperature = 0.0;
    std::uint64_t seed = 0;
    bool baselines = true;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string data_dir = "data";
    std::string ckpt_dir = "ckpt";
    std::string out_dir = "out";
    double test_fraction = 0.2;
    SynthConfig synth;
    VQConfig vq;
    DIMConfig dim;
    FinetuneConfig finetune;
    MetricConfig metrics;
    GenerateConfig generate;
    AblationConfig ablation;

    // Not part of the document: set from the command line.
    std::filesystem::path root = ".";
    bool plots = true;
    bool force = false;

    std::filesystem::path data_path() const;
    std::filesystem::path ckpt_path() const;
    std::filesystem::path out_path() const;
};

// Parses a JSON run configuration. Unknown keys, wrong types and invalid
// values raise ConfigError with the JSON path and the line number in
// `text`. Sections without an explicit "seed" inherit the global seed;
// `seed_override` replaces the global seed before inheritance.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>",
                           std::optional<std::uint64_t> seed_override = std::nullopt);
RunConfig load_run_config(const std::filesystem::path& path,
                          std::optional<std::uint64_t> seed_override = std::nullopt);
nlohmann::json to_json(const RunConfig& c);
// Fingerprint of every setting that affects outputs (paths excluded).
std::string config_hash(const RunConfig& c);

// Fingerprint of the clip files of a dataset manifest.
std::string dataset_hash(const std::filesystem::path& manifest_path);

// ------------------------------------------------------------- commands

void cmd_synth(const RunConfig& cfg);
VQTrainResult cmd_train_vq(const RunConfig& cfg, Role role);
PretrainResult cmd_pretrain(const RunConfig& cfg);
FinetuneResult cmd_finetune(const RunConfig& cfg, FinetuneTask task);
// Writes <out>/generated/<task>_<split>/ and, for the listener task with
// generate.baselines, the random/nearest/mirror baselines next to it.
// Returns the generated directory.
std::filesystem::path cmd_generate(const RunConfig& cfg, FinetuneTask task, Split split,
                                   const std::filesystem::path& checkpoint = {});
// Evaluates a generated directory (or a dataset directory) against the
// ground truth of its split; writes <out>/reports/<label>.{json,csv}.
MetricReport cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& generated_dir,
                          const std::string& label = "", FinetuneTask task = FinetuneTask::Listener,
                          Split split = Split::Test);
// Aggregates reports into <out>/table.csv and, unless plots are off,
// SVG loss curves and metric bars under <out>/plots.
std::filesystem::path cmd_report(const RunConfig& cfg, const std::vector<std::filesystem::path>& reports);

// ------------------------------------------------------------- ablation

// Column flags of the ablation table.
struct ArmSpec {
    std::string name;
    bool vq = true;      // discrete token prediction through the VQ decoder
    bool dim = true;     // initialise from pretraining
    bool dec_vq = true;  // listener VQ decoder trainable during fine-tuning
    bool l_c = true;     // contrastive loss during pretraining
    bool s_l = true;     // joint speaker-listener encoder
};

std::vector<ArmSpec> table3_arms();
std::vector<ArmSpec> grid_arms(const std::vector<std::string>& flags);

struct ArmResult {
    ArmSpec spec;
    int repeat = 0;
    MetricReport report;
    double mse = 0.0;  // all 56 dims
    double fd = 0.0;   // all 56 dims
};

// Runs arms x repeats in memory from trained VQ models. Pretrained models
// are shared between arms that differ only in fine-tuning settings.
std::vector<ArmResult> run_ablation(const RunConfig& cfg, const std::vector<ArmSpec>& arms,
                                    const VQModel& speaker_vq, const VQModel& listener_vq,
                                    const std::vector<DyadicSample>& train, const std::vector<DyadicSample>& test,
                                    int repeats);
void write_ablation_csv(const std::vector<ArmResult>& results, const std::filesystem::path& summary,
                        const std::filesystem::path& runs);
std::filesystem::path cmd_ablate(const RunConfig& cfg);

// Generated listener motion for every clip of `test`.
MotionCorpus generate_listener_corpus(const GeneratorModel& gen, const std::vector<DyadicSample>& test,
                                      const GenerateOptions& options = {});
MotionCorpus corpus_of(const std::vector<DyadicSample>& samples, Role role);

}  // namespace dim
