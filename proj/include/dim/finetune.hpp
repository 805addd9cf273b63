#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dim/dim_model.hpp"
#include "dim/pretrain.hpp"

namespace dim {

enum class FinetuneTask { Listener, Speaker };
enum class FinetuneInit { Pretrained, Scratch };

std::string to_string(FinetuneTask t);
std::string to_string(FinetuneInit i);
FinetuneTask parse_finetune_task(const std::string& s);

struct FinetuneConfig {
    FinetuneTask task = FinetuneTask::Listener;
    FinetuneInit init = FinetuneInit::Pretrained;
    // Listener task: listener VQ decoder trainable. Speaker task: speaker
    // VQ decoder trainable.
    bool unfreeze_vq_decoder = true;
    double learning_rate = 1e-5;
    double grad_clip = 1.0;
    int epochs = 20;
    int batch_size = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const FinetuneConfig& c);
FinetuneConfig finetune_config_from_json(const nlohmann::json& j, const std::string& path, FinetuneConfig base = {});

struct GeneratorModel {
    FinetuneConfig config;
    DIMModel model;
};

struct FinetuneResult {
    std::vector<LossRow> steps;
    std::vector<double> epoch_loss;
    std::vector<FreezeAuditRecord> audits;
};

// Speaker unmasked (p_s = 0), listener fully masked (p_l = 100); trained on
// the listener reconstruction loss only. VQ encoders stay frozen; the
// listener VQ decoder trains iff unfreeze_vq_decoder. `start` is either a
// pretrained model or a freshly initialised one (config.init only labels
// the run).
GeneratorModel finetune_listener(DIMModel start, const std::vector<DyadicSample>& corpus,
                                 const FinetuneConfig& config, FinetuneResult* result = nullptr);

// Both motion streams fully masked so audio alone drives the decoder.
// Only the decoder group and the speaker VQ decoder train.
GeneratorModel finetune_speaker(DIMModel start, const std::vector<DyadicSample>& corpus,
                                const FinetuneConfig& config, FinetuneResult* result = nullptr);

struct GenerateOptions {
    // 0: greedy argmax. > 0: sample tokens from softmax(logits / temperature).
    double temperature = 0.0;
    std::uint64_t seed = 0;
};

struct Generation {
    MotionSequence motion;
    TokenSequence tokens;
};

Generation generate_listener_detailed(const GeneratorModel& gen, const MotionSequence& speaker,
                                     const AudioFeatureSequence& audio, const GenerateOptions& options = {});
MotionSequence generate_listener(const GeneratorModel& gen, const MotionSequence& speaker,
                                 const AudioFeatureSequence& audio, const GenerateOptions& options = {});

Generation generate_speaker_detailed(const GeneratorModel& gen, const AudioFeatureSequence& audio,
                                     const GenerateOptions& options = {});
MotionSequence generate_speaker(const GeneratorModel& gen, const AudioFeatureSequence& audio,
                                const GenerateOptions& options = {});

void save_generator(const GeneratorModel& gen, const std::filesystem::path& dir, const FinetuneResult* result = nullptr);
GeneratorModel load_generator(const std::filesystem::path& dir);

// ------------------------------------------------------------ baselines

// A training listener clip with Gaussian noise of sigma_fraction times the
// per-dimension training std. The clip is chosen per query from the seed.
class RandomBaseline {
public:
    RandomBaseline(const std::vector<DyadicSample>& corpus, std::uint64_t seed, double sigma_fraction = 0.05);
    MotionSequence operator()(Eigen::Index length, std::size_t query_index) const;

private:
    std::vector<Matrix> listeners_;
    RowVector noise_sd_;
    std::uint64_t seed_;
};

// Listener motion of the training speaker closest in mean-pooled L2.
class NearestMotionBaseline {
public:
    explicit NearestMotionBaseline(const std::vector<DyadicSample>& corpus);
    MotionSequence operator()(const MotionSequence& speaker) const;
    std::size_t nearest_index(const MotionSequence& speaker) const;

private:
    std::vector<RowVector> speaker_means_;
    std::vector<Matrix> listeners_;
};

// Centered moving average of the speaker motion (window clipped at the
// sequence ends).
class MirrorBaseline {
public:
    explicit MirrorBaseline(int window = 5);
    MotionSequence operator()(const MotionSequence& speaker) const;

private:
    int window_;
};

// Mean training motion of one role repeated over `length` frames.
MotionSequence mean_motion_baseline(const std::vector<DyadicSample>& corpus, Role role, Eigen::Index length);

}  // namespace dim
