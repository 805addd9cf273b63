#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dim/masking.hpp"
#include "dim/motion.hpp"
#include "dim/nn.hpp"
#include "dim/vq.hpp"

namespace dim {

enum class DecodeAlignment {
    // Speaker tokens decoded from the listener-side stream and vice versa.
    Cross,
    // Each role decoded from its own stream.
    Straight,
};

// How predicted code distributions reach the VQ decoder in training.
enum class CodeRelaxation {
    // softmax(logits) x codebook.
    Soft,
    // Forward: codebook[argmax]; backward: gradient of the soft path.
    StraightThrough,
};

struct DIMConfig {
    double mask_p = 50.0;
    double tau = 0.07;
    double lambda1 = 0.1;  // contrastive weight
    double lambda2 = 1.0;  // reconstruction weight
    int model_dim = 256;
    int layers = 8;
    int heads = 8;
    int intermediate = 768;
    int audio_dim = 64;
    double learning_rate = 1e-5;
    double grad_clip = 1.0;
    int epochs = 100;
    int batch_size = 16;
    std::uint64_t seed = 0;

    DecodeAlignment decode_alignment = DecodeAlignment::Cross;
    // Adds the listener-anchored direction to the contrastive loss.
    bool symmetric_contrastive = false;
    // false: predict continuous motion directly, no token head.
    bool use_vq = true;
    // false: skip the joint encoder (no speaker/listener fusion).
    bool joint_encoder = true;
    // Update both VQ decoders during pretraining.
    bool train_vq_decoders = true;
    CodeRelaxation code_relaxation = CodeRelaxation::StraightThrough;

    void validate() const;
};

nlohmann::json to_json(const DIMConfig& c);
DIMConfig dim_config_from_json(const nlohmann::json& j, const std::string& path, DIMConfig base = {});

// Role-specific masked encoders, a joint encoder over the feature-wise
// concatenation, and a joint decoder that reads [role stream ; audio] and
// emits per-token codebook logits for each role. Holds its own copies of the
// speaker and listener VQ models.
//
// Parameter groups (name prefixes):
//   role encoders: in_s, in_l, role_s, role_l, enc_s, enc_l
//   joint encoder: enc_joint
//   decoder:       mask_s, mask_l, dec_role_s, dec_role_l, audio_in,
//                  audio_role, dec, head_s, head_l, cont_s, cont_l
class DIMModel {
public:
    // VQ encoders and codebooks are frozen on construction; the VQ decoders
    // follow config.train_vq_decoders.
    DIMModel(DIMConfig config, VQModel speaker_vq, VQModel listener_vq);

    const DIMConfig& config() const { return config_; }
    DIMConfig& mutable_config() { return config_; }

    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }
    VQModel& vq(Role r) { return r == Role::Speaker ? vq_s_ : vq_l_; }
    const VQModel& vq(Role r) const { return r == Role::Speaker ? vq_s_ : vq_l_; }

    int stride() const { return vq_s_.config().stride; }
    int codebook_size() const { return vq_s_.config().codebook_size; }

    // Which parameters the next training run may update.
    void freeze_all();
    void set_role_encoders_trainable(bool on);
    void set_joint_encoder_trainable(bool on);
    void set_decoder_trainable(bool on);

    struct Layout {
        nn::Linear in_s, in_l, audio_in, head_s, head_l, cont_s, cont_l;
        ad::ParamId role_s, role_l, mask_s, mask_l, dec_role_s, dec_role_l, audio_role;
        nn::TransformerStack enc_s, enc_l, enc_joint, dec;
    };
    const Layout& layout() const { return layout_; }

private:
    DIMConfig config_;
    VQModel vq_s_, vq_l_;
    ad::ParamStore params_;
    Layout layout_;
};

// Seed of the frame mask for one (batch slot, role).
std::uint64_t dim_mask_seed(std::uint64_t seed, std::size_t slot, Role role);

struct ForwardRequest {
    double speaker_mask_p = 50.0;
    double listener_mask_p = 50.0;
    bool speaker_outputs = true;
    bool listener_outputs = true;
    // Build the continuous reconstruction through the VQ decoder.
    bool soft_reconstruction = true;
};

// Graph outputs for one sample. Invalid Vars mean "not requested/absent".
struct SampleGraph {
    ad::Var logits_s, logits_l;        // N x |C| (VQ mode)
    ad::Var recon_s, recon_l;          // T x 56 continuous predictions
    ad::Var pooled_s, pooled_l;        // 1 x d, absent when a role is fully masked
    MaskMap mask_s, mask_l;
    std::vector<bool> token_mask_s, token_mask_l;
};

SampleGraph dim_sample_graph(ad::Tape& t, DIMModel& model, const DyadicSample& sample, const MaskMap& mask_s,
                             const MaskMap& mask_l, const ForwardRequest& req);

// Value-level result of dim_forward for one sample.
struct SampleForward {
    Matrix logits_s, logits_l;           // empty when absent
    Matrix soft_recon_s, soft_recon_l;   // differentiable-path predictions
    Matrix hard_s, hard_l;               // Dec_VQ(argmax logits), T x 56
    RowVector pooled_s, pooled_l;        // size 0 when a role is fully masked
    MaskMap mask_s, mask_l;
};

struct DIMForward {
    std::vector<SampleForward> samples;
    Matrix pooled_s, pooled_l;  // batch x d (rows of samples with a visible frame)
};

// Masks both roles at config().mask_p with independent seeded masks
// (dim_mask_seed(seed, slot, role)) and runs the full model.
DIMForward dim_forward(DIMModel& model, const std::vector<DyadicSample>& batch, std::uint64_t seed);

// Continuous motion from hard token choices (argmax of logits rows).
MotionSequence decode_hard(const DIMModel& model, Role role, const Matrix& logits, Eigen::Index length);
std::vector<int> argmax_rows(const Matrix& logits);

struct TokenTargets {
    TokenSequence speaker, listener;
};

// Discrete targets from the frozen VQ encoders.
TokenTargets prepare_targets(const DIMModel& model, const DyadicSample& sample);

// -L_c of the speaker-anchored contrastive objective:
//   -1/N sum_i log( exp(s_i.l_i/tau) / sum_k exp(s_i.l_k/tau) )
double contrastive_loss(const Matrix& pooled_s, const Matrix& pooled_l, double tau);
ad::Var contrastive_graph(ad::Tape& t, ad::Var pooled_s, ad::Var pooled_l, double tau, bool symmetric);

struct DIMLosses {
    double contrastive = 0.0;
    double rec_s = 0.0;
    double rec_l = 0.0;
    double total = 0.0;
};

// Inputs of the loss at value level (one sample).
struct DIMLossInputs {
    Matrix logits_s, logits_l;          // N x |C|
    Matrix pred_s, pred_l;              // T x 56
    Matrix speaker, listener;           // T x 56 ground truth
    std::vector<int> targets_s, targets_l;
    MaskMap mask_s, mask_l;
    int stride = 2;
};

// Per role: mean CE over masked tokens (natural log) + mean over masked
// frames of the squared L2 error; each averaged over the batch.
// total = l1*Lc + l2*(rec_s+rec_l).
DIMLosses dim_losses(const std::vector<DIMLossInputs>& batch, const Matrix& pooled_s, const Matrix& pooled_l,
                     double tau, double lambda1, double lambda2, bool use_vq = true);

struct BatchLossGraph {
    ad::Var contrastive, rec_s, rec_l, total;
};

// Loss graph over a batch with explicit per-sample masks. Roles whose
// weight is zero are skipped (fine-tuning uses only one role).
BatchLossGraph dim_batch_loss_graph(ad::Tape& t, DIMModel& model, const std::vector<DyadicSample>& batch,
                                    const std::vector<TokenTargets>& targets, const std::vector<MaskMap>& masks_s,
                                    const std::vector<MaskMap>& masks_l, const ForwardRequest& req,
                                    double lambda1, double lambda2);

void save_dim(const DIMModel& model, const std::filesystem::path& dir, const nlohmann::json& extra = {});
DIMModel load_dim(const std::filesystem::path& dir);
std::string dim_checkpoint_hash(const DIMModel& model);

}  // namespace dim
