#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dim/autograd.hpp"
#include "dim/motion.hpp"
#include "dim/nn.hpp"
#include "dim/optim.hpp"

namespace dim {

enum class Role { Speaker, Listener };
std::string to_string(Role r);
Role parse_role(const std::string& s);

struct VQConfig {
    int codebook_size = 256;
    int code_dim = 128;
    int stride = 2;        // frames per token
    double beta = 0.25;    // commitment weight
    double gamma = 1.0;    // codebook-loss weight
    int hidden_dim = 64;
    int depth = 1;         // transformer blocks in encoder and in decoder
    int heads = 4;
    int ffn_dim = 128;
    double learning_rate = 1e-4;
    double grad_clip = 1.0;
    int steps = 3000;
    int batch_size = 4;
    // "data": initialise entries from encoder outputs of the training set;
    // "uniform": U(-1/|C|, 1/|C|).
    std::string codebook_init = "data";
    std::uint64_t seed = 0;

    void validate() const;
};

// Discrete codes z for one motion sequence; ceil(T / stride) entries.
struct TokenSequence {
    std::vector<int> tokens;
};

// Encoder -> nearest-entry quantiser -> decoder for one role.
//
// Parameter names: "enc.*" encoder, "codebook" quantiser table
// (|C| x code_dim), "dec.*" decoder.
class VQModel {
public:
    VQModel(Role role, VQConfig config);

    Role role() const { return role_; }
    const VQConfig& config() const { return config_; }

    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }

    const Matrix& codebook() const { return params_[codebook_].value; }
    Matrix& codebook() { return params_[codebook_].value; }
    ad::ParamId codebook_id() const { return codebook_; }

    const std::vector<std::uint64_t>& usage_counts() const { return usage_; }
    void record_usage(const std::vector<int>& tokens);
    void reset_usage();
    void set_usage_counts(std::vector<std::uint64_t> counts);

    // Graph pieces. `frames` is T x 56; the encoder right-pads by repeating
    // the last frame up to a multiple of the stride.
    ad::Var encode_graph(ad::Tape& t, const Matrix& frames);
    // latents: N x code_dim -> (N * stride) x 56, truncated to `length`
    // rows when length > 0.
    ad::Var decode_graph(ad::Tape& t, ad::Var latents, Eigen::Index length = 0);

    Eigen::Index token_count(Eigen::Index frames) const;

    // Makes the encoder and codebook (the quantisation path) trainable or
    // frozen; the decoder is toggled separately.
    void set_encoder_trainable(bool on);
    void set_decoder_trainable(bool on);

private:
    Role role_;
    VQConfig config_;
    ad::ParamStore params_;
    nn::Linear enc_in_, enc_out_, dec_in_, dec_out_;
    nn::TransformerStack enc_stack_, dec_stack_;
    ad::ParamId codebook_;
    std::vector<std::uint64_t> usage_;
};

// argmin_k ||latent_row - entries_k||^2, lowest index on ties.
std::vector<int> quantize(const Matrix& latents, const Matrix& entries);

struct EncodeResult {
    Matrix latents;  // ceil(T/w) x code_dim
    TokenSequence tokens;
};

// Encodes and quantises; updates the model's usage counters.
EncodeResult vq_encode(VQModel& model, const MotionSequence& motion);
// Same without touching the usage counters.
EncodeResult vq_encode_const(const VQModel& model, const MotionSequence& motion);

// Decodes to stride * len(tokens) frames.
MotionSequence vq_decode(const VQModel& model, const TokenSequence& tokens);
// Encode then decode, truncated back to the input length.
MotionSequence vq_reconstruct(const VQModel& model, const MotionSequence& motion);

struct VQLosses {
    double recon = 0.0;
    double codebook = 0.0;
    double total = 0.0;
};

// Values frozen at a reference point. When supplied to vq_loss_graph, the
// stop-gradient operands and the selected entries are taken from here, which
// turns the loss into an ordinary differentiable function whose gradient at
// the reference point equals the straight-through gradient.
struct VQFrozenState {
    std::vector<int> tokens;
    Matrix latents;    // E(x) at the reference point
    Matrix quantized;  // q at the reference point
};

struct VQLossGraph {
    ad::Var recon, codebook, total;
    ad::Var latents, quantized, decoded;
    std::vector<int> tokens;
};

// recon = mean over frames and dims of (L - L_hat)^2;
// codebook = mean over latent rows of ||sg[E] - q||^2 + beta ||sg[q] - E||^2;
// total = recon + gamma * codebook.
VQLossGraph vq_loss_graph(ad::Tape& t, VQModel& model, const Matrix& frames, const VQFrozenState* frozen = nullptr);

VQLosses vq_losses(VQModel& model, const MotionSequence& motion);

struct VQTrainResult {
    std::vector<double> total_curve;
    std::vector<double> recon_curve;
    double initial_recon_mse = 0.0;
    double final_recon_mse = 0.0;
};

// Seeded, deterministic Adam training. Parameters are rounded to float32 at
// the end so that a checkpoint reproduces the model bit-exactly; usage
// counters are reset and repopulated over `data`.
VQTrainResult train_vq(VQModel& model, const std::vector<MotionSequence>& data);

// Mean per-element reconstruction MSE of vq_reconstruct over `data`.
double reconstruction_mse(const VQModel& model, const std::vector<MotionSequence>& data);

// Fraction of codebook entries with a non-zero usage count.
double codebook_utilization(const VQModel& model);

void save_vq(const VQModel& model, const std::filesystem::path& dir, const VQTrainResult* train = nullptr);
VQModel load_vq(const std::filesystem::path& dir);

}  // namespace dim

#include <json.hpp>

namespace dim {
nlohmann::json to_json(const VQConfig& c);
// Strict: unknown keys and wrong types raise ConfigError naming `path`.
VQConfig vq_config_from_json(const nlohmann::json& j, const std::string& path, VQConfig base = {});
}  // namespace dim
