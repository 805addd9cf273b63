#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dim/dim_model.hpp"

namespace dim {

// Snapshot of parameter groups that must not change; check() compares
// bit-for-bit against the snapshot.
class FreezeAudit {
public:
    struct Group {
        std::string label;
        const ad::ParamStore* store;
        std::string prefix;
    };

    void add(std::string label, const ad::ParamStore& store, std::string prefix);
    // Labels of groups that changed since the snapshot.
    std::vector<std::string> changed() const;
    // Throws Error naming the groups that changed.
    void check(const std::string& when) const;
    bool empty() const { return groups_.empty(); }

private:
    std::vector<Group> groups_;
    std::vector<ad::ParamStore> snapshots_;
};

struct FreezeAuditRecord {
    int epoch = 0;
    std::vector<std::string> groups;
    bool passed = true;
};

struct LossRow {
    long step = 0;
    int epoch = 0;
    double total = 0.0;
    double contrastive = 0.0;
    double rec_s = 0.0;
    double rec_l = 0.0;
};

void write_loss_csv(const std::vector<LossRow>& rows, const std::filesystem::path& path);

struct PretrainOptions {
    // When set, the model is written to <dir>/latest after every epoch and
    // to <dir>/epoch_NNN as well when keep_epoch_checkpoints is on.
    std::filesystem::path checkpoint_dir;
    bool keep_epoch_checkpoints = false;
    std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct PretrainResult {
    std::vector<LossRow> steps;
    std::vector<double> epoch_loss;  // mean total loss per epoch
    std::vector<FreezeAuditRecord> audits;
};

// Seeded masked pretraining over `train` for config().epochs epochs.
// Per epoch: sample order is a seeded permutation, masks are drawn per
// (epoch, batch, slot, role). VQ encoders and codebooks are audited for
// bit-equality after every epoch. Parameters are rounded to float32 at the
// end.
PretrainResult pretrain(DIMModel& model, const std::vector<DyadicSample>& train, const PretrainOptions& options = {});

// Seed used for the masks of one training batch.
std::uint64_t batch_mask_seed(std::uint64_t seed, int epoch, std::size_t batch_index);

// Top-1 accuracy of the token heads on masked tokens of both roles, masks
// drawn at `mask_p` with dim_mask_seed(seed, clip index, role).
double masked_token_accuracy(DIMModel& model, const std::vector<DyadicSample>& samples, double mask_p,
                             std::uint64_t seed);

}  // namespace dim
