#include "dim/pretrain.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dim/checkpoint.hpp"
#include "dim/error.hpp"

namespace dim {

void FreezeAudit::add(std::string label, const ad::ParamStore& store, std::string prefix) {
    groups_.push_back(Group{std::move(label), &store, std::move(prefix)});
    snapshots_.push_back(store);
}

std::vector<std::string> FreezeAudit::changed() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < groups_.size(); ++i) {
        if (!params_equal(snapshots_[i], *groups_[i].store, groups_[i].prefix)) out.push_back(groups_[i].label);
    }
    return out;
}

void FreezeAudit::check(const std::string& when) const {
    const auto bad = changed();
    if (bad.empty()) return;
    std::string names;
    for (const auto& b : bad) names += (names.empty() ? "" : ", ") + b;
    throw Error("freeze contract violated " + when + ": " + names);
}

void write_loss_csv(const std::vector<LossRow>& rows, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << "step,total,L_c,L_rec_s,L_rec_l\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g\n", r.step, r.total, r.contrastive, r.rec_s,
                      r.rec_l);
        out << buf;
    }
}

std::uint64_t batch_mask_seed(std::uint64_t seed, int epoch, std::size_t batch_index) {
    return mix_seed(seed, {0x7072, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batch_index)});
}

PretrainResult pretrain(DIMModel& model, const std::vector<DyadicSample>& train, const PretrainOptions& options) {
    if (train.empty()) throw InvalidArgument("pretrain: empty training set");
    const DIMConfig& cfg = model.config();

    std::vector<TokenTargets> targets;
    targets.reserve(train.size());
    for (const auto& s : train) targets.push_back(prepare_targets(model, s));

    FreezeAudit audit;
    audit.add("speaker VQ encoder", model.vq(Role::Speaker).params(), "enc.");
    audit.add("speaker VQ codebook", model.vq(Role::Speaker).params(), "codebook");
    audit.add("listener VQ encoder", model.vq(Role::Listener).params(), "enc.");
    audit.add("listener VQ codebook", model.vq(Role::Listener).params(), "codebook");
    if (!cfg.train_vq_decoders) {
        audit.add("speaker VQ decoder", model.vq(Role::Speaker).params(), "dec.");
        audit.add("listener VQ decoder", model.vq(Role::Listener).params(), "dec.");
    }

    Adam opt({&model.params(), &model.vq(Role::Speaker).params(), &model.vq(Role::Listener).params()},
             AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.grad_clip});
    PretrainResult result;
    std::vector<std::size_t> order(train.size());
    const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(mix_seed(cfg.seed, {0x6f72646572, static_cast<std::uint64_t>(epoch)}));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);

        double epoch_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += B, ++batches) {
            const std::size_t end = std::min(order.size(), start + B);
            const std::uint64_t mseed = batch_mask_seed(cfg.seed, epoch, batches);
            std::vector<DyadicSample> batch;
            std::vector<TokenTargets> tg;
            std::vector<MaskMap> ms, ml;
            for (std::size_t k = start; k < end; ++k) {
                const DyadicSample& s = train[order[k]];
                const auto T = static_cast<std::size_t>(s.length());
                batch.push_back(s);
                tg.push_back(targets[order[k]]);
                ms.push_back(uniform_mask(T, cfg.mask_p, dim_mask_seed(mseed, k - start, Role::Speaker)));
                ml.push_back(uniform_mask(T, cfg.mask_p, dim_mask_seed(mseed, k - start, Role::Listener)));
            }
            ad::Tape t;
            const BatchLossGraph g =
                dim_batch_loss_graph(t, model, batch, tg, ms, ml, ForwardRequest{}, cfg.lambda1, cfg.lambda2);
            LossRow row{++step, epoch, t.scalar(g.total), t.scalar(g.contrastive), t.scalar(g.rec_s),
                        t.scalar(g.rec_l)};
            if (!std::isfinite(row.total)) {
                throw DivergenceError("pretrain: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step));
            }
            opt.zero_grad();
            t.backward(g.total);
            opt.step();
            result.steps.push_back(row);
            epoch_total += row.total;
        }
        const double mean_loss = epoch_total / double(batches);
        result.epoch_loss.push_back(mean_loss);

        FreezeAuditRecord rec;
        rec.epoch = epoch;
        for (const auto& g : audit.changed()) rec.groups.push_back(g);
        rec.passed = rec.groups.empty();
        result.audits.push_back(rec);
        audit.check("after pretraining epoch " + std::to_string(epoch));

        if (!options.checkpoint_dir.empty()) {
            const nlohmann::json extra{{"epoch", epoch}, {"epoch_loss", result.epoch_loss}};
            save_dim(model, options.checkpoint_dir / "latest", extra);
            if (options.keep_epoch_checkpoints) {
                char name[32];
                std::snprintf(name, sizeof name, "epoch_%03d", epoch);
                save_dim(model, options.checkpoint_dir / name, extra);
            }
            write_loss_csv(result.steps, options.checkpoint_dir / "losses.csv");
        }
        if (options.on_epoch) options.on_epoch(epoch, mean_loss);
    }
    round_params_to_float32(model.params());
    round_params_to_float32(model.vq(Role::Speaker).params());
    round_params_to_float32(model.vq(Role::Listener).params());
    audit.check("after float32 rounding");
    return result;
}

double masked_token_accuracy(DIMModel& model, const std::vector<DyadicSample>& samples, double mask_p,
                             std::uint64_t seed) {
    if (!model.config().use_vq) throw InvalidArgument("masked_token_accuracy: model has no token heads");
    long correct = 0, total = 0;
    for (std::size_t b = 0; b < samples.size(); ++b) {
        const DyadicSample& s = samples[b];
        const auto T = static_cast<std::size_t>(s.length());
        const MaskMap ms = uniform_mask(T, mask_p, dim_mask_seed(seed, b, Role::Speaker));
        const MaskMap ml = uniform_mask(T, mask_p, dim_mask_seed(seed, b, Role::Listener));
        const TokenTargets tg = prepare_targets(model, s);
        ad::Tape t(false);
        ForwardRequest req;
        req.soft_reconstruction = false;
        const SampleGraph g = dim_sample_graph(t, model, s, ms, ml, req);
        auto score = [&](ad::Var logits, const std::vector<bool>& tm, const std::vector<int>& tokens) {
            const std::vector<int> pred = argmax_rows(t.value(logits));
            for (std::size_t i = 0; i < tm.size(); ++i) {
                if (!tm[i]) continue;
                ++total;
                correct += pred[i] == tokens[i];
            }
        };
        score(g.logits_s, g.token_mask_s, tg.speaker.tokens);
        score(g.logits_l, g.token_mask_l, tg.listener.tokens);
    }
    return total > 0 ? double(correct) / double(total) : 0.0;
}

}  // namespace dim
