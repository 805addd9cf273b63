#include "dim/finetune.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "dim/checkpoint.hpp"
#include "dim/error.hpp"
#include "dim/json_fields.hpp"

namespace dim {

using nlohmann::json;

std::string to_string(FinetuneTask t) { return t == FinetuneTask::Listener ? "listener" : "speaker"; }
std::string to_string(FinetuneInit i) { return i == FinetuneInit::Pretrained ? "pretrained" : "scratch"; }

FinetuneTask parse_finetune_task(const std::string& s) {
    if (s == "listener") return FinetuneTask::Listener;
    if (s == "speaker") return FinetuneTask::Speaker;
    throw InvalidArgument("unknown fine-tuning task '" + s + "' (expected listener|speaker)");
}

void FinetuneConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("FinetuneConfig: learning_rate must be > 0");
    if (epochs < 0 || batch_size < 1) throw InvalidArgument("FinetuneConfig: epochs >= 0 and batch_size >= 1");
}

json to_json(const FinetuneConfig& c) {
    return json{{"task", to_string(c.task)},
                {"init", to_string(c.init)},
                {"unfreeze_vq_decoder", c.unfreeze_vq_decoder},
                {"learning_rate", c.learning_rate},
                {"grad_clip", c.grad_clip},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"seed", c.seed}};
}

FinetuneConfig finetune_config_from_json(const json& j, const std::string& path, FinetuneConfig c) {
    FieldReader r(j, path);
    std::string task = to_string(c.task), init = to_string(c.init);
    r.get("task", task);
    r.get("init", init);
    r.get("unfreeze_vq_decoder", c.unfreeze_vq_decoder);
    r.get("learning_rate", c.learning_rate);
    r.get("grad_clip", c.grad_clip);
    r.get("epochs", c.epochs);
    r.get("batch_size", c.batch_size);
    r.get("seed", c.seed);
    r.finish();
    if (task == "listener") {
        c.task = FinetuneTask::Listener;
    } else if (task == "speaker") {
        c.task = FinetuneTask::Speaker;
    } else {
        throw ConfigError(r.child("task") + ": expected 'listener' or 'speaker'");
    }
    if (init == "pretrained") {
        c.init = FinetuneInit::Pretrained;
    } else if (init == "scratch") {
        c.init = FinetuneInit::Scratch;
    } else {
        throw ConfigError(r.child("init") + ": expected 'pretrained' or 'scratch'");
    }
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return c;
}

// ------------------------------------------------------------ fine-tuning

namespace {

FinetuneResult run_finetune(DIMModel& model, const std::vector<DyadicSample>& corpus, const FinetuneConfig& cfg,
                            double p_s, double p_l, const ForwardRequest& req, const FreezeAudit& audit) {
    if (corpus.empty()) throw InvalidArgument("fine-tuning: empty corpus");
    std::vector<TokenTargets> targets;
    for (const auto& s : corpus) targets.push_back(prepare_targets(model, s));

    Adam opt({&model.params(), &model.vq(Role::Speaker).params(), &model.vq(Role::Listener).params()},
             AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.grad_clip});
    FinetuneResult result;
    std::vector<std::size_t> order(corpus.size());
    const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(mix_seed(cfg.seed, {0x6674, static_cast<std::uint64_t>(epoch)}));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
        double epoch_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += B, ++batches) {
            const std::size_t end = std::min(order.size(), start + B);
            std::vector<DyadicSample> batch;
            std::vector<TokenTargets> tg;
            std::vector<MaskMap> ms, ml;
            for (std::size_t k = start; k < end; ++k) {
                const DyadicSample& s = corpus[order[k]];
                const auto T = static_cast<std::size_t>(s.length());
                batch.push_back(s);
                tg.push_back(targets[order[k]]);
                // p = 0 and p = 100 are deterministic; the seed is irrelevant.
                ms.push_back(uniform_mask(T, p_s, 0));
                ml.push_back(uniform_mask(T, p_l, 0));
            }
            ad::Tape t;
            const BatchLossGraph g = dim_batch_loss_graph(t, model, batch, tg, ms, ml, req, 0.0, 1.0);
            LossRow row{++step, epoch, t.scalar(g.total), 0.0, t.scalar(g.rec_s), t.scalar(g.rec_l)};
            if (!std::isfinite(row.total)) {
                throw DivergenceError("fine-tuning: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step));
            }
            opt.zero_grad();
            t.backward(g.total);
            opt.step();
            result.steps.push_back(row);
            epoch_total += row.total;
        }
        result.epoch_loss.push_back(epoch_total / double(batches));
        FreezeAuditRecord rec;
        rec.epoch = epoch;
        rec.groups = audit.changed();
        rec.passed = rec.groups.empty();
        result.audits.push_back(rec);
        audit.check("after fine-tuning epoch " + std::to_string(epoch));
    }
    round_params_to_float32(model.params());
    round_params_to_float32(model.vq(Role::Speaker).params());
    round_params_to_float32(model.vq(Role::Listener).params());
    audit.check("after float32 rounding");
    return result;
}

void add_vq_audits(FreezeAudit& audit, DIMModel& m) {
    audit.add("speaker VQ encoder", m.vq(Role::Speaker).params(), "enc.");
    audit.add("speaker VQ codebook", m.vq(Role::Speaker).params(), "codebook");
    audit.add("listener VQ encoder", m.vq(Role::Listener).params(), "enc.");
    audit.add("listener VQ codebook", m.vq(Role::Listener).params(), "codebook");
}

}  // namespace

GeneratorModel finetune_listener(DIMModel start, const std::vector<DyadicSample>& corpus,
                                 const FinetuneConfig& config, FinetuneResult* result) {
    config.validate();
    if (config.task != FinetuneTask::Listener) throw InvalidArgument("finetune_listener: config.task must be listener");
    GeneratorModel gen{config, std::move(start)};
    DIMModel& m = gen.model;
    m.freeze_all();
    m.params().set_all_trainable(true);
    m.vq(Role::Listener).set_decoder_trainable(config.unfreeze_vq_decoder);

    FreezeAudit audit;
    add_vq_audits(audit, m);
    audit.add("speaker VQ decoder", m.vq(Role::Speaker).params(), "dec.");
    if (!config.unfreeze_vq_decoder) audit.add("listener VQ decoder", m.vq(Role::Listener).params(), "dec.");

    ForwardRequest req;
    req.speaker_outputs = false;
    req.listener_outputs = true;
    FinetuneResult r = run_finetune(m, corpus, config, 0.0, 100.0, req, audit);
    if (result) *result = std::move(r);
    return gen;
}

GeneratorModel finetune_speaker(DIMModel start, const std::vector<DyadicSample>& corpus,
                                const FinetuneConfig& config, FinetuneResult* result) {
    config.validate();
    if (config.task != FinetuneTask::Speaker) throw InvalidArgument("finetune_speaker: config.task must be speaker");
    GeneratorModel gen{config, std::move(start)};
    DIMModel& m = gen.model;
    m.freeze_all();
    m.set_decoder_trainable(true);
    m.vq(Role::Speaker).set_decoder_trainable(config.unfreeze_vq_decoder);

    FreezeAudit audit;
    add_vq_audits(audit, m);
    for (const char* p : {"in_s.", "in_l.", "role_s", "role_l", "enc_s.", "enc_l."}) {
        audit.add(std::string("role encoders (") + p + ")", m.params(), p);
    }
    audit.add("joint encoder", m.params(), "enc_joint.");
    audit.add("listener VQ decoder", m.vq(Role::Listener).params(), "dec.");
    if (!config.unfreeze_vq_decoder) audit.add("speaker VQ decoder", m.vq(Role::Speaker).params(), "dec.");

    ForwardRequest req;
    req.speaker_outputs = true;
    req.listener_outputs = false;
    FinetuneResult r = run_finetune(m, corpus, config, 100.0, 100.0, req, audit);
    if (result) *result = std::move(r);
    return gen;
}

// ------------------------------------------------------------- generation

namespace {

std::vector<int> choose_tokens(const Matrix& logits, const GenerateOptions& opt) {
    if (!logits.allFinite()) throw DivergenceError("generation: non-finite logits");
    if (opt.temperature <= 0.0) return argmax_rows(logits);
    Rng rng(mix_seed(opt.seed, {0x67656e}));
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        RowVector z = logits.row(r) / opt.temperature;
        z.array() -= z.maxCoeff();
        RowVector p = z.array().exp().matrix();
        p /= p.sum();
        const double u = rng.uniform01();
        double acc = 0.0;
        Eigen::Index k = 0;
        for (; k < p.size() - 1; ++k) {
            acc += p(k);
            if (u < acc) break;
        }
        out[std::size_t(r)] = int(k);
    }
    return out;
}

Generation run_generation(const GeneratorModel& gen, const DyadicSample& sample, Role target, double p_s,
                          const GenerateOptions& opt) {
    auto& model = const_cast<DIMModel&>(gen.model);
    const auto T = static_cast<std::size_t>(sample.length());
    ad::Tape t(false);
    ForwardRequest req;
    req.speaker_outputs = target == Role::Speaker;
    req.listener_outputs = target == Role::Listener;
    req.soft_reconstruction = !model.config().use_vq;
    const SampleGraph g =
        dim_sample_graph(t, model, sample, uniform_mask(T, p_s, 0), uniform_mask(T, 100.0, 0), req);
    if (!model.config().use_vq) {
        const Matrix& out = t.value(target == Role::Speaker ? g.recon_s : g.recon_l);
        if (!out.allFinite()) throw DivergenceError("generation: non-finite output");
        return Generation{MotionSequence(out), TokenSequence{}};
    }
    TokenSequence tokens{choose_tokens(t.value(target == Role::Speaker ? g.logits_s : g.logits_l), opt)};
    const MotionSequence full = vq_decode(model.vq(target), tokens);
    return Generation{MotionSequence(full.frames().topRows(sample.length())), std::move(tokens)};
}

}  // namespace

Generation generate_listener_detailed(const GeneratorModel& gen, const MotionSequence& speaker,
                                     const AudioFeatureSequence& audio, const GenerateOptions& options) {
    if (gen.config.task != FinetuneTask::Listener) throw InvalidArgument("generate_listener: not a listener model");
    if (audio.length() != speaker.length()) {
        throw InvalidArgument("generate_listener: audio has " + std::to_string(audio.length()) +
                              " frames but speaker motion has " + std::to_string(speaker.length()));
    }
    // The listener stream is fully masked, so its content is never read.
    DyadicSample s{"query", speaker, MotionSequence(Matrix::Zero(speaker.length(), kMotionDim)), audio};
    return run_generation(gen, s, Role::Listener, 0.0, options);
}

MotionSequence generate_listener(const GeneratorModel& gen, const MotionSequence& speaker,
                                 const AudioFeatureSequence& audio, const GenerateOptions& options) {
    return generate_listener_detailed(gen, speaker, audio, options).motion;
}

Generation generate_speaker_detailed(const GeneratorModel& gen, const AudioFeatureSequence& audio,
                                     const GenerateOptions& options) {
    if (gen.config.task != FinetuneTask::Speaker) throw InvalidArgument("generate_speaker: not a speaker model");
    if (audio.length() < 1) throw InvalidArgument("generate_speaker: empty audio");
    const MotionSequence blank(Matrix::Zero(audio.length(), kMotionDim));
    DyadicSample s{"query", blank, blank, audio};
    return run_generation(gen, s, Role::Speaker, 100.0, options);
}

MotionSequence generate_speaker(const GeneratorModel& gen, const AudioFeatureSequence& audio,
                                const GenerateOptions& options) {
    return generate_speaker_detailed(gen, audio, options).motion;
}

void save_generator(const GeneratorModel& gen, const std::filesystem::path& dir, const FinetuneResult* result) {
    json extra{{"finetune", to_json(gen.config)}};
    if (result) {
        extra["epoch_loss"] = result->epoch_loss;
        write_loss_csv(result->steps, dir / "losses.csv");
    }
    save_dim(gen.model, dir, extra);
}

GeneratorModel load_generator(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw MissingPrerequisite("generator checkpoint not found: " + dir.string());
    const json manifest = json::parse(in);
    if (!manifest.contains("finetune")) throw InvalidArgument(dir.string() + " is not a fine-tuned checkpoint");
    FinetuneConfig cfg = finetune_config_from_json(manifest.at("finetune"), "/finetune");
    return GeneratorModel{cfg, load_dim(dir)};
}

}  // namespace dim
