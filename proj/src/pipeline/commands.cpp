#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dim/checkpoint.hpp"
#include "dim/error.hpp"
#include "dim/pipeline.hpp"
#include "dim/plots.hpp"
#include "dim/tensor_file.hpp"

namespace dim {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingPrerequisite("not found: " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    }
}

fs::path split_manifest(const RunConfig& cfg, Split split) {
    return cfg.data_path() / to_string(split) / "manifest.json";
}

std::vector<DyadicSample> load_split(const RunConfig& cfg, Split split) {
    const fs::path m = split_manifest(cfg, split);
    if (!fs::exists(m)) {
        throw MissingPrerequisite("dataset split '" + to_string(split) + "' not found at " + m.string() +
                                  " (run the synth command first)");
    }
    return load_dataset(m);
}

fs::path vq_dir(const RunConfig& cfg, Role role) { return cfg.ckpt_path() / ("vq_" + to_string(role)); }

VQModel require_vq(const RunConfig& cfg, Role role) {
    const fs::path dir = vq_dir(cfg, role);
    if (!fs::exists(dir / "manifest.json")) {
        throw MissingPrerequisite("no " + to_string(role) + " VQ checkpoint at " + dir.string() +
                                  " (run train-vq " + to_string(role) + " first)");
    }
    return load_vq(dir);
}

json audits_json(const std::vector<FreezeAuditRecord>& audits) {
    json a = json::array();
    for (const auto& r : audits) a.push_back({{"epoch", r.epoch}, {"passed", r.passed}, {"changed", r.groups}});
    return a;
}

Role task_role(FinetuneTask t) { return t == FinetuneTask::Listener ? Role::Listener : Role::Speaker; }
Role partner(Role r) { return r == Role::Listener ? Role::Speaker : Role::Listener; }

void write_generated(const fs::path& dir, const std::vector<DyadicSample>& samples, const MotionCorpus& motions,
                     const json& common) {
    fs::create_directories(dir / "clips");
    json index = common;
    index["clips"] = json::array();
    for (const auto& s : samples) {
        const MotionSequence& m = motions.at(s.clip_id);
        save_matrix(m.frames(), dir / "clips" / (s.clip_id + ".dimt"));
        json side{{"clip_id", s.clip_id},
                  {"checkpoint_hash", common.at("checkpoint_hash")},
                  {"seed", common.at("seed")},
                  {"config_hash", common.at("config_hash")},
                  {"data_hash", common.at("data_hash")}};
        write_text(dir / "clips" / (s.clip_id + ".json"), side.dump(2) + "\n");
        index["clips"].push_back(s.clip_id);
    }
    write_text(dir / "index.json", index.dump(2) + "\n");
}

std::vector<double> csv_column(const fs::path& path, const std::string& name, std::vector<double>* xs) {
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line)) return {};
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    const auto it = std::find(cols.begin(), cols.end(), name);
    if (it == cols.end()) return {};
    const std::size_t k = std::size_t(it - cols.begin());
    std::vector<double> out;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string c;
        std::vector<std::string> cells;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (cells.size() <= k) continue;
        out.push_back(std::stod(cells[k]));
        if (xs) xs->push_back(std::stod(cells[0]));
    }
    return out;
}

}  // namespace

std::string dataset_hash(const fs::path& manifest_path) {
    const DatasetManifest m = read_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    std::uint64_t h = fnv1a64(to_string(m.split));
    for (const auto& e : m.samples) {
        h = fnv1a64(e.clip_id, h);
        for (const auto& f : {e.speaker, e.listener, e.audio}) {
            std::ifstream in(base / f, std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            h = fnv1a64(ss.str(), h);
        }
    }
    return hex64(h);
}

MotionCorpus corpus_of(const std::vector<DyadicSample>& samples, Role role) {
    MotionCorpus out;
    for (const auto& s : samples) out.emplace(s.clip_id, role == Role::Speaker ? s.speaker : s.listener);
    return out;
}

MotionCorpus generate_listener_corpus(const GeneratorModel& gen, const std::vector<DyadicSample>& test,
                                      const GenerateOptions& options) {
    MotionCorpus out;
    for (std::size_t i = 0; i < test.size(); ++i) {
        GenerateOptions o = options;
        o.seed = mix_seed(options.seed, {static_cast<std::uint64_t>(i)});
        out.emplace(test[i].clip_id, generate_listener(gen, test[i].speaker, test[i].audio, o));
    }
    return out;
}

// ---------------------------------------------------------------- stages

void cmd_synth(const RunConfig& cfg) {
    const std::vector<DyadicSample> all = synth_dyads(cfg.synth);
    const auto n = static_cast<long>(all.size());
    long n_test = std::lround(cfg.test_fraction * double(n));
    n_test = std::clamp(n_test, n >= 2 ? 1L : 0L, std::max(0L, n - 1));
    const std::vector<DyadicSample> train(all.begin(), all.end() - n_test);
    const std::vector<DyadicSample> test(all.end() - n_test, all.end());
    save_dataset(train, Split::Train, cfg.synth.seed, cfg.data_path() / "train");
    save_dataset(test, Split::Test, cfg.synth.seed, cfg.data_path() / "test");
}

VQTrainResult cmd_train_vq(const RunConfig& cfg, Role role) {
    const auto train = load_split(cfg, Split::Train);
    std::vector<MotionSequence> data;
    for (const auto& s : train) data.push_back(role == Role::Speaker ? s.speaker : s.listener);
    VQModel model(role, cfg.vq);
    const VQTrainResult r = train_vq(model, data);
    const fs::path dir = vq_dir(cfg, role);
    save_vq(model, dir, &r);
    std::string csv = "step,total,recon\n";
    char buf[128];
    for (std::size_t i = 0; i < r.total_curve.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", i + 1, r.total_curve[i], r.recon_curve[i]);
        csv += buf;
    }
    write_text(dir / "losses.csv", csv);
    return r;
}

PretrainResult cmd_pretrain(const RunConfig& cfg) {
    const auto train = load_split(cfg, Split::Train);
    DIMModel model(cfg.dim, require_vq(cfg, Role::Speaker), require_vq(cfg, Role::Listener));
    PretrainOptions opt;
    opt.checkpoint_dir = cfg.ckpt_path() / "dim_epochs";
    const PretrainResult r = pretrain(model, train, opt);
    json extra{{"epochs", cfg.dim.epochs},
               {"epoch_loss", r.epoch_loss},
               {"freeze_audits", audits_json(r.audits)},
               {"config_hash", config_hash(cfg)},
               {"data_hash", dataset_hash(split_manifest(cfg, Split::Train))}};
    if (cfg.dim.use_vq && fs::exists(split_manifest(cfg, Split::Test))) {
        extra["heldout_masked_token_accuracy"] =
            masked_token_accuracy(model, load_split(cfg, Split::Test), cfg.dim.mask_p, cfg.dim.seed);
    }
    const fs::path dir = cfg.ckpt_path() / "dim";
    save_dim(model, dir, extra);
    write_loss_csv(r.steps, dir / "losses.csv");
    return r;
}

FinetuneResult cmd_finetune(const RunConfig& cfg, FinetuneTask task) {
    FinetuneConfig fc = cfg.finetune;
    fc.task = task;
    const auto train = load_split(cfg, Split::Train);
    std::optional<DIMModel> start;
    if (fc.init == FinetuneInit::Pretrained) {
        const fs::path dir = cfg.ckpt_path() / "dim";
        if (!fs::exists(dir / "manifest.json")) {
            throw MissingPrerequisite("no pretrained checkpoint at " + dir.string() + " (run pretrain first)");
        }
        start.emplace(load_dim(dir));
    } else {
        start.emplace(cfg.dim, require_vq(cfg, Role::Speaker), require_vq(cfg, Role::Listener));
    }
    FinetuneResult r;
    GeneratorModel gen = task == FinetuneTask::Listener ? finetune_listener(std::move(*start), train, fc, &r)
                                                        : finetune_speaker(std::move(*start), train, fc, &r);
    save_generator(gen, cfg.ckpt_path() / ("finetune_" + to_string(task)), &r);
    return r;
}

fs::path cmd_generate(const RunConfig& cfg, FinetuneTask task, Split split, const fs::path& checkpoint) {
    const fs::path ckpt = checkpoint.empty() ? cfg.ckpt_path() / ("finetune_" + to_string(task)) : checkpoint;
    if (!fs::exists(ckpt / "manifest.json")) {
        throw MissingPrerequisite("no fine-tuned checkpoint at " + ckpt.string() + " (run finetune " +
                                  to_string(task) + " first)");
    }
    const GeneratorModel gen = load_generator(ckpt);
    if (gen.config.task != task) throw InvalidArgument(ckpt.string() + " was fine-tuned for another task");
    const auto samples = load_split(cfg, split);
    const std::string data_hash = dataset_hash(split_manifest(cfg, split));
    const std::string chash = config_hash(cfg);
    GenerateOptions opt{cfg.generate.temperature, cfg.generate.seed};

    MotionCorpus motions;
    if (task == FinetuneTask::Listener) {
        motions = generate_listener_corpus(gen, samples, opt);
    } else {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            GenerateOptions o = opt;
            o.seed = mix_seed(opt.seed, {static_cast<std::uint64_t>(i)});
            motions.emplace(samples[i].clip_id, generate_speaker(gen, samples[i].audio, o));
        }
    }
    const json common{{"task", to_string(task)},
                      {"split", to_string(split)},
                      {"checkpoint_hash", dim_checkpoint_hash(gen.model)},
                      {"seed", cfg.generate.seed},
                      {"config_hash", chash},
                      {"data_hash", data_hash}};
    const fs::path out = cfg.out_path() / "generated" / (to_string(task) + "_" + to_string(split));
    write_generated(out, samples, motions, common);

    if (task == FinetuneTask::Listener && cfg.generate.baselines) {
        const auto train = load_split(cfg, Split::Train);
        const RandomBaseline random(train, cfg.generate.seed);
        const NearestMotionBaseline nearest(train);
        const MirrorBaseline mirror(5);
        MotionCorpus r, n, m;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& s = samples[i];
            r.emplace(s.clip_id, random(s.length(), i));
            n.emplace(s.clip_id, nearest(s.speaker));
            m.emplace(s.clip_id, mirror(s.speaker));
        }
        for (const auto& [name, corpus] : {std::pair<std::string, const MotionCorpus*>{"random", &r},
                                           {"nearest", &n},
                                           {"mirror", &m}}) {
            json c = common;
            c["checkpoint_hash"] = "baseline:" + name;
            write_generated(cfg.out_path() / "generated" / ("baseline_" + name + "_" + to_string(split)), samples,
                            *corpus, c);
        }
    }
    return out;
}

MetricReport cmd_evaluate(const RunConfig& cfg, const fs::path& generated_dir, const std::string& label,
                          FinetuneTask task, Split split) {
    MotionCorpus generated;
    if (fs::exists(generated_dir / "index.json")) {
        const json index = read_json(generated_dir / "index.json");
        task = parse_finetune_task(index.at("task").get<std::string>());
        split = parse_split(index.at("split").get<std::string>());
        const std::string expected = dataset_hash(split_manifest(cfg, split));
        const std::string recorded = index.at("data_hash").get<std::string>();
        for (const auto& id : index.at("clips")) {
            const std::string clip = id.get<std::string>();
            const json side = read_json(generated_dir / "clips" / (clip + ".json"));
            if ((side.at("data_hash").get<std::string>() != expected || recorded != expected) && !cfg.force) {
                throw ConfigError("data hash mismatch for clip '" + clip + "': generated against " +
                                  side.at("data_hash").get<std::string>() + ", current " + to_string(split) +
                                  " split is " + expected + " (use --force to evaluate anyway)");
            }
            generated.emplace(clip, MotionSequence(load_matrix(generated_dir / "clips" / (clip + ".dimt"))));
        }
    } else if (fs::exists(generated_dir / "manifest.json")) {
        generated = corpus_of(load_dataset(generated_dir / "manifest.json"), task_role(task));
    } else {
        throw MissingPrerequisite("no generated clips at " + generated_dir.string());
    }
    const Role role = task_role(task);
    const auto gt_samples = load_split(cfg, split);
    const auto train = load_split(cfg, Split::Train);
    std::vector<MotionSequence> fit;
    for (const auto& s : train) fit.push_back(role == Role::Speaker ? s.speaker : s.listener);
    const ClusterSet clusters = fit_clusters(fit, cfg.metrics);
    const MetricReport report = evaluate(generated, corpus_of(gt_samples, role), corpus_of(gt_samples, partner(role)),
                                         clusters, cfg.metrics, config_hash(cfg));
    const std::string name = label.empty() ? generated_dir.filename().string() : label;
    const fs::path dir = cfg.out_path() / "reports";
    write_text(dir / (name + ".json"), report.to_json().dump(2) + "\n");
    write_text(dir / (name + ".csv"), MetricReport::csv_header() + "\n" + report.csv_row(name) + "\n");
    return report;
}

fs::path cmd_report(const RunConfig& cfg, const std::vector<fs::path>& reports_in) {
    std::vector<fs::path> reports = reports_in;
    const fs::path report_dir = cfg.out_path() / "reports";
    if (reports.empty() && fs::exists(report_dir)) {
        for (const auto& e : fs::directory_iterator(report_dir)) {
            if (e.path().extension() == ".json") reports.push_back(e.path());
        }
        std::sort(reports.begin(), reports.end());
    }
    if (reports.empty()) throw MissingPrerequisite("no metric reports found under " + report_dir.string());
    std::string table = MetricReport::csv_header() + "\n";
    std::vector<std::string> labels;
    std::vector<double> fd, mse_v;
    for (const auto& p : reports) {
        const MetricReport r = MetricReport::from_json(read_json(p));
        const std::string label = p.stem().string();
        table += r.csv_row(label) + "\n";
        labels.push_back(label);
        fd.push_back(r.fd_exp);
        mse_v.push_back(r.mse_exp);
    }
    const fs::path table_path = cfg.out_path() / "table.csv";
    write_text(table_path, table);
    if (cfg.plots) {
        const fs::path plots = cfg.out_path() / "plots";
        write_text(plots / "fd_exp.svg", svg_bar_chart("FD (expression)", labels, fd));
        write_text(plots / "mse_exp.svg", svg_bar_chart("MSE (expression)", labels, mse_v));
        for (const char* stage : {"vq_speaker", "vq_listener", "dim", "finetune_listener", "finetune_speaker"}) {
            const fs::path csv = cfg.ckpt_path() / stage / "losses.csv";
            if (!fs::exists(csv)) continue;
            Series s{"total", {}, {}};
            s.y = csv_column(csv, "total", &s.x);
            std::vector<Series> series{s};
            write_text(plots / (std::string("loss_") + stage + ".svg"),
                       svg_line_chart(std::string("Training loss: ") + stage, "step", "loss", series));
        }
    }
    return table_path;
}

// -------------------------------------------------------------- ablation

std::vector<ArmSpec> table3_arms() {
    return {
        {"full", true, true, true, true, true},
        {"no_vq", false, true, false, true, true},
        {"no_dim", true, false, true, true, true},
        {"no_dec_vq", true, true, false, true, true},
        {"no_l_c", true, true, true, false, true},
        {"no_l_c_no_s_l", true, true, true, false, false},
    };
}

std::vector<ArmSpec> grid_arms(const std::vector<std::string>& flags) {
    std::vector<ArmSpec> arms;
    const std::size_t k = flags.size();
    for (std::size_t mask = (std::size_t(1) << k); mask-- > 0;) {
        ArmSpec a;
        for (std::size_t i = 0; i < k; ++i) {
            const bool on = (mask >> (k - 1 - i)) & 1;
            const std::string& f = flags[i];
            if (f == "vq") a.vq = on;
            else if (f == "dim") a.dim = on;
            else if (f == "dec_vq") a.dec_vq = on;
            else if (f == "l_c") a.l_c = on;
            else if (f == "s_l") a.s_l = on;
            else throw InvalidArgument("unknown ablation flag '" + f + "'");
            a.name += (a.name.empty() ? "" : ";") + f + "=" + (on ? "1" : "0");
        }
        if (a.name.empty()) a.name = "full";
        arms.push_back(a);
    }
    return arms;
}

std::vector<ArmResult> run_ablation(const RunConfig& cfg, const std::vector<ArmSpec>& arms, const VQModel& speaker_vq,
                                    const VQModel& listener_vq, const std::vector<DyadicSample>& train,
                                    const std::vector<DyadicSample>& test, int repeats) {
    std::vector<MotionSequence> fit;
    for (const auto& s : train) fit.push_back(s.listener);
    const ClusterSet clusters = fit_clusters(fit, cfg.metrics);
    const MotionCorpus gt = corpus_of(test, Role::Listener);
    const MotionCorpus spk = corpus_of(test, Role::Speaker);
    Matrix gt_all(0, kMotionDim);
    for (const auto& [id, m] : gt) {
        gt_all.conservativeResize(gt_all.rows() + m.length(), Eigen::NoChange);
        gt_all.bottomRows(m.length()) = m.frames();
    }
    const std::string chash = config_hash(cfg);

    std::vector<ArmResult> results;
    for (int rep = 0; rep < repeats; ++rep) {
        std::map<std::string, DIMModel> pretrained;
        for (const auto& arm : arms) {
            DIMConfig dc = cfg.dim;
            dc.seed = mix_seed(cfg.dim.seed, {0xab1a, static_cast<std::uint64_t>(rep)});
            dc.use_vq = arm.vq;
            dc.lambda1 = arm.l_c ? cfg.dim.lambda1 : 0.0;
            dc.joint_encoder = arm.s_l;
            DIMModel start(dc, speaker_vq, listener_vq);
            if (arm.dim) {
                const std::string key = std::string(arm.vq ? "v" : "-") + (arm.l_c ? "c" : "-") + (arm.s_l ? "j" : "-");
                auto it = pretrained.find(key);
                if (it == pretrained.end()) {
                    pretrain(start, train);
                    it = pretrained.emplace(key, start).first;
                }
                start = it->second;
            }
            FinetuneConfig fc = cfg.finetune;
            fc.task = FinetuneTask::Listener;
            fc.init = arm.dim ? FinetuneInit::Pretrained : FinetuneInit::Scratch;
            fc.unfreeze_vq_decoder = arm.dec_vq;
            fc.seed = mix_seed(cfg.finetune.seed, {0xab1a, static_cast<std::uint64_t>(rep)});
            const GeneratorModel gen = finetune_listener(std::move(start), train, fc);
            const MotionCorpus out = generate_listener_corpus(gen, test, {0.0, cfg.generate.seed});
            ArmResult r;
            r.spec = arm;
            r.repeat = rep;
            r.report = evaluate(out, gt, spk, clusters, cfg.metrics, chash);
            Matrix gen_all(gt_all.rows(), kMotionDim);
            Eigen::Index row = 0;
            for (const auto& [id, m] : out) {
                gen_all.middleRows(row, m.length()) = m.frames();
                row += m.length();
            }
            r.mse = mse(gen_all, gt_all);
            r.fd = frechet_distance(gen_all, gt_all);
            results.push_back(r);
        }
    }
    return results;
}

void write_ablation_csv(const std::vector<ArmResult>& results, const fs::path& summary, const fs::path& runs) {
    char buf[512];
    std::string r = "name,repeat,vq,dim,dec_vq,l_c,s_l,mse,fd,mse_exp,fd_exp,mse_pose,fd_pose\n";
    struct Acc {
        ArmSpec spec;
        int n = 0;
        double v[6] = {0, 0, 0, 0, 0, 0};
    };
    std::vector<Acc> acc;
    for (const auto& x : results) {
        const ArmSpec& a = x.spec;
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%d,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", a.name.c_str(),
                      x.repeat, a.vq, a.dim, a.dec_vq, a.l_c, a.s_l, x.mse, x.fd, x.report.mse_exp, x.report.fd_exp,
                      x.report.mse_pose, x.report.fd_pose);
        r += buf;
        auto it = std::find_if(acc.begin(), acc.end(), [&](const Acc& q) { return q.spec.name == a.name; });
        if (it == acc.end()) {
            acc.push_back(Acc{a});
            it = acc.end() - 1;
        }
        const double vals[6] = {x.mse, x.fd, x.report.mse_exp, x.report.fd_exp, x.report.mse_pose, x.report.fd_pose};
        for (int k = 0; k < 6; ++k) it->v[k] += vals[k];
        ++it->n;
    }
    std::string s = "name,vq,dim,dec_vq,l_c,s_l,repeats,mse,fd,mse_exp,fd_exp,mse_pose,fd_pose\n";
    for (const auto& q : acc) {
        const ArmSpec& a = q.spec;
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%d,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", a.name.c_str(), a.vq,
                      a.dim, a.dec_vq, a.l_c, a.s_l, q.n, q.v[0] / q.n, q.v[1] / q.n, q.v[2] / q.n, q.v[3] / q.n,
                      q.v[4] / q.n, q.v[5] / q.n);
        s += buf;
    }
    write_text(summary, s);
    write_text(runs, r);
}

fs::path cmd_ablate(const RunConfig& cfg) {
    const auto train = load_split(cfg, Split::Train);
    const auto test = load_split(cfg, Split::Test);
    const VQModel vs = require_vq(cfg, Role::Speaker);
    const VQModel vl = require_vq(cfg, Role::Listener);
    const auto arms = cfg.ablation.mode == "grid" ? grid_arms(cfg.ablation.grid_flags) : table3_arms();
    const auto results = run_ablation(cfg, arms, vs, vl, train, test, cfg.ablation.repeats);
    const fs::path summary = cfg.out_path() / "ablation.csv";
    write_ablation_csv(results, summary, cfg.out_path() / "ablation_runs.csv");
    if (cfg.plots) {
        std::vector<std::string> labels;
        std::vector<double> fd;
        std::map<std::string, std::pair<double, int>> agg;
        for (const auto& r : results) {
            if (!agg.count(r.spec.name)) labels.push_back(r.spec.name);
            agg[r.spec.name].first += r.fd;
            agg[r.spec.name].second += 1;
        }
        for (const auto& l : labels) fd.push_back(agg[l].first / agg[l].second);
        write_text(cfg.out_path() / "plots" / "ablation_fd.svg", svg_bar_chart("Ablation: listener FD", labels, fd));
    }
    return summary;
}

}  // namespace dim
