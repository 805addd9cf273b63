// Acceptance run: one PASS/FAIL line per criterion. Criteria 5-7 and 9 share
// one trained corpus under the work directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dim/checkpoint.hpp"
#include "dim/error.hpp"
#include "dim/finetune.hpp"
#include "dim/metrics.hpp"
#include "dim/pipeline.hpp"
#include "dim/pretrain.hpp"
#include "dim/rng.hpp"
#include "dim/synth.hpp"
#include "dim/tensor_file.hpp"
#include "dim/vq.hpp"

using namespace dim;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, a);
    return buf;
}

std::string g(double v) { return fmt("%.4g", v); }

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------ criterion 1

Outcome metric_oracles() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> failed;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) failed.push_back(what);
    };

    // Samples {-1, 1} and {-1, 3}: population N(0, 1) against N(1, 4).
    const Matrix a = (Matrix(2, 1) << -1, 1).finished();
    const Matrix b = (Matrix(2, 1) << -1, 3).finished();
    const double fd1 = frechet_distance(a, b);
    expect(std::abs(fd1 - 2.0) < 1e-3, "fd 1-D = " + g(fd1));

    Rng rng(1);
    const Matrix s = random_matrix(rng, 500, 8);
    const double fd0 = frechet_distance(s, s);
    expect(std::abs(fd0) < 1e-6, "fd(A,A) = " + g(fd0));

    const double si = sid(std::vector<double>(40, 1.0 / 40));
    expect(std::abs(si - std::log2(40.0)) < 1e-9, "sid uniform 40 = " + g(si));

    Vector x(6);
    x << 0.5, -1.0, 2.0, 0.1, 0.7, -0.3;
    expect(std::abs(pcc(x, x) - 1.0) < 1e-12, "pcc(x,x)");

    const Matrix sp = random_matrix(rng, 40, 4), li = random_matrix(rng, 40, 4);
    expect(rpcc_dims(li, li, sp) == 0.0 && rpcc(0.3, 0.3) == 0.0, "rpcc self");

    Matrix gt = Matrix::Zero(1, 3), pred = gt;
    pred(0, 0) = 3.0;
    pred(0, 1) = 4.0;
    expect(lip_vertex_error(pred, gt, {0}) == 5.0, "lve 3-4-5");

    const double secs = seconds_since(t0);
    expect(secs < 10.0, "runtime");
    std::string detail = "fd1D=" + g(fd1) + " fdAA=" + g(fd0) + " sid40=" + fmt("%.10f", si) + " " +
                         fmt("%.2fs", secs);
    for (const auto& f : failed) detail += " [failed: " + f + "]";
    return {failed.empty(), detail};
}

// ------------------------------------------------------------ criterion 2

Outcome quantizer_agreement() {
    VQConfig c;
    c.codebook_size = 32;
    c.code_dim = 8;
    c.hidden_dim = 16;
    c.heads = 2;
    c.ffn_dim = 32;
    VQModel m(Role::Speaker, c);
    Rng rng(2);
    const int cases = 10000;
    int agree = 0;
    for (int i = 0; i < cases; ++i) {
        m.codebook() = random_matrix(rng, c.codebook_size, c.code_dim);
        const MotionSequence motion(Matrix(0.5 * random_matrix(rng, c.stride, kMotionDim)));
        const EncodeResult e = vq_encode_const(m, motion);
        const RowVector z = e.latents.row(0);
        int best = 0;
        double best_d = 1e300;
        for (int k = 0; k < c.codebook_size; ++k) {
            double d = 0.0;
            for (int j = 0; j < c.code_dim; ++j) {
                const double diff = z(j) - m.codebook()(k, j);
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        agree += e.tokens.tokens[0] == best;
    }
    return {agree == cases, std::to_string(agree) + "/" + std::to_string(cases) + " agree"};
}

// ------------------------------------------------------------ criterion 3

struct GradStats {
    int checked = 0;
    int within = 0;
    double worst = 0.0;
};

// Central differences at h = 1e-3 on `samples` random entries per parameter.
GradStats finite_difference(std::vector<ad::ParamStore*> stores, const std::function<double()>& loss, int samples,
                            std::uint64_t seed) {
    const double h = 1e-3;
    GradStats st;
    Rng pick(seed);
    for (ad::ParamStore* store : stores) {
        for (auto& p : store->all()) {
            if (!p.trainable) continue;
            for (int s = 0; s < samples; ++s) {
                const auto i = static_cast<Eigen::Index>(pick.uniform_index(static_cast<std::uint64_t>(p.value.size())));
                const double keep = p.value.data()[i];
                p.value.data()[i] = keep + h;
                const double up = loss();
                p.value.data()[i] = keep - h;
                const double down = loss();
                p.value.data()[i] = keep;
                const double fd = (up - down) / (2 * h);
                const double an = p.grad.data()[i];
                const double diff = std::abs(fd - an);
                const double rel = diff < 1e-9 ? 0.0 : diff / std::max(std::abs(fd), std::abs(an));
                ++st.checked;
                st.within += rel < 1e-4;
                st.worst = std::max(st.worst, rel);
            }
        }
    }
    return st;
}

VQConfig tiny_vq() {
    VQConfig c;
    c.codebook_size = 8;
    c.code_dim = 8;
    c.hidden_dim = 16;
    c.heads = 2;
    c.ffn_dim = 32;
    return c;
}

GradStats vq_gradients() {
    SynthConfig sc;
    sc.n_clips = 1;
    sc.length = 6;
    sc.lag = 1;
    const Matrix x = synth_dyads(sc)[0].listener.frames();
    VQModel m(Role::Listener, tiny_vq());
    // Tokens and stop-gradient operands frozen at the reference point: the
    // loss is then smooth in every parameter.
    VQFrozenState st;
    {
        ad::Tape t(false);
        const VQLossGraph gr = vq_loss_graph(t, m, x);
        st.tokens = gr.tokens;
        st.latents = t.value(gr.latents);
        st.quantized = t.value(gr.quantized);
    }
    m.params().zero_grad();
    {
        ad::Tape t;
        t.backward(vq_loss_graph(t, m, x, &st).total);
    }
    return finite_difference({&m.params()}, [&] {
        ad::Tape t(false);
        return t.scalar(vq_loss_graph(t, m, x, &st).total);
    }, 3, 31);
}

GradStats dim_gradients() {
    DIMConfig c;
    c.model_dim = 16;
    c.layers = 1;
    c.heads = 2;
    c.intermediate = 32;
    c.audio_dim = 8;
    c.code_relaxation = CodeRelaxation::Soft;  // the differentiable path
    DIMModel m(c, VQModel(Role::Speaker, tiny_vq()), VQModel(Role::Listener, tiny_vq()));
    SynthConfig sc;
    sc.n_clips = 2;
    sc.length = 8;
    sc.lag = 1;
    sc.audio_dim = 8;
    const auto batch = synth_dyads(sc);
    std::vector<TokenTargets> targets;
    std::vector<MaskMap> ms, ml;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        targets.push_back(prepare_targets(m, batch[i]));
        ms.push_back(uniform_mask(8, 50, 100 + i));
        ml.push_back(uniform_mask(8, 50, 200 + i));
    }
    auto loss = [&](bool grad) {
        ad::Tape t(grad);
        const BatchLossGraph gr = dim_batch_loss_graph(t, m, batch, targets, ms, ml, ForwardRequest{}, 0.1, 1.0);
        if (grad) t.backward(gr.total);
        return t.scalar(gr.total);
    };
    m.params().zero_grad();
    m.vq(Role::Speaker).params().zero_grad();
    m.vq(Role::Listener).params().zero_grad();
    loss(true);
    return finite_difference({&m.params(), &m.vq(Role::Listener).params()}, [&] { return loss(false); }, 2, 37);
}

Outcome gradient_checks() {
    const auto t0 = std::chrono::steady_clock::now();
    const GradStats v = vq_gradients();
    const GradStats d = dim_gradients();
    const double secs = seconds_since(t0);
    auto ok = [](const GradStats& s) { return s.checked > 0 && s.within >= 0.95 * s.checked && s.worst < 1e-2; };
    auto show = [](const char* name, const GradStats& s) {
        return std::string(name) + " " + std::to_string(s.within) + "/" + std::to_string(s.checked) +
               " within 1e-4, worst " + g(s.worst);
    };
    return {ok(v) && ok(d) && secs < 120.0, show("vq", v) + "; " + show("dim", d) + "; " + fmt("%.1fs", secs)};
}

// ------------------------------------------------------------ criterion 4

Outcome vq_learning() {
    const auto t0 = std::chrono::steady_clock::now();
    SynthConfig sc;
    sc.n_clips = 20;
    sc.length = 64;
    sc.seed = 0;
    std::vector<MotionSequence> data;
    for (const auto& s : synth_dyads(sc)) data.push_back(s.listener);
    VQConfig c;
    c.steps = 3000;
    c.seed = 0;
    VQModel m(Role::Listener, c);
    const VQTrainResult r = train_vq(m, data);
    const double reduction = 1.0 - r.final_recon_mse / r.initial_recon_mse;
    const double util = codebook_utilization(m);
    const double secs = seconds_since(t0);
    return {reduction >= 0.8 && util >= 0.1 && secs < 300.0,
            "recon " + g(r.initial_recon_mse) + " -> " + g(r.final_recon_mse) + " (" + fmt("%.1f%%", 100 * reduction) +
                " reduction), utilization " + g(util) + ", " + fmt("%.1fs", secs)};
}

// --------------------------------------------------------- criteria 5-9

struct Corpus {
    RunConfig cfg;
    PretrainResult pretrain;
    FinetuneResult finetune;
    double pretrain_secs = 0.0;
};

Corpus build_corpus(const fs::path& config, const fs::path& root) {
    Corpus c;
    c.cfg = load_run_config(config);
    c.cfg.root = root;
    c.cfg.plots = false;
    fs::remove_all(root);
    const auto t0 = std::chrono::steady_clock::now();
    cmd_synth(c.cfg);
    cmd_train_vq(c.cfg, Role::Speaker);
    cmd_train_vq(c.cfg, Role::Listener);
    c.pretrain = cmd_pretrain(c.cfg);
    c.pretrain_secs = seconds_since(t0);
    return c;
}

Outcome pretraining_signal(Corpus& c) {
    DIMModel m = load_dim(c.cfg.ckpt_path() / "dim");
    const auto test = load_dataset(c.cfg.data_path() / "test" / "manifest.json");
    const double acc = masked_token_accuracy(m, test, c.cfg.dim.mask_p, c.cfg.dim.seed);
    const double chance = 1.0 / m.codebook_size();
    return {acc >= 10.0 * chance && c.pretrain_secs < 900.0,
            "held-out masked-token accuracy " + g(acc) + " = " + fmt("%.1f", acc / chance) + "x chance (" +
                std::to_string(test.size()) + " clips), synth+VQ+pretrain " + fmt("%.0fs", c.pretrain_secs)};
}

Outcome ablation_directions(Corpus& c) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto train = load_dataset(c.cfg.data_path() / "train" / "manifest.json");
    const auto test = load_dataset(c.cfg.data_path() / "test" / "manifest.json");
    const VQModel vs = load_vq(c.cfg.ckpt_path() / "vq_speaker");
    const VQModel vl = load_vq(c.cfg.ckpt_path() / "vq_listener");
    std::vector<ArmSpec> arms;
    for (const auto& a : table3_arms()) {
        if (a.name == "full" || a.name == "no_dim" || a.name == "no_dec_vq" || a.name == "no_l_c") arms.push_back(a);
    }
    const int repeats = 3;
    const auto results = run_ablation(c.cfg, arms, vs, vl, train, test, repeats);
    fs::create_directories(c.cfg.out_path());
    write_ablation_csv(results, c.cfg.out_path() / "ablation.csv", c.cfg.out_path() / "ablation_runs.csv");

    auto find = [&](const std::string& name, int rep) -> const ArmResult& {
        for (const auto& r : results) {
            if (r.spec.name == name && r.repeat == rep) return r;
        }
        throw Error("missing ablation arm " + name);
    };
    int wa = 0, wb = 0, wc = 0;
    std::ostringstream runs;
    for (int rep = 0; rep < repeats; ++rep) {
        const ArmResult& full = find("full", rep);
        const ArmResult& scratch = find("no_dim", rep);
        const ArmResult& frozen = find("no_dec_vq", rep);
        const ArmResult& no_lc = find("no_l_c", rep);
        wa += full.mse <= scratch.mse;
        wb += full.fd <= frozen.fd;
        wc += full.fd <= no_lc.fd;
        runs << " | r" << rep << " mse " << g(full.mse) << " vs scratch " << g(scratch.mse) << ", fd " << g(full.fd)
             << " vs frozen-dec " << g(frozen.fd) << " vs no-Lc " << g(no_lc.fd);
    }
    const int need = repeats / 2 + 1;
    const bool a = wa >= need, b = wb >= need, cc = wc >= need;
    std::string detail = std::string("(a) pretrained<=scratch MSE ") + std::to_string(wa) + "/3 " +
                         (a ? "ok" : "FAIL") + "; (b) unfrozen<=frozen dec FD " + std::to_string(wb) + "/3 " +
                         (b ? "ok" : "FAIL") + "; (c) full<=no-Lc FD " + std::to_string(wc) + "/3 " +
                         (cc ? "ok" : "FAIL") + "; " + fmt("%.0fs", seconds_since(t0)) + runs.str();
    return {a && b && cc, detail};
}

std::pair<double, double> fd_mse_56(const MotionCorpus& gen, const MotionCorpus& gt) {
    Eigen::Index rows = 0;
    for (const auto& [id, m] : gt) rows += m.length();
    Matrix a(rows, kMotionDim), b(rows, kMotionDim);
    Eigen::Index r = 0;
    for (const auto& [id, m] : gt) {
        a.middleRows(r, m.length()) = gen.at(id).frames();
        b.middleRows(r, m.length()) = m.frames();
        r += m.length();
    }
    return {frechet_distance(a, b), mse(a, b)};
}

MotionCorpus load_generated(const fs::path& dir) {
    std::ifstream in(dir / "index.json");
    const auto index = nlohmann::json::parse(in);
    MotionCorpus out;
    for (const auto& id : index.at("clips")) {
        const std::string clip = id.get<std::string>();
        out.emplace(clip, MotionSequence(load_matrix(dir / "clips" / (clip + ".dimt"))));
    }
    return out;
}

Outcome generation_sanity(Corpus& c) {
    const auto t0 = std::chrono::steady_clock::now();
    c.finetune = cmd_finetune(c.cfg, FinetuneTask::Listener);
    const fs::path gen_dir = cmd_generate(c.cfg, FinetuneTask::Listener, Split::Test);
    const fs::path base = c.cfg.out_path() / "generated";
    const auto test = load_dataset(c.cfg.data_path() / "test" / "manifest.json");
    const MotionCorpus gt = corpus_of(test, Role::Listener);

    std::ostringstream detail;
    std::map<std::string, std::pair<double, double>> scores;
    for (const char* name : {"listener_test", "baseline_random_test", "baseline_mirror_test", "baseline_nearest_test"}) {
        const fs::path dir = base / name;
        cmd_evaluate(c.cfg, dir, name);
        scores[name] = fd_mse_56(load_generated(dir), gt);
        detail << name << " FD " << g(scores[name].first) << " MSE " << g(scores[name].second) << "; ";
    }
    const auto& gen = scores["listener_test"];
    const auto& rnd = scores["baseline_random_test"];
    detail << fmt("%.0fs", seconds_since(t0));
    (void)gen_dir;
    return {gen.first < rnd.first && gen.second < rnd.second, detail.str()};
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome smoke_determinism(const fs::path& config, const fs::path& work) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<fs::path> roots{work / "smoke_a", work / "smoke_b"};
    for (const auto& root : roots) {
        RunConfig cfg = load_run_config(config);
        cfg.root = root;
        cfg.plots = false;
        fs::remove_all(root);
        cmd_synth(cfg);
        cmd_train_vq(cfg, Role::Speaker);
        cmd_train_vq(cfg, Role::Listener);
        cmd_pretrain(cfg);
        cmd_finetune(cfg, FinetuneTask::Listener);
        cmd_evaluate(cfg, cmd_generate(cfg, FinetuneTask::Listener, Split::Test), "listener");
        cmd_evaluate(cfg, cfg.out_path() / "generated" / "baseline_random_test", "random");
    }
    int dimt = 0, reports = 0, differ = 0;
    for (const auto& e : fs::recursive_directory_iterator(roots[0])) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), roots[0]);
        const bool is_dimt = rel.extension() == ".dimt";
        const bool is_report = rel.parent_path().filename() == "reports" && rel.extension() == ".json";
        if (!is_dimt && !is_report) continue;
        dimt += is_dimt;
        reports += is_report;
        const fs::path other = roots[1] / rel;
        differ += !fs::exists(other) || file_bytes(e.path()) != file_bytes(other);
    }
    return {differ == 0 && dimt > 0 && reports > 0,
            std::to_string(dimt) + " DIMT files and " + std::to_string(reports) + " report JSON compared, " +
                std::to_string(differ) + " differ; " + fmt("%.0fs", seconds_since(t0))};
}

Outcome freeze_audits(const Corpus& c) {
    int epochs = 0, failed = 0;
    std::set<std::string> groups;
    for (const auto* list : {&c.pretrain.audits, &c.finetune.audits}) {
        for (const auto& a : *list) {
            ++epochs;
            failed += !a.passed;
        }
    }
    const bool covered = c.pretrain.audits.size() == static_cast<std::size_t>(c.cfg.dim.epochs) &&
                         c.finetune.audits.size() == static_cast<std::size_t>(c.cfg.finetune.epochs);
    return {failed == 0 && covered,
            std::to_string(epochs) + " epoch audits (" + std::to_string(c.pretrain.audits.size()) + " pretraining, " +
                std::to_string(c.finetune.audits.size()) + " fine-tuning), " + std::to_string(failed) + " failed"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string work = (fs::temp_directory_path() / "dim_acceptance").string();
    std::string configs = DIM_CONFIG_DIR;
    std::vector<int> only;
    app.add_option("--work", work, "scratch directory");
    app.add_option("--configs", configs, "directory with smoke.json and acceptance.json");
    app.add_option("--only", only, "criteria to run")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
    int failures = 0;
    auto report = [&](int n, const std::function<Outcome()>& run) {
        if (!wanted(n)) return;
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("CRITERION %d %s: %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    };

    report(1, metric_oracles);
    report(2, quantizer_agreement);
    report(3, gradient_checks);
    report(4, vq_learning);

    const bool need_corpus = wanted(5) || wanted(6) || wanted(7) || wanted(9);
    Corpus corpus;
    std::string corpus_error;
    if (need_corpus) {
        try {
            corpus = build_corpus(fs::path(configs) / "acceptance.json", fs::path(work) / "acceptance");
        } catch (const std::exception& e) {
            corpus_error = e.what();
        }
    }
    auto with_corpus = [&](const std::function<Outcome(Corpus&)>& f) {
        return [&, f]() -> Outcome {
            if (!corpus_error.empty()) return {false, "corpus build failed: " + corpus_error};
            return f(corpus);
        };
    };
    report(5, with_corpus(pretraining_signal));
    report(6, with_corpus(ablation_directions));
    report(7, with_corpus(generation_sanity));
    report(8, [&] { return smoke_determinism(fs::path(configs) / "smoke.json", work); });
    // Fine-tuning audits come from criterion 7's run.
    report(9, with_corpus([&](Corpus& c) {
        if (c.finetune.audits.empty()) c.finetune = cmd_finetune(c.cfg, FinetuneTask::Listener);
        return freeze_audits(c);
    }));

    std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "SOME FAILED", failures);
    return failures == 0 ? 0 : 1;
}
