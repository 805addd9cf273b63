#include "dim/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include <Eigen/Eigenvalues>

#include "dim/error.hpp"
#include "dim/json_fields.hpp"
#include "dim/rng.hpp"

namespace dim {

using nlohmann::json;

// ----------------------------------------------------------------- FD

GaussianStats gaussian_stats(const Matrix& samples) {
    if (samples.cols() < 1) throw InvalidArgument("gaussian_stats: dimension must be >= 1");
    if (samples.rows() < 2) throw InvalidArgument("gaussian_stats: need at least 2 samples");
    GaussianStats g;
    g.mu = samples.colwise().mean();
    const Matrix centered = samples.rowwise() - g.mu;
    g.cov = (centered.transpose() * centered) / double(samples.rows());
    return g;
}

namespace {

Matrix sym_sqrt(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    const Vector lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

double trace_sqrt_product(const Matrix& a, const Matrix& b) {
    const Matrix s = sym_sqrt(a);
    Matrix m = s * b * s;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.mu.size() != b.mu.size() || a.mu.size() == 0) throw InvalidArgument("frechet_distance: dimension mismatch");
    const Eigen::Index d = a.mu.size();
    const Matrix I = Matrix::Identity(d, d);
    const Matrix ca = a.cov + 1e-6 * I;
    const Matrix cb = b.cov + 1e-6 * I;
    const double tr_sqrt = 0.5 * (trace_sqrt_product(ca, cb) + trace_sqrt_product(cb, ca));
    double fd = (a.mu - b.mu).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;
    if (fd < 0.0 && fd > -1e-6) fd = 0.0;
    return fd;
}

double frechet_distance(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw InvalidArgument("frechet_distance: dimension mismatch");
    return frechet_distance(gaussian_stats(a), gaussian_stats(b));
}

double paired_fd(const Matrix& gen_listener, const Matrix& speaker, const Matrix& gt_listener) {
    if (gen_listener.rows() != speaker.rows() || gt_listener.rows() != speaker.rows() ||
        gen_listener.cols() != gt_listener.cols()) {
        throw InvalidArgument("paired_fd: length mismatch");
    }
    Matrix g(speaker.rows(), gen_listener.cols() + speaker.cols());
    Matrix r(speaker.rows(), gen_listener.cols() + speaker.cols());
    g << gen_listener, speaker;
    r << gt_listener, speaker;
    return frechet_distance(g, r);
}

// ------------------------------------------------------ simple statistics

double mse(const Matrix& pred, const Matrix& gt) {
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw InvalidArgument("mse: shape mismatch");
    if (pred.size() == 0) throw InvalidArgument("mse: empty input");
    return (pred - gt).squaredNorm() / double(pred.size());
}

double variation(const Matrix& seq) {
    if (seq.rows() < 1 || seq.cols() < 1) throw InvalidArgument("variation: empty sequence");
    const RowVector mu = seq.colwise().mean();
    return (seq.rowwise() - mu).array().square().sum() / double(seq.rows()) / double(seq.cols());
}

// ---------------------------------------------------------------- k-means

namespace {

// Index of the first entry whose running sum exceeds u * total; the last
// positive-weight entry when rounding leaves u * total at the very end.
std::size_t draw_weighted(const std::vector<double>& w, double u) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    const double target = u * total;
    double acc = 0.0;
    std::size_t last_positive = w.size();
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] <= 0.0) continue;
        acc += w[i];
        last_positive = i;
        if (acc > target) return i;
    }
    return last_positive;
}

}  // namespace

std::vector<int> kmeans_assign(const ClusterModel& model, const Matrix& data) {
    if (data.cols() != model.centroids.cols()) throw InvalidArgument("kmeans_assign: dimension mismatch");
    std::vector<int> labels(static_cast<std::size_t>(data.rows()));
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_k = 0;
        for (Eigen::Index k = 0; k < model.centroids.rows(); ++k) {
            const double d = (data.row(i) - model.centroids.row(k)).squaredNorm();
            if (d < best) {
                best = d;
                best_k = int(k);
            }
        }
        labels[std::size_t(i)] = best_k;
    }
    return labels;
}

ClusterModel kmeans_fit(const Matrix& data, int K, int iters, std::uint64_t seed) {
    const Eigen::Index N = data.rows();
    if (K < 1) throw InvalidArgument("kmeans_fit: K must be >= 1");
    if (N < K) throw InvalidArgument("kmeans_fit: need at least K points");
    if (iters < 0) throw InvalidArgument("kmeans_fit: iters must be >= 0");
    Rng rng(mix_seed(seed, {0x6b6d}));
    ClusterModel m;
    m.K = K;
    m.fit_seed = seed;
    m.centroids.resize(K, data.cols());

    std::vector<double> w(static_cast<std::size_t>(N), 1.0);
    std::vector<double> nearest(static_cast<std::size_t>(N), std::numeric_limits<double>::infinity());
    for (int k = 0; k < K; ++k) {
        std::size_t pick = draw_weighted(w, rng.uniform01());
        if (pick == w.size()) pick = 0;  // every point already coincides with a centroid
        m.centroids.row(k) = data.row(Eigen::Index(pick));
        for (Eigen::Index i = 0; i < N; ++i) {
            const double d = (data.row(i) - m.centroids.row(k)).squaredNorm();
            nearest[std::size_t(i)] = std::min(nearest[std::size_t(i)], d);
            w[std::size_t(i)] = nearest[std::size_t(i)];
        }
    }

    std::vector<int> labels = kmeans_assign(m, data);
    for (int it = 0; it < iters; ++it) {
        Matrix sums = Matrix::Zero(K, data.cols());
        std::vector<long> counts(static_cast<std::size_t>(K), 0);
        for (Eigen::Index i = 0; i < N; ++i) {
            sums.row(labels[std::size_t(i)]) += data.row(i);
            ++counts[std::size_t(labels[std::size_t(i)])];
        }
        std::set<Eigen::Index> used;
        for (int k = 0; k < K; ++k) {
            if (counts[std::size_t(k)] > 0) {
                m.centroids.row(k) = sums.row(k) / double(counts[std::size_t(k)]);
                continue;
            }
            Eigen::Index far = -1;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < N; ++i) {
                if (used.count(i)) continue;
                const double d = (data.row(i) - m.centroids.row(labels[std::size_t(i)])).squaredNorm();
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            used.insert(far);
            m.centroids.row(k) = data.row(far);
        }
        std::vector<int> next = kmeans_assign(m, data);
        m.iterations = it + 1;
        if (next == labels) break;
        labels = std::move(next);
    }
    m.inertia = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) m.inertia += (data.row(i) - m.centroids.row(labels[std::size_t(i)])).squaredNorm();
    return m;
}

// -------------------------------------------------------------------- SID

double sid(const std::vector<double>& distribution) {
    if (distribution.empty()) throw InvalidArgument("sid: empty distribution");
    double total = 0.0;
    for (double c : distribution) {
        if (c < 0.0) throw InvalidArgument("sid: negative frequency");
        total += c;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("sid: distribution must sum to 1");
    double h = 0.0;
    for (double c : distribution) {
        if (c > 0.0) h -= c * std::log2(c);
    }
    return h;
}

double sid(const std::vector<int>& labels, int K) {
    if (labels.empty()) throw InvalidArgument("sid: no labels");
    if (K < 1) throw InvalidArgument("sid: K must be >= 1");
    std::vector<double> hist(static_cast<std::size_t>(K), 0.0);
    for (int l : labels) {
        if (l < 0 || l >= K) throw InvalidArgument("sid: label out of range");
        hist[std::size_t(l)] += 1.0;
    }
    double h = 0.0;
    for (double c : hist) {
        if (c > 0.0) {
            const double p = c / double(labels.size());
            h -= p * std::log2(p);
        }
    }
    return h;
}

// -------------------------------------------------------------------- PCC

double pcc(const Vector& x, const Vector& y) {
    if (x.size() != y.size()) throw InvalidArgument("pcc: length mismatch");
    if (x.size() < 2) throw InvalidArgument("pcc: need at least 2 samples");
    const Vector xc = x.array() - x.mean();
    const Vector yc = y.array() - y.mean();
    const double sxx = xc.squaredNorm(), syy = yc.squaredNorm();
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;
    return std::clamp(xc.dot(yc) / std::sqrt(sxx * syy), -1.0, 1.0);
}

double pcc_mean(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) throw InvalidArgument("pcc_mean: shape mismatch");
    double s = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) s += pcc(x.col(c), y.col(c));
    return s / double(x.cols());
}

double rpcc(double pred_pcc, double gt_pcc) { return std::abs(pred_pcc - gt_pcc); }

double rpcc_dims(const Matrix& gen_listener, const Matrix& gt_listener, const Matrix& speaker) {
    if (gen_listener.rows() != speaker.rows() || gt_listener.rows() != speaker.rows() ||
        gen_listener.cols() != speaker.cols() || gt_listener.cols() != speaker.cols()) {
        throw InvalidArgument("rpcc: shape mismatch");
    }
    double s = 0.0;
    for (Eigen::Index c = 0; c < speaker.cols(); ++c) {
        s += rpcc(pcc(gen_listener.col(c), speaker.col(c)), pcc(gt_listener.col(c), speaker.col(c)));
    }
    return s / double(speaker.cols());
}

// --------------------------------------------------------------- vertices

namespace {

void check_vertices(const Matrix& a, const Matrix& b, const std::vector<int>& idx, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidArgument(std::string(what) + ": shape mismatch");
    if (a.cols() % 3 != 0) throw InvalidArgument(std::string(what) + ": columns must be 3 per vertex");
    if (idx.empty()) throw InvalidArgument(std::string(what) + ": empty vertex set");
    for (int v : idx) {
        if (v < 0 || 3 * Eigen::Index(v) + 2 >= a.cols()) {
            throw InvalidArgument(std::string(what) + ": vertex index out of range");
        }
    }
}

}  // namespace

double lip_vertex_error(const Matrix& pred, const Matrix& gt, const std::vector<int>& lip) {
    check_vertices(pred, gt, lip, "lip_vertex_error");
    if (pred.rows() < 1) throw InvalidArgument("lip_vertex_error: no frames");
    double total = 0.0;
    for (Eigen::Index t = 0; t < pred.rows(); ++t) {
        double worst = 0.0;
        for (int v : lip) worst = std::max(worst, (pred.block(t, 3 * v, 1, 3) - gt.block(t, 3 * v, 1, 3)).norm());
        total += worst;
    }
    return total / double(pred.rows());
}

double upper_face_dynamics_deviation(const Matrix& pred, const Matrix& gt, const std::vector<int>& upper) {
    check_vertices(pred, gt, upper, "upper_face_dynamics_deviation");
    if (pred.rows() < 2) throw InvalidArgument("upper_face_dynamics_deviation: need at least 2 frames");
    auto dyn = [](const Matrix& verts, int v) {
        const Matrix block = verts.middleCols(3 * v, 3);
        const RowVector mu = block.colwise().mean();
        const Vector dist = (block.rowwise() - mu).rowwise().norm();
        const double m = dist.mean();
        return std::sqrt((dist.array() - m).square().mean());
    };
    double total = 0.0;
    for (int v : upper) total += dyn(gt, v) - dyn(pred, v);
    return total / double(upper.size());
}

VertexProxy VertexProxy::create(int vertices, std::uint64_t seed) {
    if (vertices < 1) throw InvalidArgument("VertexProxy: vertices must be >= 1");
    Rng rng(mix_seed(seed, {0x76657274}));
    VertexProxy p;
    p.vertices = vertices;
    p.basis.resize(kMotionDim, 3 * vertices);
    p.mean.resize(3 * vertices);
    for (Eigen::Index c = 0; c < p.mean.size(); ++c) p.mean(c) = rng.normal();
    const double s = 1.0 / std::sqrt(double(kMotionDim));
    for (Eigen::Index r = 0; r < p.basis.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.basis.cols(); ++c) p.basis(r, c) = s * rng.normal();
    }
    return p;
}

Matrix VertexProxy::apply(const Matrix& motion) const {
    if (motion.cols() != kMotionDim) throw InvalidArgument("VertexProxy: expected 56 motion columns");
    return (motion * basis).rowwise() + mean;
}

// ----------------------------------------------------------------- config

MetricConfig::MetricConfig() {
    for (int v = 0; v < 16; ++v) lip_vertex_indices.push_back(v);
    for (int v = 32; v < 64; ++v) upper_face_vertex_indices.push_back(v);
}

void MetricConfig::validate() const {
    if (n_vertices < 1) throw InvalidArgument("MetricConfig: n_vertices must be >= 1");
    if (lip_vertex_indices.empty() || upper_face_vertex_indices.empty()) {
        throw InvalidArgument("MetricConfig: vertex index sets must be non-empty");
    }
    std::set<int> lip(lip_vertex_indices.begin(), lip_vertex_indices.end());
    for (int v : lip_vertex_indices) {
        if (v < 0 || v >= n_vertices) throw InvalidArgument("MetricConfig: lip vertex index out of range");
    }
    for (int v : upper_face_vertex_indices) {
        if (v < 0 || v >= n_vertices) throw InvalidArgument("MetricConfig: upper-face vertex index out of range");
        if (lip.count(v)) throw InvalidArgument("MetricConfig: lip and upper-face vertex sets must be disjoint");
    }
    if (kmeans_K_expr < 1 || kmeans_K_pose < 1 || kmeans_iters < 0) {
        throw InvalidArgument("MetricConfig: invalid k-means settings");
    }
}

json to_json(const MetricConfig& c) {
    return json{{"lip_vertex_indices", c.lip_vertex_indices},
                {"upper_face_vertex_indices", c.upper_face_vertex_indices},
                {"n_vertices", c.n_vertices},
                {"vertex_seed", c.vertex_seed},
                {"kmeans_K_expr", c.kmeans_K_expr},
                {"kmeans_K_pose", c.kmeans_K_pose},
                {"kmeans_iters", c.kmeans_iters},
                {"kmeans_seed", c.kmeans_seed},
                {"per_clip_fd", c.per_clip_fd}};
}

MetricConfig metric_config_from_json(const json& j, const std::string& path, MetricConfig c) {
    FieldReader r(j, path);
    for (const char* key : {"lip_vertex_indices", "upper_face_vertex_indices"}) {
        if (!r.has(key)) continue;
        const json& v = r.raw(key);
        std::vector<int>& out = std::string(key) == "lip_vertex_indices" ? c.lip_vertex_indices
                                                                          : c.upper_face_vertex_indices;
        if (!v.is_array()) throw ConfigError(r.child(key) + ": expected an array of integers");
        out.clear();
        for (const auto& e : v) {
            if (!e.is_number_integer()) throw ConfigError(r.child(key) + ": expected an array of integers");
            out.push_back(e.get<int>());
        }
    }
    r.get("n_vertices", c.n_vertices);
    r.get("vertex_seed", c.vertex_seed);
    r.get("kmeans_K_expr", c.kmeans_K_expr);
    r.get("kmeans_K_pose", c.kmeans_K_pose);
    r.get("kmeans_iters", c.kmeans_iters);
    r.get("kmeans_seed", c.kmeans_seed);
    r.get("per_clip_fd", c.per_clip_fd);
    r.finish();
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return c;
}

// --------------------------------------------------------------- evaluate

namespace {

Matrix stack(const std::vector<Matrix>& parts) {
    Eigen::Index rows = 0;
    for (const auto& p : parts) rows += p.rows();
    Matrix out(rows, parts.empty() ? 0 : parts[0].cols());
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p.rows()) = p;
        r += p.rows();
    }
    return out;
}

}  // namespace

ClusterSet fit_clusters(const std::vector<MotionSequence>& gt_train, const MetricConfig& cfg) {
    if (gt_train.empty()) throw InvalidArgument("fit_clusters: no training motion");
    std::vector<Matrix> e, p;
    for (const auto& m : gt_train) {
        e.push_back(m.expression());
        p.push_back(m.pose());
    }
    ClusterSet cs;
    cs.expr = kmeans_fit(stack(e), cfg.kmeans_K_expr, cfg.kmeans_iters, mix_seed(cfg.kmeans_seed, {1}));
    cs.pose = kmeans_fit(stack(p), cfg.kmeans_K_pose, cfg.kmeans_iters, mix_seed(cfg.kmeans_seed, {2}));
    return cs;
}

MetricReport evaluate(const MotionCorpus& generated, const MotionCorpus& gt, const MotionCorpus& speaker,
                      const ClusterSet& clusters, const MetricConfig& cfg, const std::string& config_hash) {
    cfg.validate();
    if (gt.empty()) throw InvalidArgument("evaluate: empty ground-truth corpus");
    const VertexProxy proxy = VertexProxy::create(cfg.n_vertices, cfg.vertex_seed);
    std::vector<Matrix> ge, gp, te, tp, se, sp;
    double sid_e = 0, sid_p = 0, var_e = 0, var_p = 0, lve_sum = 0, fdd_sum = 0, fd_e_clip = 0, fd_p_clip = 0;
    double lve_frames = 0;
    for (const auto& [id, truth] : gt) {
        auto g = generated.find(id);
        auto s = speaker.find(id);
        if (g == generated.end()) throw InvalidArgument("evaluate: generated corpus is missing clip '" + id + "'");
        if (s == speaker.end()) throw InvalidArgument("evaluate: speaker corpus is missing clip '" + id + "'");
        const MotionSequence& gen = g->second;
        if (gen.length() != truth.length() || s->second.length() != truth.length()) {
            throw InvalidArgument("evaluate: length mismatch for clip '" + id + "'");
        }
        ge.push_back(gen.expression());
        gp.push_back(gen.pose());
        te.push_back(truth.expression());
        tp.push_back(truth.pose());
        se.push_back(s->second.expression());
        sp.push_back(s->second.pose());
        sid_e += sid(kmeans_assign(clusters.expr, ge.back()), clusters.expr.K);
        sid_p += sid(kmeans_assign(clusters.pose, gp.back()), clusters.pose.K);
        var_e += variation(ge.back());
        var_p += variation(gp.back());
        const Matrix vg = proxy.apply(gen.frames());
        const Matrix vt = proxy.apply(truth.frames());
        lve_sum += lip_vertex_error(vg, vt, cfg.lip_vertex_indices) * double(truth.length());
        lve_frames += double(truth.length());
        if (truth.length() >= 2) fdd_sum += upper_face_dynamics_deviation(vg, vt, cfg.upper_face_vertex_indices);
        if (cfg.per_clip_fd) {
            fd_e_clip += frechet_distance(ge.back(), te.back());
            fd_p_clip += frechet_distance(gp.back(), tp.back());
        }
    }
    const double n = double(gt.size());
    MetricReport r;
    const Matrix GE = stack(ge), GP = stack(gp), TE = stack(te), TP = stack(tp), SE = stack(se), SP = stack(sp);
    if (cfg.per_clip_fd) {
        r.fd_exp = fd_e_clip / n;
        r.fd_pose = fd_p_clip / n;
    } else {
        r.fd_exp = frechet_distance(GE, TE);
        r.fd_pose = frechet_distance(GP, TP);
    }
    r.pfd_exp = paired_fd(GE, SE, TE);
    r.pfd_pose = paired_fd(GP, SP, TP);
    r.mse_exp = mse(GE, TE);
    r.mse_pose = mse(GP, TP);
    r.sid_exp = sid_e / n;
    r.sid_pose = sid_p / n;
    r.var_exp = var_e / n;
    r.var_pose = var_p / n;
    r.rpcc_exp = rpcc_dims(GE, TE, SE);
    r.rpcc_pose = rpcc_dims(GP, TP, SP);
    r.lve = lve_sum / lve_frames;
    r.fdd = fdd_sum / n;
    r.config_hash = config_hash;
    return r;
}

// ----------------------------------------------------------------- report

json MetricReport::to_json() const {
    return json{{"fd_exp", fd_exp},     {"fd_pose", fd_pose},     {"pfd_exp", pfd_exp},   {"pfd_pose", pfd_pose},
                {"mse_exp", mse_exp},   {"mse_pose", mse_pose},   {"sid_exp", sid_exp},   {"sid_pose", sid_pose},
                {"var_exp", var_exp},   {"var_pose", var_pose},   {"rpcc_exp", rpcc_exp}, {"rpcc_pose", rpcc_pose},
                {"lve", lve},           {"fdd", fdd},             {"config_hash", config_hash}};
}

MetricReport MetricReport::from_json(const json& j) {
    MetricReport r;
    FieldReader f(j, "");
    f.get("fd_exp", r.fd_exp);
    f.get("fd_pose", r.fd_pose);
    f.get("pfd_exp", r.pfd_exp);
    f.get("pfd_pose", r.pfd_pose);
    f.get("mse_exp", r.mse_exp);
    f.get("mse_pose", r.mse_pose);
    f.get("sid_exp", r.sid_exp);
    f.get("sid_pose", r.sid_pose);
    f.get("var_exp", r.var_exp);
    f.get("var_pose", r.var_pose);
    f.get("rpcc_exp", r.rpcc_exp);
    f.get("rpcc_pose", r.rpcc_pose);
    f.get("lve", r.lve);
    f.get("fdd", r.fdd);
    f.get("config_hash", r.config_hash);
    f.finish();
    return r;
}

std::string MetricReport::csv_header() {
    return "label,fd_exp,fd_pose,pfd_exp,pfd_pose,mse_exp,mse_pose,sid_exp,sid_pose,var_exp,var_pose,rpcc_exp,"
           "rpcc_pose,lve,fdd,config_hash";
}

std::string MetricReport::csv_row(const std::string& label) const {
    std::string out = label;
    char buf[64];
    for (double v : {fd_exp, fd_pose, pfd_exp, pfd_pose, mse_exp, mse_pose, sid_exp, sid_pose, var_exp, var_pose,
                     rpcc_exp, rpcc_pose, lve, fdd}) {
        std::snprintf(buf, sizeof buf, ",%.9g", v);
        out += buf;
    }
    return out + "," + config_hash;
}

bool MetricReport::all_finite() const {
    for (double v : {fd_exp, fd_pose, pfd_exp, pfd_pose, mse_exp, mse_pose, sid_exp, sid_pose, var_exp, var_pose,
                     rpcc_exp, rpcc_pose, lve, fdd}) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace dim
