#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <Eigen/QR>

#include "dim/error.hpp"
#include "dim/finetune.hpp"
#include "dim/metrics.hpp"
#include "dim/rng.hpp"
#include "dim/synth.hpp"

using namespace dim;

namespace {

Matrix column(std::initializer_list<double> v) {
    Matrix m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
}

Matrix gaussian(Rng& rng, Eigen::Index n, Eigen::Index d, const Matrix& mix) {
    Matrix z(n, d);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    return z * mix;
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

}  // namespace

// ------------------------------------------------------------------- FD

TEST_CASE("fd: 1-D closed form, mean 0 var 1 against mean 1 var 4") {
    // {-1, 1} has population mean 0 and variance 1; {-1, 3} has mean 1 and variance 4.
    const double fd = frechet_distance(column({-1, 1}), column({-1, 3}));
    CHECK(std::abs(fd - 2.0) < 1e-3);
}

TEST_CASE("fd: identical sets, symmetry and rotation invariance") {
    Rng rng(3);
    Matrix mix = random_matrix(rng, 4, 4);
    const Matrix a = gaussian(rng, 200, 4, mix);
    const Matrix b = gaussian(rng, 150, 4, mix) + Matrix::Constant(150, 4, 0.3);
    CHECK(std::abs(frechet_distance(a, a)) < 1e-6);
    CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-8);
    CHECK(frechet_distance(a, b) > 0.0);

    const Eigen::HouseholderQR<Matrix> qr(random_matrix(rng, 4, 4));
    const Matrix q = qr.householderQ();
    CHECK(std::abs(frechet_distance(a * q, b * q) - frechet_distance(a, b)) < 1e-6);

    CHECK_THROWS_AS(frechet_distance(Matrix::Zero(1, 2), a.leftCols(2)), InvalidArgument);
    CHECK_THROWS_AS(frechet_distance(Matrix::Zero(5, 0), Matrix::Zero(5, 0)), InvalidArgument);
}

TEST_CASE("fd: two draws from one Gaussian approach zero") {
    Rng rng(11);
    Matrix mix(3, 3);
    mix << 1.0, 0.2, 0.0, 0.0, 0.7, 0.3, 0.1, 0.0, 1.2;
    const Matrix a = gaussian(rng, 100000, 3, mix);
    const Matrix b = gaussian(rng, 100000, 3, mix);
    CHECK(frechet_distance(a, b) < 0.05);
}

TEST_CASE("paired fd: zero on ground truth, non-negative, length checked") {
    Rng rng(4);
    const Matrix s = random_matrix(rng, 30, 3), l = random_matrix(rng, 30, 3), g = random_matrix(rng, 30, 3);
    CHECK(std::abs(paired_fd(l, s, l)) < 1e-6);
    CHECK(paired_fd(g, s, l) >= 0.0);
    CHECK_THROWS_AS(paired_fd(l.topRows(29), s, l), InvalidArgument);
}

// ------------------------------------------------------------ MSE / Var

TEST_CASE("mse examples") {
    Rng rng(5);
    const Matrix gt = random_matrix(rng, 6, 4);
    CHECK(mse(gt, gt) == 0.0);
    CHECK(mse((gt.array() + 1.0).matrix(), gt) == doctest::Approx(1.0));
    CHECK(mse((Matrix(1, 2) << 0, 0).finished(), (Matrix(1, 2) << 1, 3).finished()) == doctest::Approx(5.0));
    CHECK_THROWS_AS(mse(gt, gt.leftCols(3)), InvalidArgument);

    // Reordering prediction and ground truth together leaves MSE unchanged.
    const Matrix pred = random_matrix(rng, 6, 4);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
    perm.indices() << 3, 0, 5, 1, 4, 2;
    CHECK(mse(perm * pred, perm * gt) == doctest::Approx(mse(pred, gt)).epsilon(1e-14));
}

TEST_CASE("variation examples") {
    CHECK(variation(Matrix::Constant(7, 3, 2.5)) == 0.0);
    CHECK(variation(column({0, 2})) == doctest::Approx(1.0));
    Rng rng(6);
    const Matrix x = random_matrix(rng, 9, 5);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(9);
    perm.indices() << 8, 2, 4, 0, 6, 1, 3, 7, 5;
    CHECK(variation(perm * x) == doctest::Approx(variation(x)).epsilon(1e-14));
}

// -------------------------------------------------------------- k-means

TEST_CASE("kmeans: N = K distinct points are their own centroids") {
    Rng rng(7);
    const Matrix pts = random_matrix(rng, 5, 3);
    const ClusterModel m = kmeans_fit(pts, 5, 50, 1);
    CHECK(m.inertia < 1e-20);
    std::vector<int> labels = kmeans_assign(m, pts);
    std::sort(labels.begin(), labels.end());
    CHECK(labels == std::vector<int>{0, 1, 2, 3, 4});
    CHECK_THROWS_AS(kmeans_fit(pts, 6, 10, 1), InvalidArgument);
}

TEST_CASE("kmeans: duplicated points give the same centroid set") {
    Rng rng(8);
    const Matrix pts = random_matrix(rng, 4, 2);
    Matrix twice(8, 2);
    twice << pts, pts;
    const ClusterModel m = kmeans_fit(twice, 4, 50, 2);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        double best = 1e300;
        for (Eigen::Index k = 0; k < 4; ++k) best = std::min(best, (m.centroids.row(k) - pts.row(i)).norm());
        CHECK(best < 1e-12);
    }
}

TEST_CASE("kmeans: two separated blobs are recovered exactly") {
    Rng rng(9);
    Matrix pts(200, 2);
    for (Eigen::Index i = 0; i < 200; ++i) {
        const double c = i < 100 ? -10.0 : 10.0;
        pts(i, 0) = c + 0.1 * rng.normal();
        pts(i, 1) = c + 0.1 * rng.normal();
    }
    const auto labels = kmeans_assign(kmeans_fit(pts, 2, 100, 3), pts);
    int agree = 0;
    for (int i = 0; i < 200; ++i) agree += labels[static_cast<std::size_t>(i)] == labels[i < 100 ? 0 : 100];
    CHECK(agree == 200);
    CHECK(labels[0] != labels[100]);
}

TEST_CASE("kmeans: assignment equals brute-force nearest centroid; fit is seeded") {
    Rng rng(10);
    const Matrix pts = random_matrix(rng, 300, 4);
    const ClusterModel m = kmeans_fit(pts, 7, 30, 5);
    const auto labels = kmeans_assign(m, pts);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        int best = 0;
        for (int k = 1; k < 7; ++k) {
            if ((m.centroids.row(k) - pts.row(i)).squaredNorm() < (m.centroids.row(best) - pts.row(i)).squaredNorm()) {
                best = k;
            }
        }
        CHECK(labels[static_cast<std::size_t>(i)] == best);
    }
    CHECK(kmeans_fit(pts, 7, 30, 5).centroids == m.centroids);

    ClusterModel tie;
    tie.K = 2;
    tie.centroids = (Matrix(2, 1) << -1, 1).finished();
    CHECK(kmeans_assign(tie, column({0})) == std::vector<int>{0});
}

// ------------------------------------------------------------------ SID

TEST_CASE("sid examples and bounds") {
    CHECK(sid(std::vector<int>(12, 3), 40) == 0.0);
    CHECK(std::abs(sid(std::vector<double>(40, 1.0 / 40)) - std::log2(40.0)) < 1e-9);
    CHECK(sid(std::vector<double>{0.5, 0.5}) == doctest::Approx(1.0));
    CHECK(sid(std::vector<double>{1.0, 0.0}) == 0.0);
    CHECK_THROWS_AS(sid(std::vector<double>{1.2, -0.2}), InvalidArgument);

    std::vector<int> labels;
    for (int i = 0; i < 80; ++i) labels.push_back(i % 40);
    CHECK(sid(labels, 40) == doctest::Approx(std::log2(40.0)));

    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p(8);
        double total = 0.0;
        for (double& v : p) total += v = rng.uniform(0.0, 1.0);
        for (double& v : p) v /= total;
        const double s = sid(p);
        CHECK(s >= 0.0);
        CHECK(s <= 3.0 + 1e-12);
    }
}

// ------------------------------------------------------------------ PCC

TEST_CASE("pcc examples, affine invariance and rpcc") {
    Vector x(5);
    x << 0.3, -1.0, 2.0, 0.7, 1.1;
    CHECK(pcc(x, x) == doctest::Approx(1.0));
    CHECK(pcc(x, -x) == doctest::Approx(-1.0));
    CHECK(pcc((Vector(3) << 1, 2, 3).finished(), (Vector(3) << 2, 4, 6).finished()) == doctest::Approx(1.0));
    CHECK(pcc(x, Vector::Constant(5, 2.0)) == 0.0);
    CHECK_THROWS_AS(pcc(x.head(1), x.head(1)), InvalidArgument);

    Vector y(5);
    y << 1.0, 0.2, -0.4, 0.9, 0.0;
    const double r = pcc(x, y);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    CHECK(pcc(x, (3.0 * y.array() + 7.0).matrix()) == doctest::Approx(r).epsilon(1e-12));

    CHECK(rpcc(0.42, 0.42) == 0.0);
    CHECK(rpcc(0.1, -0.3) == doctest::Approx(0.4));
    Rng rng(13);
    const Matrix s = random_matrix(rng, 20, 4), l = random_matrix(rng, 20, 4);
    CHECK(rpcc_dims(l, l, s) == 0.0);
}

// ----------------------------------------------------------- LVE / FDD

TEST_CASE("lip vertex error examples") {
    Matrix gt = Matrix::Zero(1, 6);
    Matrix pred = gt;
    CHECK(lip_vertex_error(pred, gt, {0, 1}) == 0.0);
    pred(0, 3) = 3.0;
    pred(0, 4) = 4.0;
    CHECK(lip_vertex_error(pred, gt, {0, 1}) == 5.0);

    Matrix gt2 = Matrix::Zero(2, 3), pred2 = gt2;
    pred2(0, 0) = 1.0;
    pred2(1, 2) = 3.0;
    CHECK(lip_vertex_error(pred2, gt2, {0}) == doctest::Approx(2.0));
    CHECK_THROWS_AS(lip_vertex_error(pred2, gt2, {}), InvalidArgument);
    CHECK_THROWS_AS(lip_vertex_error(pred2, gt2, {1}), InvalidArgument);
}

TEST_CASE("upper face dynamics deviation: static prediction recovers sigma") {
    // Vertex v moves between c_v + s and c_v - s along one axis: its distance
    // to the temporal mean is s in every frame, so add a radial oscillation
    // with distances {0, 2 sigma} to get a population std of exactly sigma.
    const double sigma = 0.37;
    const int V = 3, T = 4;
    Matrix gt(T, 3 * V);
    for (int t = 0; t < T; ++t) {
        for (int v = 0; v < V; ++v) {
            const double c = v + 1.0;
            // Offsets 0, 0, +2s, -2s along x: mean offset 0, distances 0,0,2s,2s.
            const double off = t < 2 ? 0.0 : (t == 2 ? 2.0 * sigma : -2.0 * sigma);
            gt(t, 3 * v) = c + off;
            gt(t, 3 * v + 1) = -c;
            gt(t, 3 * v + 2) = 0.5 * c;
        }
    }
    Matrix still(T, 3 * V);
    for (int t = 0; t < T; ++t) still.row(t) = gt.colwise().mean();
    const std::vector<int> all{0, 1, 2};
    CHECK(upper_face_dynamics_deviation(still, gt, all) == doctest::Approx(sigma).epsilon(1e-12));
    CHECK(upper_face_dynamics_deviation(gt, gt, all) == 0.0);
    CHECK(upper_face_dynamics_deviation(gt, still, all) == doctest::Approx(-sigma).epsilon(1e-12));
    CHECK_THROWS_AS(upper_face_dynamics_deviation(gt, gt, {}), InvalidArgument);
}

TEST_CASE("vertex proxy is seeded and linear") {
    const VertexProxy a = VertexProxy::create(8, 1), b = VertexProxy::create(8, 1);
    CHECK(a.basis == b.basis);
    CHECK(a.basis.rows() == kMotionDim);
    CHECK(a.basis.cols() == 24);
    const Matrix m = Matrix::Zero(2, kMotionDim);
    CHECK(a.apply(m).row(0) == a.mean);
}

// -------------------------------------------------------------- evaluate

namespace {

struct Corpora {
    MotionCorpus speaker, listener;
    std::vector<DyadicSample> samples;
};

Corpora synth_corpora(int n) {
    SynthConfig sc;
    sc.n_clips = n;
    sc.length = 48;
    Corpora c;
    c.samples = synth_dyads(sc);
    for (const auto& s : c.samples) {
        c.speaker.emplace(s.clip_id, s.speaker);
        c.listener.emplace(s.clip_id, s.listener);
    }
    return c;
}

MetricConfig small_metrics() {
    MetricConfig m;
    m.kmeans_iters = 20;
    return m;
}

}  // namespace

TEST_CASE("evaluate: self-evaluation is zero, report finite and complete") {
    const Corpora c = synth_corpora(6);
    const MetricConfig cfg = small_metrics();
    std::vector<MotionSequence> train;
    for (const auto& [id, m] : c.listener) train.push_back(m);
    const ClusterSet clusters = fit_clusters(train, cfg);
    const MetricReport r = evaluate(c.listener, c.listener, c.speaker, clusters, cfg, "abc");
    CHECK(std::abs(r.fd_exp) < 1e-6);
    CHECK(std::abs(r.fd_pose) < 1e-6);
    CHECK(std::abs(r.pfd_exp) < 1e-6);
    CHECK(std::abs(r.pfd_pose) < 1e-6);
    CHECK(r.mse_exp == 0.0);
    CHECK(r.mse_pose == 0.0);
    CHECK(r.rpcc_exp == 0.0);
    CHECK(r.rpcc_pose == 0.0);
    CHECK(r.lve == 0.0);
    CHECK(r.fdd == 0.0);
    CHECK(r.sid_exp > 0.0);
    CHECK(r.var_exp > 0.0);
    CHECK(r.all_finite());

    const MetricReport back = MetricReport::from_json(r.to_json());
    CHECK(back.to_json() == r.to_json());
    CHECK(back.config_hash == "abc");

    MotionCorpus missing = c.listener;
    missing.erase(missing.begin());
    CHECK_THROWS_AS(evaluate(missing, c.listener, c.speaker, clusters, cfg), InvalidArgument);
}

TEST_CASE("evaluate: random baseline is worse than ground truth and a coupled generator") {
    const Corpora train = synth_corpora(8);
    SynthConfig sc;
    sc.n_clips = 4;
    sc.length = 48;
    sc.seed = 99;
    const auto test = synth_dyads(sc);
    MotionCorpus gt, spk, random, coupled;
    const RandomBaseline rb(train.samples, 17);
    Rng rng(14);
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& s = test[i];
        gt.emplace(s.clip_id, s.listener);
        spk.emplace(s.clip_id, s.speaker);
        random.emplace(s.clip_id, rb(s.length(), i));
        Matrix noisy = s.listener.frames();
        for (Eigen::Index k = 0; k < noisy.size(); ++k) noisy.data()[k] += 0.01 * rng.normal();
        coupled.emplace(s.clip_id, MotionSequence(noisy));
    }
    const MetricConfig cfg = small_metrics();
    std::vector<MotionSequence> fit;
    for (const auto& s : train.samples) fit.push_back(s.listener);
    const ClusterSet clusters = fit_clusters(fit, cfg);
    const MetricReport self = evaluate(gt, gt, spk, clusters, cfg);
    const MetricReport rnd = evaluate(random, gt, spk, clusters, cfg);
    const MetricReport near = evaluate(coupled, gt, spk, clusters, cfg);
    CHECK(rnd.fd_exp > self.fd_exp);
    CHECK(rnd.mse_exp > self.mse_exp);
    CHECK(rnd.pfd_exp > near.pfd_exp);
    CHECK(rnd.pfd_pose > near.pfd_pose);
    CHECK(rnd.all_finite());
}
