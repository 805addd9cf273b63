#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dim/motion.hpp"

namespace dim {

// Population mean and covariance of a sample set (rows are samples).
struct GaussianStats {
    RowVector mu;
    Matrix cov;
};

GaussianStats gaussian_stats(const Matrix& samples);

// ||mu_a - mu_b||^2 + tr(C_a + C_b - 2 (C_a C_b)^(1/2)), with 1e-6 I added
// to both covariances. The trace of the square root is taken from the
// eigenvalues of S_a C_b S_a (S_a = C_a^(1/2)) and of the mirrored product,
// averaged, so the result is symmetric in its arguments.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);
double frechet_distance(const Matrix& a, const Matrix& b);

// FD over feature-concatenated [listener, speaker] frames, generated vs
// ground truth. All three inputs must have the same number of rows.
double paired_fd(const Matrix& gen_listener, const Matrix& speaker, const Matrix& gt_listener);

double mse(const Matrix& pred, const Matrix& gt);

// Population variance over time per dimension, averaged over dimensions.
double variation(const Matrix& seq);

struct ClusterModel {
    Matrix centroids;  // K x d
    int K = 0;
    std::uint64_t fit_seed = 0;
    int iterations = 0;
    double inertia = 0.0;
};

// Lloyd's algorithm from a seeded k-means++ start. Every draw is a single
// uniform variate matched against cumulative weights. Ties go to the lowest
// centroid index; an empty cluster is re-seeded at the point farthest from
// its assigned centroid.
ClusterModel kmeans_fit(const Matrix& data, int K, int iters, std::uint64_t seed);
std::vector<int> kmeans_assign(const ClusterModel& model, const Matrix& data);

// Shannon index in bits; 0 log 0 := 0.
double sid(const std::vector<double>& distribution);
double sid(const std::vector<int>& labels, int K);

// Pearson correlation; 0 when either signal has zero variance.
double pcc(const Vector& x, const Vector& y);
// Per-column PCC between x and y, averaged over columns.
double pcc_mean(const Matrix& x, const Matrix& y);
double rpcc(double pred_pcc, double gt_pcc);
// Mean over columns of |PCC(gen_d, speaker_d) - PCC(gt_d, speaker_d)|.
double rpcc_dims(const Matrix& gen_listener, const Matrix& gt_listener, const Matrix& speaker);

// Vertex arrays are stored T x (3V): vertex v occupies columns 3v..3v+2.
double lip_vertex_error(const Matrix& pred_verts, const Matrix& gt_verts, const std::vector<int>& lip_indices);
double upper_face_dynamics_deviation(const Matrix& pred_verts, const Matrix& gt_verts,
                                     const std::vector<int>& upper_indices);

// Fixed random linear map from motion coefficients to vertex positions,
// standing in for a face mesh on synthetic data.
struct VertexProxy {
    Matrix basis;     // 56 x 3V
    RowVector mean;   // 1 x 3V
    int vertices = 0;

    static VertexProxy create(int vertices, std::uint64_t seed);
    Matrix apply(const Matrix& motion) const;
};

struct MetricConfig {
    std::vector<int> lip_vertex_indices;    // default 0..15
    std::vector<int> upper_face_vertex_indices;  // default 32..63
    int n_vertices = 64;
    std::uint64_t vertex_seed = 0;
    int kmeans_K_expr = 40;
    int kmeans_K_pose = 20;
    int kmeans_iters = 100;
    std::uint64_t kmeans_seed = 0;
    // false: FD on frames pooled across clips; true: per clip, averaged.
    bool per_clip_fd = false;

    MetricConfig();
    void validate() const;
};

nlohmann::json to_json(const MetricConfig& c);
MetricConfig metric_config_from_json(const nlohmann::json& j, const std::string& path, MetricConfig base = {});

struct ClusterSet {
    ClusterModel expr, pose;
};

// Fit once on ground-truth training motion.
ClusterSet fit_clusters(const std::vector<MotionSequence>& gt_train, const MetricConfig& cfg);

struct MetricReport {
    double fd_exp = 0, fd_pose = 0, pfd_exp = 0, pfd_pose = 0, mse_exp = 0, mse_pose = 0;
    double sid_exp = 0, sid_pose = 0, var_exp = 0, var_pose = 0, rpcc_exp = 0, rpcc_pose = 0;
    double lve = 0, fdd = 0;
    std::string config_hash;

    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
    static std::string csv_header();
    std::string csv_row(const std::string& label) const;
    bool all_finite() const;
};

using MotionCorpus = std::map<std::string, MotionSequence>;

// Metrics of generated vs ground-truth listener (or speaker) motion over the
// clips of `gt`; `speaker` provides the conditioning stream for P-FD and
// rPCC. Missing clips or length mismatches raise InvalidArgument.
MetricReport evaluate(const MotionCorpus& generated, const MotionCorpus& gt, const MotionCorpus& speaker,
                      const ClusterSet& clusters, const MetricConfig& cfg, const std::string& config_hash = "");

}  // namespace dim
