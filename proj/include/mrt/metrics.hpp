#pragma once

// Evaluation metrics over plain coordinate arrays: similarity-transform
// (Procrustes) alignment, joint/vertex position errors in millimeters,
// threshold F-scores, and attention-map aggregation with CSV/PGM export.
// Inputs are meters; reported errors are millimeters.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mrt/common.hpp"

namespace mrt {

struct ProcrustesResult {
    double scale = 1.0;
    std::array<double, 9> rotation{};  // row-major, proper (det = +1)
    std::array<double, 3> translation{};
    std::vector<double> aligned;  // n x 3, scale*R*P + t
};

// Finds the similarity transform (s, R, t) minimizing ||s R P + t - Q||_F
// with R a proper rotation: center both sets, SVD the cross-covariance,
// flip the smallest singular direction if the orthogonal factor reflects,
// and read the scale off the trace.
inline ProcrustesResult procrustes_align(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size() || p.size() % 3 != 0)
        throw ShapeError("procrustes_align: point sets must be equal-length n x 3 arrays");
    const int n = static_cast<int>(p.size() / 3);
    if (n < 3) throw ValidationError("procrustes_align: need at least 3 points, got " + std::to_string(n));

    Eigen::Vector3d mean_p = Eigen::Vector3d::Zero(), mean_q = Eigen::Vector3d::Zero();
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) {
            mean_p[c] += p[static_cast<size_t>(i) * 3 + c];
            mean_q[c] += q[static_cast<size_t>(i) * 3 + c];
        }
    mean_p /= n;
    mean_q /= n;

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    double var_p = 0.0;
    for (int i = 0; i < n; ++i) {
        Eigen::Vector3d pc, qc;
        for (int c = 0; c < 3; ++c) {
            pc[c] = p[static_cast<size_t>(i) * 3 + c] - mean_p[c];
            qc[c] = q[static_cast<size_t>(i) * 3 + c] - mean_q[c];
        }
        cov += qc * pc.transpose();
        var_p += pc.squaredNorm();
    }
    if (var_p <= 0.0) throw NumericError("procrustes_align: degenerate source set (all points coincide)");

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d[2] = -1.0;
    const Eigen::Matrix3d r = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    const double s = svd.singularValues().dot(d) / var_p;
    const Eigen::Vector3d t = mean_q - s * r * mean_p;

    ProcrustesResult res;
    res.scale = s;
    for (int i = 0; i < 3; ++i) {
        res.translation[static_cast<size_t>(i)] = t[i];
        for (int j = 0; j < 3; ++j) res.rotation[static_cast<size_t>(i) * 3 + j] = r(i, j);
    }
    res.aligned.resize(p.size());
    for (int i = 0; i < n; ++i) {
        Eigen::Vector3d pi;
        for (int c = 0; c < 3; ++c) pi[c] = p[static_cast<size_t>(i) * 3 + c];
        const Eigen::Vector3d o = s * r * pi + t;
        for (int c = 0; c < 3; ++c) res.aligned[static_cast<size_t>(i) * 3 + c] = o[c];
    }
    return res;
}

// Mean Euclidean distance over n x 3 rows, reported in millimeters.
inline double mean_point_error_mm(const std::vector<double>& pred, const std::vector<double>& gt) {
    if (pred.size() != gt.size() || pred.size() % 3 != 0)
        throw ShapeError("mean_point_error_mm: point sets must be equal-length n x 3 arrays");
    const size_t n = pred.size() / 3;
    if (n == 0) throw ValidationError("mean_point_error_mm: empty point set");
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double d2 = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double d = pred[i * 3 + static_cast<size_t>(c)] - gt[i * 3 + static_cast<size_t>(c)];
            d2 += d * d;
        }
        acc += std::sqrt(d2);
    }
    return acc / static_cast<double>(n) * 1000.0;
}

inline double mpjpe(const std::vector<double>& pred_joints, const std::vector<double>& gt_joints) {
    return mean_point_error_mm(pred_joints, gt_joints);
}

inline double pa_mpjpe(const std::vector<double>& pred_joints, const std::vector<double>& gt_joints) {
    // aligning a set onto itself is the identity; skipping the SVD keeps the
    // self-comparison at exactly zero instead of rounding noise
    if (pred_joints == gt_joints) return mean_point_error_mm(pred_joints, gt_joints);
    return mean_point_error_mm(procrustes_align(pred_joints, gt_joints).aligned, gt_joints);
}

inline double mpve(const std::vector<double>& pred_vertices, const std::vector<double>& gt_vertices) {
    return mean_point_error_mm(pred_vertices, gt_vertices);
}

// Harmonic mean of precision (predicted points within threshold of some
// ground-truth point) and recall (the converse). Threshold in millimeters,
// coordinates in meters.
inline double f_score(const std::vector<double>& pred, const std::vector<double>& gt, double threshold_mm) {
    if (pred.empty() || gt.empty() || pred.size() % 3 != 0 || gt.size() % 3 != 0)
        throw ShapeError("f_score: point sets must be nonempty n x 3 arrays");
    if (threshold_mm <= 0.0) throw ValidationError("f_score: threshold must be positive");
    const double tau_m = threshold_mm / 1000.0;
    auto fraction_within = [tau_m](const std::vector<double>& a, const std::vector<double>& b) {
        const size_t na = a.size() / 3, nb = b.size() / 3;
        size_t hits = 0;
        for (size_t i = 0; i < na; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < nb; ++j) {
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double d = a[i * 3 + static_cast<size_t>(c)] - b[j * 3 + static_cast<size_t>(c)];
                    d2 += d * d;
                }
                if (d2 < best) best = d2;
            }
            if (std::sqrt(best) <= tau_m) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(na);
    };
    const double precision = fraction_within(pred, gt);
    const double recall = fraction_within(gt, pred);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// metric report

struct MetricReport {
    double mpjpe = 0.0;
    double pa_mpjpe = 0.0;
    double mpve = 0.0;
    std::map<double, double> f_scores;  // threshold mm -> score

    void validate() const {
        if (mpjpe < 0.0 || pa_mpjpe < 0.0 || mpve < 0.0)
            throw ValidationError("metric report: negative error value");
        double prev = -1.0;
        for (const auto& [tau, f] : f_scores) {
            if (f < prev - 1e-12)
                throw ValidationError("metric report: f-score decreases at threshold " + std::to_string(tau));
            prev = f;
        }
    }
};

// CSV row `mpjpe,pa_mpjpe,mpve,f@5,f@15` (header + one row).
inline std::string metric_report_csv(const MetricReport& rep) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "mpjpe,pa_mpjpe,mpve";
    for (const auto& [tau, f] : rep.f_scores) {
        os << ",f@" << tau;
        (void)f;
    }
    os << "\n" << rep.mpjpe << "," << rep.pa_mpjpe << "," << rep.mpve;
    for (const auto& [tau, f] : rep.f_scores) {
        os << "," << f;
        (void)tau;
    }
    os << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// attention aggregation and export

// Mean over samples and heads. Each element of `per_sample` is one final
// layer attention stack laid out [heads, T, T]; the result is [T, T] and
// stays row-stochastic (a convex combination of stochastic rows).
inline std::vector<double> aggregate_attention(const std::vector<std::vector<double>>& per_sample,
                                               int heads, int t) {
    if (per_sample.empty()) throw ValidationError("aggregate_attention: no samples");
    if (heads < 1 || t < 1) throw ValidationError("aggregate_attention: bad dimensions");
    const size_t stack = static_cast<size_t>(heads) * t * t;
    std::vector<double> out(static_cast<size_t>(t) * t, 0.0);
    for (const auto& a : per_sample) {
        if (a.size() != stack)
            throw ShapeError("aggregate_attention: stack size " + std::to_string(a.size()) +
                             ", expected " + std::to_string(stack));
        for (int h = 0; h < heads; ++h)
            for (size_t i = 0; i < out.size(); ++i) out[i] += a[static_cast<size_t>(h) * t * t + i];
    }
    const double inv = 1.0 / (static_cast<double>(per_sample.size()) * heads);
    for (auto& x : out) x *= inv;
    return out;
}

inline void save_matrix_csv(const std::string& path, const std::vector<double>& m, int rows, int cols) {
    if (m.size() != static_cast<size_t>(rows) * cols)
        throw ShapeError("save_matrix_csv: data does not match " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << std::setprecision(17);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) out << (j ? "," : "") << m[static_cast<size_t>(i) * cols + j];
        out << "\n";
    }
    if (!out) throw IoError("write failed for " + path);
}

inline std::vector<double> load_matrix_csv(const std::string& path, int* rows_out = nullptr,
                                           int* cols_out = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<double> data;
    std::string line;
    int rows = 0, cols = -1, lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        int c = 0;
        while (std::getline(ls, cell, ',')) {
            try {
                data.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
            }
            ++c;
        }
        if (cols == -1) cols = c;
        else if (c != cols)
            throw ParseError(path + ":" + std::to_string(lineno) + ": ragged row (" + std::to_string(c) +
                             " vs " + std::to_string(cols) + " columns)");
        ++rows;
    }
    if (rows_out) *rows_out = rows;
    if (cols_out) *cols_out = cols < 0 ? 0 : cols;
    return data;
}

// 8-bit binary PGM heatmap; each row is normalized by its own maximum so the
// per-query attention profile stays visible at any scale.
inline void save_pgm_heatmap(const std::string& path, const std::vector<double>& m, int rows, int cols) {
    if (m.size() != static_cast<size_t>(rows) * cols)
        throw ShapeError("save_pgm_heatmap: data does not match " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << cols << " " << rows << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(cols));
    for (int i = 0; i < rows; ++i) {
        double mx = 0.0;
        for (int j = 0; j < cols; ++j) mx = std::max(mx, m[static_cast<size_t>(i) * cols + j]);
        for (int j = 0; j < cols; ++j) {
            const double v = mx > 0.0 ? m[static_cast<size_t>(i) * cols + j] / mx : 0.0;
            row[static_cast<size_t>(j)] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()), cols);
    }
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace mrt
