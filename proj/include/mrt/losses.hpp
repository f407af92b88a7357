#pragma once

// Training objective: per-row L1 terms over vertices, transformer joints,
// regressed joints, and projected 2D joints, combined under the per-sample
// availability flags. Everything here runs on graph tensors so gradients
// flow to the model (and the flags multiply terms by constant 0/1, which
// makes disabled paths contribute exactly zero gradient).

#include "mrt/tensor.hpp"

namespace mrt {

struct LossBreakdown {
    Tensor l_v;       // full-resolution vertices
    Tensor l_j;       // transformer joint outputs
    Tensor l_j_reg;   // joints regressed from predicted vertices
    Tensor l_j_proj;  // 2D reprojection
    Tensor total;
    double alpha = 1.0;
    double beta = 1.0;

    double value(const Graph& g, Tensor t) const { return g.scalar(t); }
};

inline Tensor loss_vertices(Tensor v3d, Tensor gt_v3d) { return l1_mean(v3d, gt_v3d); }
inline Tensor loss_joints(Tensor j3d, Tensor gt_j3d) { return l1_mean(j3d, gt_j3d); }

// Joints recovered from the predicted mesh via the fixed regressor G.
inline Tensor loss_joints_reg(Tensor g_matrix, Tensor v3d, Tensor gt_j3d) {
    return l1_mean(matmul(g_matrix, v3d), gt_j3d);
}

// Weak perspective: J2D = s * (x, y) + (t_x, t_y). `s` is [1,1] (already
// positive), `t` is [1,2]; both may be graph outputs of the camera head.
inline Tensor project_weak_perspective(Tensor j3d, Tensor s, Tensor t) {
    return add_bias(scale_by(slice_cols(j3d, 0, 2), s), t);
}

inline Tensor loss_joints_proj(Tensor j2d, Tensor gt_j2d) { return l1_mean(j2d, gt_j2d); }

// total = alpha * (l_v + l_j + l_j_reg) + beta * l_j_proj, with alpha and
// beta in {0,1}. All four terms are always evaluated (they are reported in
// logs); the flags only gate their contribution to the total.
inline LossBreakdown total_loss(Tensor v3d, Tensor gt_v3d, Tensor j3d, Tensor gt_j3d, Tensor g_matrix,
                                Tensor j2d, Tensor gt_j2d, double alpha, double beta) {
    if ((alpha != 0.0 && alpha != 1.0) || (beta != 0.0 && beta != 1.0))
        throw ValidationError("total_loss: alpha and beta must be binary flags");
    LossBreakdown out;
    out.alpha = alpha;
    out.beta = beta;
    out.l_v = loss_vertices(v3d, gt_v3d);
    out.l_j = loss_joints(j3d, gt_j3d);
    out.l_j_reg = loss_joints_reg(g_matrix, v3d, gt_j3d);
    out.l_j_proj = loss_joints_proj(j2d, gt_j2d);
    Tensor three_d = add(add(out.l_v, out.l_j), out.l_j_reg);
    out.total = add(scale(three_d, alpha), scale(out.l_j_proj, beta));
    return out;
}

// Plain-value counterpart of project_weak_perspective for data generation
// and tests (no graph involved).
inline std::vector<double> project_weak_perspective_values(const std::vector<double>& j3d, double s,
                                                           double tx, double ty) {
    const size_t k = j3d.size() / 3;
    std::vector<double> out(k * 2);
    for (size_t j = 0; j < k; ++j) {
        out[j * 2] = s * j3d[j * 3] + tx;
        out[j * 2 + 1] = s * j3d[j * 3 + 1] + ty;
    }
    return out;
}

}  // namespace mrt
