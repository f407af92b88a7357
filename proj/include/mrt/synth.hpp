#pragma once

// Reproducible ground-truth generator: articulated skeletons posed by forward
// kinematics, a capsule-tube mesh skinned to the bones, a joint regressor
// that is exact on that mesh by construction, weak-perspective 2D targets,
// and feature vectors (deterministic pose embedding or raster silhouettes
// for the learned image path).

#include <array>
#include <numbers>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mrt/common.hpp"
#include "mrt/mesh.hpp"

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace mrt {

// ---------------------------------------------------------------------------
// skeleton and forward kinematics

struct Skeleton {
    int k = 0;
    std::vector<int> parent;           // parent[0] == 0 (root), parent[i] < i otherwise
    std::vector<double> rest_offsets;  // K x 3, offset from parent in rest pose (meters)
    std::vector<std::string> names;

    void validate() const {
        if (k < 1 || parent.size() != static_cast<size_t>(k) ||
            rest_offsets.size() != static_cast<size_t>(k) * 3 || names.size() != static_cast<size_t>(k))
            throw ValidationError("skeleton: inconsistent arrays for K=" + std::to_string(k));
        if (parent[0] != 0) throw ValidationError("skeleton: joint 0 must be the root");
        for (int i = 1; i < k; ++i)
            if (parent[static_cast<size_t>(i)] < 0 || parent[static_cast<size_t>(i)] >= i)
                throw ValidationError("skeleton: parent of joint " + std::to_string(i) +
                                      " must precede it (cycle or forward reference)");
    }

    std::vector<double> rest_positions() const {
        std::vector<double> pos(static_cast<size_t>(k) * 3, 0.0);
        for (int i = 1; i < k; ++i) {
            const int p = parent[static_cast<size_t>(i)];
            for (int c = 0; c < 3; ++c)
                pos[static_cast<size_t>(i) * 3 + c] =
                    pos[static_cast<size_t>(p) * 3 + c] + rest_offsets[static_cast<size_t>(i) * 3 + c];
        }
        return pos;
    }
};

// Axis-angle to rotation matrix (Rodrigues). The angle is the vector norm.
inline std::array<double, 9> rodrigues(const double* aa) {
    const double theta = std::sqrt(aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]);
    std::array<double, 9> r = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    if (theta < 1e-12) return r;
    const double kx = aa[0] / theta, ky = aa[1] / theta, kz = aa[2] / theta;
    const double s = std::sin(theta), c = std::cos(theta), v = 1.0 - c;
    r = {c + kx * kx * v,      kx * ky * v - kz * s, kx * kz * v + ky * s,
         ky * kx * v + kz * s, c + ky * ky * v,      ky * kz * v - kx * s,
         kz * kx * v - ky * s, kz * ky * v + kx * s, c + kz * kz * v};
    return r;
}

inline void mat3_mul(const double* a, const double* b, double* out) {
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int t = 0; t < 3; ++t) acc += a[i * 3 + t] * b[t * 3 + j];
            out[i * 3 + j] = acc;
        }
}

inline void mat3_apply(const double* r, const double* v, double* out) {
    for (int i = 0; i < 3; ++i) out[i] = r[i * 3] * v[0] + r[i * 3 + 1] * v[1] + r[i * 3 + 2] * v[2];
}

inline std::array<double, 9> rot_y(double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c, 0, s, 0, 1, 0, -s, 0, c};
}

// Inverse of rodrigues. The theta ~ pi branch recovers the axis from the
// diagonal, where the usual skew-part formula loses precision.
inline std::array<double, 3> axis_angle_from_mat3(const std::array<double, 9>& r) {
    const double tr = r[0] + r[4] + r[8];
    const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
    const double theta = std::acos(c);
    if (theta < 1e-12) return {0.0, 0.0, 0.0};
    if (theta < std::numbers::pi - 1e-6) {
        const double inv = theta / (2.0 * std::sin(theta));
        return {(r[7] - r[5]) * inv, (r[2] - r[6]) * inv, (r[3] - r[1]) * inv};
    }
    // near pi: |axis_i| from the diagonal, signs from the symmetric part
    double ax = std::sqrt(std::max(0.0, (r[0] + 1.0) / 2.0));
    double ay = std::sqrt(std::max(0.0, (r[4] + 1.0) / 2.0));
    double az = std::sqrt(std::max(0.0, (r[8] + 1.0) / 2.0));
    if (ax >= ay && ax >= az) {
        if (r[1] + r[3] < 0.0) ay = -ay;
        if (r[2] + r[6] < 0.0) az = -az;
    } else if (ay >= az) {
        if (r[1] + r[3] < 0.0) ax = -ax;
        if (r[5] + r[7] < 0.0) az = -az;
    } else {
        if (r[2] + r[6] < 0.0) ax = -ax;
        if (r[5] + r[7] < 0.0) ay = -ay;
    }
    const double norm = std::sqrt(ax * ax + ay * ay + az * az);
    return {theta * ax / norm, theta * ay / norm, theta * az / norm};
}

// Composes a rotation about the vertical axis into the root joint, which
// turns the whole figure in place: forward kinematics of the result equals
// the original positions rotated by rot_y(theta).
inline std::vector<double> rotate_root_y(const std::vector<double>& angles, double theta) {
    if (angles.size() < 3) throw ValidationError("rotate_root_y: need at least the root angles");
    const std::array<double, 9> ry = rot_y(theta);
    const std::array<double, 9> root = rodrigues(angles.data());
    std::array<double, 9> combined;
    mat3_mul(ry.data(), root.data(), combined.data());
    const std::array<double, 3> aa = axis_angle_from_mat3(combined);
    std::vector<double> out = angles;
    out[0] = aa[0];
    out[1] = aa[1];
    out[2] = aa[2];
    return out;
}

inline std::vector<double> rotate_points_y(const std::vector<double>& pts, double theta) {
    const std::array<double, 9> ry = rot_y(theta);
    std::vector<double> out(pts.size());
    for (size_t i = 0; i < pts.size() / 3; ++i) mat3_apply(ry.data(), &pts[i * 3], &out[i * 3]);
    return out;
}

struct FkResult {
    std::vector<double> positions;  // K x 3
    std::vector<double> rotations;  // K x 9, cumulative (root-to-joint product)
};

// Joint position = parent position + parent's cumulative rotation applied to
// the rest offset; each joint's own rotation only affects its descendants.
inline FkResult forward_kinematics(const Skeleton& skel, const std::vector<double>& angles) {
    skel.validate();
    if (angles.size() != static_cast<size_t>(skel.k) * 3)
        throw ValidationError("forward_kinematics: expected " + std::to_string(skel.k * 3) +
                              " angles, got " + std::to_string(angles.size()));
    FkResult fk;
    fk.positions.assign(static_cast<size_t>(skel.k) * 3, 0.0);
    fk.rotations.assign(static_cast<size_t>(skel.k) * 9, 0.0);
    for (int i = 0; i < skel.k; ++i) {
        const auto local = rodrigues(angles.data() + static_cast<size_t>(i) * 3);
        double* cum = fk.rotations.data() + static_cast<size_t>(i) * 9;
        if (i == 0) {
            std::memcpy(cum, local.data(), sizeof(double) * 9);
            continue;
        }
        const int p = skel.parent[static_cast<size_t>(i)];
        const double* pcum = fk.rotations.data() + static_cast<size_t>(p) * 9;
        double rotated[3];
        mat3_apply(pcum, skel.rest_offsets.data() + static_cast<size_t>(i) * 3, rotated);
        for (int c = 0; c < 3; ++c)
            fk.positions[static_cast<size_t>(i) * 3 + c] = fk.positions[static_cast<size_t>(p) * 3 + c] + rotated[c];
        mat3_mul(pcum, local.data(), cum);
    }
    return fk;
}

// ---------------------------------------------------------------------------
// linear blend skinning

// Per-vertex blend over at most 4 joints; unused slots carry joint -1.
struct SkinWeights {
    std::vector<std::array<int, 4>> joints;
    std::vector<std::array<double, 4>> weights;

    void validate(int k) const {
        if (joints.size() != weights.size()) throw ValidationError("skin weights: array size mismatch");
        for (size_t v = 0; v < joints.size(); ++v) {
            double sum = 0.0;
            for (int s = 0; s < 4; ++s) {
                const int j = joints[v][static_cast<size_t>(s)];
                const double w = weights[v][static_cast<size_t>(s)];
                if (j == -1) {
                    if (w != 0.0)
                        throw ValidationError("skin weights: vertex " + std::to_string(v) +
                                              " has weight on empty slot");
                    continue;
                }
                if (j < 0 || j >= k)
                    throw ValidationError("skin weights: vertex " + std::to_string(v) + " references joint " +
                                          std::to_string(j));
                if (w < 0.0)
                    throw ValidationError("skin weights: vertex " + std::to_string(v) + " has negative weight");
                sum += w;
            }
            if (std::fabs(sum - 1.0) > 1e-6)
                throw ValidationError("skin weights: vertex " + std::to_string(v) + " weights sum to " +
                                      std::to_string(sum));
        }
    }
};

// v' = sum_j w_j * (pos_j + R_j (v - rest_pos_j)).
inline std::vector<double> skin_mesh(const std::vector<double>& rest_vertices, const Skeleton& skel,
                                     const FkResult& fk, const SkinWeights& weights) {
    const size_t n = rest_vertices.size() / 3;
    if (weights.joints.size() != n)
        throw ValidationError("skin_mesh: " + std::to_string(weights.joints.size()) + " weight rows for " +
                              std::to_string(n) + " vertices");
    weights.validate(skel.k);
    const std::vector<double> rest_pos = skel.rest_positions();
    std::vector<double> out(n * 3, 0.0);
    for (size_t v = 0; v < n; ++v) {
        const double* rv = rest_vertices.data() + v * 3;
        double* ov = out.data() + v * 3;
        for (int s = 0; s < 4; ++s) {
            const int j = weights.joints[v][static_cast<size_t>(s)];
            if (j == -1) continue;
            const double w = weights.weights[v][static_cast<size_t>(s)];
            const double* rj = fk.rotations.data() + static_cast<size_t>(j) * 9;
            const double local[3] = {rv[0] - rest_pos[static_cast<size_t>(j) * 3],
                                     rv[1] - rest_pos[static_cast<size_t>(j) * 3 + 1],
                                     rv[2] - rest_pos[static_cast<size_t>(j) * 3 + 2]};
            double moved[3];
            mat3_apply(rj, local, moved);
            for (int c = 0; c < 3; ++c)
                ov[c] += w * (fk.positions[static_cast<size_t>(j) * 3 + c] + moved[c]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// presets and the capsule rig

enum class PresetKind : uint8_t { body = 0, hand = 1 };
enum class FeatureMode : uint8_t { oracle_mlp = 0, tiny_cnn = 1 };

constexpr int kRasterSize = 64;

struct Preset {
    PresetKind kind = PresetKind::body;
    Skeleton skeleton;
    int rings = 0;               // cross-section rings per bone tube
    int segments = 0;            // vertices per ring
    std::vector<double> bone_radius;  // per bone (bone b connects parent(b+1) -> b+1)
    double max_angle = 0.3;      // pose sampling limit (radians per axis)
    double raster_window = 1.2;  // half-extent of the orthographic silhouette
};

inline Preset body_preset() {
    Preset p;
    p.kind = PresetKind::body;
    Skeleton& s = p.skeleton;
    s.k = 14;
    s.names = {"pelvis", "spine",   "neck",    "head",    "l_shoulder", "l_elbow", "l_wrist",
               "r_shoulder", "r_elbow", "r_wrist", "l_knee",  "l_ankle",    "r_knee",  "r_ankle"};
    s.parent = {0, 0, 1, 2, 2, 4, 5, 2, 7, 8, 0, 10, 0, 12};
    s.rest_offsets = {
        0,     0,     0,  // pelvis (root)
        0,     0.25,  0,  // spine
        0,     0.25,  0,  // neck
        0,     0.15,  0,  // head
        0.18,  0,     0,  // l_shoulder
        0.28,  0,     0,  // l_elbow
        0.25,  0,     0,  // l_wrist
        -0.18, 0,     0,  // r_shoulder
        -0.28, 0,     0,  // r_elbow
        -0.25, 0,     0,  // r_wrist
        0.10,  -0.45, 0,  // l_knee
        0,     -0.45, 0,  // l_ankle
        -0.10, -0.45, 0,  // r_knee
        0,     -0.45, 0,  // r_ankle
    };
    p.rings = 16;
    p.segments = 12;  // 13 bones * 16 * 12 = 2496 vertices
    p.bone_radius = {0.11, 0.06, 0.07, 0.05, 0.045, 0.035, 0.05, 0.045, 0.035, 0.08, 0.06, 0.08, 0.06};
    p.max_angle = 0.4;
    p.raster_window = 1.2;
    return p;
}

inline Preset hand_preset() {
    Preset p;
    p.kind = PresetKind::hand;
    Skeleton& s = p.skeleton;
    s.k = 21;
    s.names = {"wrist"};
    s.parent = {0};
    s.rest_offsets = {0, 0, 0};
    const char* fingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
    const char* levels[4] = {"mcp", "pip", "dip", "tip"};
    // splayed in x, extended in y; thumb shorter and offset sideways
    const double base_x[5] = {-0.035, -0.02, 0.0, 0.02, 0.038};
    const double base_y[5] = {0.02, 0.085, 0.09, 0.085, 0.075};
    const double seg_len[5] = {0.028, 0.032, 0.035, 0.032, 0.026};
    for (int f = 0; f < 5; ++f) {
        for (int l = 0; l < 4; ++l) {
            s.names.push_back(std::string(fingers[f]) + "_" + levels[l]);
            const int id = 1 + f * 4 + l;
            s.parent.push_back(l == 0 ? 0 : id - 1);
            if (l == 0) {
                s.rest_offsets.insert(s.rest_offsets.end(), {base_x[f], base_y[f], 0.0});
            } else {
                const double shrink = 1.0 - 0.15 * l;
                s.rest_offsets.insert(s.rest_offsets.end(), {0.0, seg_len[f] * shrink, 0.0});
            }
        }
    }
    p.rings = 8;
    p.segments = 8;  // 20 bones * 8 * 8 = 1280 vertices
    p.bone_radius.assign(20, 0.008);
    for (int f = 0; f < 5; ++f) p.bone_radius[static_cast<size_t>(f) * 4] = 0.011;  // knuckle bones
    p.max_angle = 0.3;
    p.raster_window = 0.2;
    return p;
}

inline Preset make_preset(PresetKind kind) {
    return kind == PresetKind::body ? body_preset() : hand_preset();
}

// Rest mesh + bindings + regressor, all deterministic functions of a preset.
// One tube per bone, each ring a circle perpendicular to the bone axis;
// every vertex binds rigidly to the bone's parent joint, so the regressor
// ring at a joint moves exactly with that joint.
struct SynthRig {
    Preset preset;
    std::vector<double> rest_vertices;  // M_full x 3
    std::vector<Face> faces;
    SkinWeights weights;
    JointRegressor regressor;

    int m_full() const { return static_cast<int>(rest_vertices.size() / 3); }
};

inline SynthRig build_rig(const Preset& preset) {
    preset.skeleton.validate();
    const int k = preset.skeleton.k;
    const int n_bones = k - 1;
    if (static_cast<int>(preset.bone_radius.size()) != n_bones)
        throw ValidationError("preset: need one radius per bone, got " +
                              std::to_string(preset.bone_radius.size()));
    const int R = preset.rings, S = preset.segments;
    SynthRig rig;
    rig.preset = preset;
    const std::vector<double> rest_pos = preset.skeleton.rest_positions();
    const int m_full = n_bones * R * S;
    rig.rest_vertices.reserve(static_cast<size_t>(m_full) * 3);
    rig.weights.joints.assign(static_cast<size_t>(m_full), {-1, -1, -1, -1});
    rig.weights.weights.assign(static_cast<size_t>(m_full), {0, 0, 0, 0});
    for (int b = 0; b < n_bones; ++b) {
        const int child = b + 1;
        const int par = preset.skeleton.parent[static_cast<size_t>(child)];
        const double* a = rest_pos.data() + static_cast<size_t>(par) * 3;
        const double* c = rest_pos.data() + static_cast<size_t>(child) * 3;
        double d[3] = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
        const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        if (len < 1e-9)
            throw ValidationError("preset: zero-length bone at joint " + std::to_string(child));
        for (double& x : d) x /= len;
        // frame perpendicular to the bone: start from the axis least aligned with it
        int ax = 0;
        double best = std::fabs(d[0]);
        for (int i = 1; i < 3; ++i)
            if (std::fabs(d[i]) < best) {
                best = std::fabs(d[i]);
                ax = i;
            }
        double e1[3] = {0, 0, 0};
        e1[ax] = 1.0;
        const double proj = e1[0] * d[0] + e1[1] * d[1] + e1[2] * d[2];
        for (int i = 0; i < 3; ++i) e1[i] -= proj * d[i];
        const double e1n = std::sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]);
        for (double& x : e1) x /= e1n;
        const double e2[3] = {d[1] * e1[2] - d[2] * e1[1], d[2] * e1[0] - d[0] * e1[2],
                              d[0] * e1[1] - d[1] * e1[0]};
        const double radius = preset.bone_radius[static_cast<size_t>(b)];
        const int base = b * R * S;
        for (int r = 0; r < R; ++r) {
            const double t = static_cast<double>(r) / (R - 1);
            const double cx = a[0] + t * (c[0] - a[0]);
            const double cy = a[1] + t * (c[1] - a[1]);
            const double cz = a[2] + t * (c[2] - a[2]);
            for (int s = 0; s < S; ++s) {
                const double phi = 2.0 * 3.14159265358979323846 * s / S;
                const double co = std::cos(phi), si = std::sin(phi);
                rig.rest_vertices.push_back(cx + radius * (co * e1[0] + si * e2[0]));
                rig.rest_vertices.push_back(cy + radius * (co * e1[1] + si * e2[1]));
                rig.rest_vertices.push_back(cz + radius * (co * e1[2] + si * e2[2]));
                const int vi = base + r * S + s;
                rig.weights.joints[static_cast<size_t>(vi)][0] = par;
                rig.weights.weights[static_cast<size_t>(vi)][0] = 1.0;
            }
        }
        // quad strip between consecutive rings
        for (int r = 0; r + 1 < R; ++r)
            for (int s = 0; s < S; ++s) {
                const int s2 = (s + 1) % S;
                const int v00 = base + r * S + s, v01 = base + r * S + s2;
                const int v10 = base + (r + 1) * S + s, v11 = base + (r + 1) * S + s2;
                rig.faces.push_back({v00, v10, v11});
                rig.faces.push_back({v00, v11, v01});
            }
    }
    // regressor: joint 0 reads the first ring of bone 0; joint j>0 reads the
    // last ring of its incoming bone. Both rings move rigidly with the joint.
    rig.regressor.k = k;
    rig.regressor.m_full = m_full;
    rig.regressor.g.assign(static_cast<size_t>(k) * static_cast<size_t>(m_full), 0.0);
    const double w = 1.0 / S;
    for (int s = 0; s < S; ++s) rig.regressor.g[static_cast<size_t>(s)] = w;  // joint 0, bone 0 ring 0
    for (int j = 1; j < k; ++j) {
        const int base = (j - 1) * R * S + (R - 1) * S;
        for (int s = 0; s < S; ++s)
            rig.regressor.g[static_cast<size_t>(j) * m_full + base + s] = w;
    }
    rig.regressor.validate();
    rig.weights.validate(k);
    return rig;
}

inline std::vector<double> posed_vertices(const SynthRig& rig, const std::vector<double>& angles) {
    const FkResult fk = forward_kinematics(rig.preset.skeleton, angles);
    return skin_mesh(rig.rest_vertices, rig.preset.skeleton, fk, rig.weights);
}

// ---------------------------------------------------------------------------
// feature providers

// Deterministic pose embedding: a fixed-seed two-layer tanh network applied
// to the flattened joint angles. Weights depend only on (K, H), never on the
// dataset seed, so the same pose always maps to the same feature.
inline std::vector<double> make_oracle_feature(const std::vector<double>& angles, int h) {
    const int in = static_cast<int>(angles.size());
    if (in < 1 || h < 1) throw ValidationError("make_oracle_feature: empty input or output");
    const int hidden = 128;
    Rng rng(derive_seed(0x5EEDFACEu, static_cast<uint64_t>(in), static_cast<uint64_t>(h)));
    std::vector<double> w1(static_cast<size_t>(in) * hidden);
    std::vector<double> w2(static_cast<size_t>(hidden) * h);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (auto& x : w1) x = normal01(rng) * s1;
    for (auto& x : w2) x = normal01(rng) * s2;
    std::vector<double> mid(hidden);
    for (int j = 0; j < hidden; ++j) {
        double acc = 0.0;
        for (int i = 0; i < in; ++i) acc += angles[static_cast<size_t>(i)] * w1[static_cast<size_t>(i) * hidden + j];
        mid[static_cast<size_t>(j)] = std::tanh(acc * 2.0);
    }
    std::vector<double> out(static_cast<size_t>(h));
    for (int j = 0; j < h; ++j) {
        double acc = 0.0;
        for (int i = 0; i < hidden; ++i) acc += mid[static_cast<size_t>(i)] * w2[static_cast<size_t>(i) * h + j];
        out[static_cast<size_t>(j)] = std::tanh(acc);
    }
    return out;
}

// Orthographic binary silhouette of the posed mesh on a kRasterSize^2 grid.
// Each vertex splats a plus-shaped footprint so thin tubes stay connected.
inline std::vector<double> rasterize_silhouette(const std::vector<double>& v3d, double half_extent) {
    std::vector<double> img(static_cast<size_t>(kRasterSize) * kRasterSize, 0.0);
    const size_t n = v3d.size() / 3;
    for (size_t i = 0; i < n; ++i) {
        const double x = v3d[i * 3], y = v3d[i * 3 + 1];
        const int col = static_cast<int>(std::floor((x + half_extent) / (2.0 * half_extent) * kRasterSize));
        const int row = static_cast<int>(std::floor((half_extent - y) / (2.0 * half_extent) * kRasterSize));
        const int offs[5][2] = {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (const auto& o : offs) {
            const int r = row + o[0], c = col + o[1];
            if (r >= 0 && r < kRasterSize && c >= 0 && c < kRasterSize)
                img[static_cast<size_t>(r) * kRasterSize + c] = 1.0;
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// dataset

struct TrainingSample {
    uint8_t alpha = 1;              // 3D annotations available
    uint8_t beta = 1;               // 2D annotations available
    std::vector<double> angles;     // K x 3 (pose that produced the sample)
    std::array<double, 3> gt_cam{}; // s, t_x, t_y
    std::vector<double> feature;    // H (oracle_mlp) or kRasterSize^2 (tiny_cnn)
    std::vector<double> v3d;        // M_full x 3
    std::vector<double> j3d;        // K x 3
    std::vector<double> j2d;        // K x 2
};

struct Dataset {
    PresetKind preset = PresetKind::body;
    FeatureMode feature_mode = FeatureMode::oracle_mlp;
    int k = 0;
    int m_full = 0;
    int h = 0;
    uint64_t seed = 0;
    double p_2d_only = 0.0;
    std::vector<TrainingSample> samples;

    int feature_len() const { return feature_mode == FeatureMode::oracle_mlp ? h : kRasterSize * kRasterSize; }
};

struct DatasetConfig {
    PresetKind preset = PresetKind::body;
    FeatureMode feature_mode = FeatureMode::oracle_mlp;
    int n = 64;
    int h = 64;
    uint64_t seed = 0;
    double p_2d_only = 0.0;
    int threads = 1;
};

// Generates n samples, each from its own derived seed (identical output for
// any thread count). Exactly floor(p_2d_only * n) samples get alpha=0.
inline Dataset generate_dataset(const DatasetConfig& cfg) {
    if (cfg.n < 1) throw ValidationError("generate_dataset: n must be >= 1");
    if (cfg.p_2d_only < 0.0 || cfg.p_2d_only > 1.0)
        throw ValidationError("generate_dataset: p_2d_only outside [0,1]");
    if (cfg.h < 1) throw ValidationError("generate_dataset: h must be >= 1");
    const SynthRig rig = build_rig(make_preset(cfg.preset));
    Dataset ds;
    ds.preset = cfg.preset;
    ds.feature_mode = cfg.feature_mode;
    ds.k = rig.preset.skeleton.k;
    ds.m_full = rig.m_full();
    ds.h = cfg.h;
    ds.seed = cfg.seed;
    ds.p_2d_only = cfg.p_2d_only;
    ds.samples.resize(static_cast<size_t>(cfg.n));

    parallel_for(cfg.n, cfg.threads, [&](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            TrainingSample& smp = ds.samples[static_cast<size_t>(i)];
            Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(i), 1));
            smp.angles.resize(static_cast<size_t>(ds.k) * 3);
            for (auto& a : smp.angles) a = uniform_in(rng, -rig.preset.max_angle, rig.preset.max_angle);
            smp.gt_cam = {uniform_in(rng, 0.9, 1.1), uniform_in(rng, -0.05, 0.05),
                          uniform_in(rng, -0.05, 0.05)};
            const FkResult fk = forward_kinematics(rig.preset.skeleton, smp.angles);
            smp.j3d = fk.positions;
            smp.v3d = skin_mesh(rig.rest_vertices, rig.preset.skeleton, fk, rig.weights);
            smp.j2d.resize(static_cast<size_t>(ds.k) * 2);
            for (int j = 0; j < ds.k; ++j) {
                smp.j2d[static_cast<size_t>(j) * 2] =
                    smp.gt_cam[0] * smp.j3d[static_cast<size_t>(j) * 3] + smp.gt_cam[1];
                smp.j2d[static_cast<size_t>(j) * 2 + 1] =
                    smp.gt_cam[0] * smp.j3d[static_cast<size_t>(j) * 3 + 1] + smp.gt_cam[2];
            }
            smp.feature = cfg.feature_mode == FeatureMode::oracle_mlp
                              ? make_oracle_feature(smp.angles, cfg.h)
                              : rasterize_silhouette(smp.v3d, rig.preset.raster_window);
        }
    });

    const int n_2d = static_cast<int>(cfg.p_2d_only * cfg.n);
    if (n_2d > 0) {
        Rng pick_rng(derive_seed(cfg.seed, 0x2D, 0));
        for (uint32_t idx : sample_distinct(pick_rng, static_cast<uint32_t>(cfg.n), static_cast<uint32_t>(n_2d)))
            ds.samples[idx].alpha = 0;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// dataset binary format
//
// header: "MSYN", u32 version, u32 n, u32 K, u32 M_full, u32 H,
//         u8 feature_mode, u8 preset, u8 pad[6], u64 seed, f64 p_2d_only
// record: u8 alpha, u8 beta, u8 pad[6], f64 angles[K*3], f64 cam[3],
//         f64 feature[H or 4096], f64 v3d[M_full*3], f64 j3d[K*3], f64 j2d[K*2]
// All values little-endian; doubles are raw IEEE-754 bits.

constexpr uint32_t kDatasetVersion = 1;

inline void save_dataset(const std::string& path, const Dataset& ds) {
    detail::BinWriter w(path);
    w.bytes("MSYN", 4);
    w.u32(kDatasetVersion);
    w.u32(static_cast<uint32_t>(ds.samples.size()));
    w.u32(static_cast<uint32_t>(ds.k));
    w.u32(static_cast<uint32_t>(ds.m_full));
    w.u32(static_cast<uint32_t>(ds.h));
    w.u8(static_cast<uint8_t>(ds.feature_mode));
    w.u8(static_cast<uint8_t>(ds.preset));
    for (int i = 0; i < 6; ++i) w.u8(0);
    w.u64(ds.seed);
    w.f64(ds.p_2d_only);
    const size_t flen = static_cast<size_t>(ds.feature_len());
    for (const TrainingSample& s : ds.samples) {
        if (s.angles.size() != static_cast<size_t>(ds.k) * 3 || s.feature.size() != flen ||
            s.v3d.size() != static_cast<size_t>(ds.m_full) * 3 ||
            s.j3d.size() != static_cast<size_t>(ds.k) * 3 || s.j2d.size() != static_cast<size_t>(ds.k) * 2)
            throw ValidationError("save_dataset: sample arrays inconsistent with header");
        w.u8(s.alpha);
        w.u8(s.beta);
        for (int i = 0; i < 6; ++i) w.u8(0);
        w.f64s(s.angles.data(), s.angles.size());
        w.f64s(s.gt_cam.data(), 3);
        w.f64s(s.feature.data(), s.feature.size());
        w.f64s(s.v3d.data(), s.v3d.size());
        w.f64s(s.j3d.data(), s.j3d.size());
        w.f64s(s.j2d.data(), s.j2d.size());
    }
    if (!w.out) throw IoError("write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
    detail::BinReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "MSYN", 4) != 0) throw ParseError(path + ": not a dataset file (bad magic)");
    const uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw ParseError(path + ": unsupported dataset version " + std::to_string(version));
    Dataset ds;
    const uint32_t n = r.u32();
    ds.k = static_cast<int>(r.u32());
    ds.m_full = static_cast<int>(r.u32());
    ds.h = static_cast<int>(r.u32());
    ds.feature_mode = static_cast<FeatureMode>(r.u8());
    ds.preset = static_cast<PresetKind>(r.u8());
    for (int i = 0; i < 6; ++i) r.u8();
    ds.seed = r.u64();
    ds.p_2d_only = r.f64();
    if (ds.k < 1 || ds.m_full < 1 || ds.h < 1) throw ParseError(path + ": non-positive sizes in header");
    const size_t flen = static_cast<size_t>(ds.feature_len());
    ds.samples.resize(n);
    for (TrainingSample& s : ds.samples) {
        s.alpha = r.u8();
        s.beta = r.u8();
        for (int i = 0; i < 6; ++i) r.u8();
        s.angles.resize(static_cast<size_t>(ds.k) * 3);
        r.f64s(s.angles.data(), s.angles.size());
        r.f64s(s.gt_cam.data(), 3);
        s.feature.resize(flen);
        r.f64s(s.feature.data(), flen);
        s.v3d.resize(static_cast<size_t>(ds.m_full) * 3);
        r.f64s(s.v3d.data(), s.v3d.size());
        s.j3d.resize(static_cast<size_t>(ds.k) * 3);
        r.f64s(s.j3d.data(), s.j3d.size());
        s.j2d.resize(static_cast<size_t>(ds.k) * 2);
        r.f64s(s.j2d.data(), s.j2d.size());
    }
    return ds;
}

}  // namespace mrt
