#pragma once

// Template-mesh plumbing: full/coarse rest-pose geometry, the row-stochastic
// coarse selection map, the joint-regressor matrix, and the file formats they
// travel in (Wavefront OBJ text, regressor CSV).

#include <array>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mrt/common.hpp"

namespace mrt {

using Face = std::array<int, 3>;

// Regresses K joints from M_full mesh vertices: J = G * V. Rows are
// affine/convex combinations, so they must sum to 1.
struct JointRegressor {
    int k = 0;
    int m_full = 0;
    std::vector<double> g;  // K x M_full, row-major

    void validate() const {
        if (k < 1 || m_full < 1 || g.size() != static_cast<size_t>(k) * static_cast<size_t>(m_full))
            throw ValidationError("joint regressor: storage does not match " + std::to_string(k) + "x" +
                                  std::to_string(m_full));
        for (int i = 0; i < k; ++i) {
            double sum = 0.0;
            for (int j = 0; j < m_full; ++j) sum += g[static_cast<size_t>(i) * m_full + j];
            if (std::fabs(sum - 1.0) > 1e-6)
                throw ValidationError("joint regressor: row " + std::to_string(i) + " sums to " +
                                      std::to_string(sum) + ", expected 1");
        }
    }
};

// Rest-pose mesh at two resolutions plus the maps tying them together.
// Vertices are flat row-major [n,3], in meters, pelvis at the origin.
struct TemplateMesh {
    std::vector<double> full_vertices;    // M_full x 3
    std::vector<Face> faces;              // over full vertices
    std::vector<double> coarse_vertices;  // M x 3
    std::vector<Face> coarse_faces;       // optional (may be empty)
    std::vector<double> downsample_map;   // M x M_full, row-stochastic
    std::vector<int> coarse_source;       // full index selected for each coarse vertex
    std::vector<int> nearest_coarse;      // nearest coarse vertex for each full vertex

    int m_full() const { return static_cast<int>(full_vertices.size() / 3); }
    int m() const { return static_cast<int>(coarse_vertices.size() / 3); }

    void validate() const {
        const int mf = m_full();
        const int mc = m();
        if (mf < 1 || mc < 1) throw ValidationError("template mesh: empty vertex set");
        if (mc > mf)
            throw ValidationError("template mesh: coarse count " + std::to_string(mc) +
                                  " exceeds full count " + std::to_string(mf));
        if (downsample_map.size() != static_cast<size_t>(mc) * static_cast<size_t>(mf))
            throw ValidationError("template mesh: downsample map is not M x M_full");
        for (int i = 0; i < mc; ++i) {
            double sum = 0.0;
            for (int j = 0; j < mf; ++j) {
                const double v = downsample_map[static_cast<size_t>(i) * mf + j];
                if (v < 0.0)
                    throw ValidationError("template mesh: negative downsample weight at row " +
                                          std::to_string(i));
                sum += v;
            }
            if (std::fabs(sum - 1.0) > 1e-6)
                throw ValidationError("template mesh: downsample row " + std::to_string(i) +
                                      " sums to " + std::to_string(sum));
        }
        auto check_faces = [](const std::vector<Face>& fs, int n, const char* which) {
            for (size_t t = 0; t < fs.size(); ++t)
                for (int c : fs[t])
                    if (c < 0 || c >= n)
                        throw ValidationError(std::string("template mesh: ") + which + " face " +
                                              std::to_string(t) + " references vertex " + std::to_string(c) +
                                              " outside [0," + std::to_string(n) + ")");
        };
        check_faces(faces, mf, "full");
        check_faces(coarse_faces, mc, "coarse");
        if (!coarse_faces.empty()) {
            std::vector<char> used(static_cast<size_t>(mc), 0);
            for (const Face& f : coarse_faces)
                for (int c : f) used[static_cast<size_t>(c)] = 1;
            for (int i = 0; i < mc; ++i)
                if (!used[static_cast<size_t>(i)])
                    throw ValidationError("template mesh: coarse vertex " + std::to_string(i) +
                                          " unused by any coarse face");
        }
    }
};

// ---------------------------------------------------------------------------
// Wavefront OBJ I/O (v and f records only; polygons fan-triangulated)

inline void load_obj(const std::string& path, std::vector<double>& vertices, std::vector<Face>& faces) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    vertices.clear();
    faces.clear();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            double x, y, z;
            if (!(ls >> x >> y >> z))
                throw ParseError(path + ":" + std::to_string(lineno) + ": malformed vertex record");
            vertices.push_back(x);
            vertices.push_back(y);
            vertices.push_back(z);
        } else if (tag == "f") {
            std::vector<int> poly;
            std::string field;
            while (ls >> field) {
                // index may carry /texture/normal suffixes
                size_t slash = field.find('/');
                std::string head = slash == std::string::npos ? field : field.substr(0, slash);
                int idx = 0;
                try {
                    size_t used = 0;
                    idx = std::stoi(head, &used);
                    if (used != head.size()) throw std::invalid_argument(head);
                } catch (const std::exception&) {
                    throw ParseError(path + ":" + std::to_string(lineno) + ": malformed face index '" +
                                     field + "'");
                }
                if (idx < 1 || static_cast<size_t>(idx) > vertices.size() / 3)
                    throw ValidationError(path + ":" + std::to_string(lineno) + ": face index " +
                                          std::to_string(idx) + " out of range (have " +
                                          std::to_string(vertices.size() / 3) + " vertices)");
                poly.push_back(idx - 1);
            }
            if (poly.size() < 3)
                throw ParseError(path + ":" + std::to_string(lineno) + ": face with fewer than 3 vertices");
            for (size_t t = 1; t + 1 < poly.size(); ++t)
                faces.push_back({poly[0], poly[t], poly[t + 1]});
        }
        // other record types (vn, vt, o, g, ...) are ignored
    }
}

inline void save_obj(const std::string& path, const std::vector<double>& vertices,
                     const std::vector<Face>& faces) {
    if (vertices.size() % 3 != 0) throw ValidationError("save_obj: vertex array length not divisible by 3");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << std::setprecision(17);
    const size_t n = vertices.size() / 3;
    for (size_t i = 0; i < n; ++i)
        out << "v " << vertices[i * 3] << ' ' << vertices[i * 3 + 1] << ' ' << vertices[i * 3 + 2] << '\n';
    for (const Face& f : faces) {
        for (int c : f)
            if (c < 0 || static_cast<size_t>(c) >= n)
                throw ValidationError("save_obj: face index " + std::to_string(c) + " out of range");
        out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// regressor CSV (header `#rows=K cols=M_full`, then K comma-separated rows)

inline void save_regressor_csv(const std::string& path, const JointRegressor& reg) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "#rows=" << reg.k << " cols=" << reg.m_full << "\n";
    out << std::setprecision(17);
    for (int i = 0; i < reg.k; ++i) {
        for (int j = 0; j < reg.m_full; ++j)
            out << (j ? "," : "") << reg.g[static_cast<size_t>(i) * reg.m_full + j];
        out << "\n";
    }
    if (!out) throw IoError("write failed for " + path);
}

inline JointRegressor load_regressor_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string header;
    if (!std::getline(in, header)) throw ParseError(path + ":1: empty file");
    JointRegressor reg;
    if (std::sscanf(header.c_str(), "#rows=%d cols=%d", &reg.k, &reg.m_full) != 2)
        throw ParseError(path + ":1: expected header '#rows=K cols=M_full', got '" + header + "'");
    if (reg.k < 1 || reg.m_full < 1) throw ParseError(path + ":1: non-positive dimensions in header");
    reg.g.reserve(static_cast<size_t>(reg.k) * static_cast<size_t>(reg.m_full));
    std::string line;
    for (int i = 0; i < reg.k; ++i) {
        if (!std::getline(in, line))
            throw ParseError(path + ":" + std::to_string(i + 2) + ": missing row " + std::to_string(i));
        std::istringstream ls(line);
        std::string cell;
        int cols = 0;
        while (std::getline(ls, cell, ',')) {
            try {
                size_t used = 0;
                reg.g.push_back(std::stod(cell, &used));
                if (used != cell.size() && cell.find_first_not_of(" \t\r", used) != std::string::npos)
                    throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(i + 2) + ": bad number '" + cell + "'");
            }
            ++cols;
        }
        if (cols != reg.m_full)
            throw ParseError(path + ":" + std::to_string(i + 2) + ": expected " +
                             std::to_string(reg.m_full) + " columns, got " + std::to_string(cols));
    }
    reg.validate();
    return reg;
}

// ---------------------------------------------------------------------------
// coarse-mesh construction

namespace detail {

inline double sq_dist3(const double* a, const double* b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace detail

// Farthest-point subset of the full vertex set. Always starts from vertex 0;
// each round adds the vertex farthest from the current selection (lowest
// index on ties), which makes the result a pure function of the geometry.
inline std::vector<int> farthest_point_sample(const std::vector<double>& vertices, int target_m) {
    const int n = static_cast<int>(vertices.size() / 3);
    if (target_m < 4) throw ValidationError("farthest_point_sample: need at least 4 points, got " +
                                            std::to_string(target_m));
    if (target_m > n)
        throw ValidationError("farthest_point_sample: requested " + std::to_string(target_m) +
                              " of only " + std::to_string(n) + " vertices");
    std::vector<int> picked;
    picked.reserve(static_cast<size_t>(target_m));
    std::vector<double> dist(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
    int cur = 0;
    picked.push_back(cur);
    for (int round = 1; round < target_m; ++round) {
        double best = -1.0;
        int best_idx = -1;
        const double* c = vertices.data() + static_cast<size_t>(cur) * 3;
        for (int i = 0; i < n; ++i) {
            const double d = detail::sq_dist3(vertices.data() + static_cast<size_t>(i) * 3, c);
            if (d < dist[static_cast<size_t>(i)]) dist[static_cast<size_t>(i)] = d;
            if (dist[static_cast<size_t>(i)] > best) {
                best = dist[static_cast<size_t>(i)];
                best_idx = i;
            }
        }
        cur = best_idx;
        picked.push_back(cur);
        dist[static_cast<size_t>(cur)] = 0.0;
    }
    return picked;
}

// Builds the coarse resolution of a full mesh: farthest-point vertex subset,
// one-hot selection map, and nearest-coarse assignment for every full vertex.
// Coarse faces are left empty (the coarse mesh is only a regression target).
inline TemplateMesh build_coarse(const std::vector<double>& full_vertices, const std::vector<Face>& faces,
                                 int target_m) {
    TemplateMesh mesh;
    mesh.full_vertices = full_vertices;
    mesh.faces = faces;
    const int mf = mesh.m_full();
    mesh.coarse_source = farthest_point_sample(full_vertices, target_m);
    mesh.coarse_vertices.resize(static_cast<size_t>(target_m) * 3);
    mesh.downsample_map.assign(static_cast<size_t>(target_m) * static_cast<size_t>(mf), 0.0);
    for (int i = 0; i < target_m; ++i) {
        const int src = mesh.coarse_source[static_cast<size_t>(i)];
        for (int c = 0; c < 3; ++c)
            mesh.coarse_vertices[static_cast<size_t>(i) * 3 + c] = full_vertices[static_cast<size_t>(src) * 3 + c];
        mesh.downsample_map[static_cast<size_t>(i) * mf + src] = 1.0;
    }
    mesh.nearest_coarse.resize(static_cast<size_t>(mf));
    for (int j = 0; j < mf; ++j) {
        double best = std::numeric_limits<double>::infinity();
        int best_i = 0;
        for (int i = 0; i < target_m; ++i) {
            const double d = detail::sq_dist3(full_vertices.data() + static_cast<size_t>(j) * 3,
                                             mesh.coarse_vertices.data() + static_cast<size_t>(i) * 3);
            if (d < best) {
                best = d;
                best_i = i;
            }
        }
        mesh.nearest_coarse[static_cast<size_t>(j)] = best_i;
    }
    mesh.validate();
    return mesh;
}

// J[K,3] = G[K,M_full] * V[M_full,3] (plain, non-graph version).
inline std::vector<double> regress_joints(const JointRegressor& reg, const std::vector<double>& v_full) {
    if (v_full.size() != static_cast<size_t>(reg.m_full) * 3)
        throw ShapeError("regress_joints: vertex array has " + std::to_string(v_full.size() / 3) +
                         " rows, regressor expects " + std::to_string(reg.m_full));
    std::vector<double> joints(static_cast<size_t>(reg.k) * 3, 0.0);
    for (int i = 0; i < reg.k; ++i)
        for (int j = 0; j < reg.m_full; ++j) {
            const double w = reg.g[static_cast<size_t>(i) * reg.m_full + j];
            if (w == 0.0) continue;
            for (int c = 0; c < 3; ++c)
                joints[static_cast<size_t>(i) * 3 + c] += w * v_full[static_cast<size_t>(j) * 3 + c];
        }
    return joints;
}

}  // namespace mrt
