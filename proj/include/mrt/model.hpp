#pragma once

// The regression network. One token per joint and per coarse vertex; each
// token is the image feature concatenated with that element's template
// coordinate. Tokens run through a transformer encoder whose width shrinks
// between blocks, a per-token linear head reads off 3D coordinates, a camera
// head reads weak-perspective parameters off the pooled tokens, and a learned
// upsampler expands the coarse vertex set to the full mesh. During training a
// random subset of input tokens is replaced by a learned mask token.

#include <map>
#include <unordered_set>

#include "mrt/common.hpp"
#include "mrt/mesh.hpp"
#include "mrt/synth.hpp"
#include "mrt/tensor.hpp"

namespace mrt {

enum class PositionalMode : uint8_t { template_coords = 0, sinusoidal = 1 };

struct BlockSpec {
    int hidden_dim = 0;
    int layers = 0;
    int heads = 0;
};

struct EncoderConfig {
    int feature_dim = 64;  // H; token width is H+3
    std::vector<BlockSpec> blocks;
    double mvm_max_fraction = 0.3;
    PositionalMode positional = PositionalMode::template_coords;
    int upsampler_hidden = 128;

    int input_width() const { return feature_dim + 3; }
    int last_width() const { return blocks.empty() ? input_width() : blocks.back().hidden_dim; }

    // Three blocks of four layers and four heads at widths H/2, H/4, H/8;
    // the output head then maps the last width to 3.
    static std::vector<BlockSpec> default_schedule(int h) {
        return {{h / 2, 4, 4}, {h / 4, 4, 4}, {h / 8, 4, 4}};
    }

    static EncoderConfig defaults(int h) {
        EncoderConfig cfg;
        cfg.feature_dim = h;
        cfg.blocks = default_schedule(h);
        return cfg;
    }

    void validate() const {
        if (feature_dim < 1) throw ConfigError("encoder config: feature_dim must be >= 1");
        if (blocks.empty()) throw ConfigError("encoder config: need at least one block");
        if (mvm_max_fraction < 0.0 || mvm_max_fraction > 1.0)
            throw ConfigError("encoder config: mvm_max_fraction outside [0,1]");
        if (upsampler_hidden < 1) throw ConfigError("encoder config: upsampler_hidden must be >= 1");
        int prev = input_width();
        for (size_t i = 0; i < blocks.size(); ++i) {
            const BlockSpec& b = blocks[i];
            if (b.hidden_dim < 1 || b.layers < 1 || b.heads < 1)
                throw ConfigError("encoder config: block " + std::to_string(i) + " has non-positive fields");
            if (b.hidden_dim > prev)
                throw ConfigError("encoder config: block " + std::to_string(i) + " widens " +
                                  std::to_string(prev) + " -> " + std::to_string(b.hidden_dim) +
                                  " (widths must not increase)");
            if (i > 0 && b.hidden_dim == prev)
                throw ConfigError("encoder config: block " + std::to_string(i) +
                                  " repeats width " + std::to_string(prev) +
                                  " (successive widths must strictly decrease)");
            if (b.hidden_dim % b.heads != 0)
                throw ConfigError("encoder config: block " + std::to_string(i) + " heads " +
                                  std::to_string(b.heads) + " do not divide width " +
                                  std::to_string(b.hidden_dim));
            prev = b.hidden_dim;
        }
    }
};

// ---------------------------------------------------------------------------

struct Model {
    EncoderConfig cfg;
    int k = 0;
    int m = 0;
    int m_full = 0;
    FeatureMode feature_mode = FeatureMode::oracle_mlp;
    std::vector<double> query_pos;           // (K+M) x 3 positional part of each query
    std::vector<double> g_matrix;            // K x M_full joint regressor
    std::vector<double> coarse_template;     // M x 3 (for reference/inspection)
    std::vector<int> coarse_source;          // M full-mesh indices the coarse set came from
    ParamStore params;

    int tokens() const { return k + m; }

    // Structural fingerprint: everything that determines parameter shapes
    // and the meaning of checkpointed values.
    uint64_t digest() const {
        std::string s = "v1|h=" + std::to_string(cfg.feature_dim) + "|k=" + std::to_string(k) +
                        "|m=" + std::to_string(m) + "|mf=" + std::to_string(m_full) +
                        "|uh=" + std::to_string(cfg.upsampler_hidden) +
                        "|pos=" + std::to_string(static_cast<int>(cfg.positional)) +
                        "|feat=" + std::to_string(static_cast<int>(feature_mode)) + "|blocks=";
        for (const BlockSpec& b : cfg.blocks)
            s += std::to_string(b.hidden_dim) + "x" + std::to_string(b.layers) + "x" +
                 std::to_string(b.heads) + ";";
        return fnv1a64(s.data(), s.size());
    }
};

// Positional vectors for the K+M token slots. Template mode pairs each slot
// with its rest-pose 3D coordinate (joints from the regressor, vertices from
// the coarse template); sinusoidal mode uses a fixed 3-value index code.
inline std::vector<double> build_query_positions(const TemplateMesh& mesh, const JointRegressor& reg,
                                                 PositionalMode mode) {
    const int k = reg.k;
    const int m = mesh.m();
    std::vector<double> pos(static_cast<size_t>(k + m) * 3);
    if (mode == PositionalMode::template_coords) {
        const std::vector<double> joints = regress_joints(reg, mesh.full_vertices);
        std::copy(joints.begin(), joints.end(), pos.begin());
        std::copy(mesh.coarse_vertices.begin(), mesh.coarse_vertices.end(),
                  pos.begin() + static_cast<std::ptrdiff_t>(k) * 3);
    } else {
        for (int i = 0; i < k + m; ++i) {
            const double fi = static_cast<double>(i);
            pos[static_cast<size_t>(i) * 3] = std::sin(fi);
            pos[static_cast<size_t>(i) * 3 + 1] = std::cos(fi);
            pos[static_cast<size_t>(i) * 3 + 2] = std::sin(fi * std::pow(10000.0, -2.0 / 3.0));
        }
    }
    return pos;
}

namespace detail {

inline void init_trunc_normal(Param& p, Rng& rng, double sigma = 0.02) {
    for (auto& v : p.value) v = trunc_normal(rng, sigma);
}

}  // namespace detail

// Allocates and initializes every parameter. Weights are truncated-normal
// (sigma 0.02), biases zero, layer norms identity. The upsampler starts as
// the exact nearest-coarse-vertex expansion with a zeroed residual branch,
// so full vertices initially copy their nearest coarse vertex.
inline Model build_model(const EncoderConfig& cfg, const TemplateMesh& mesh, const JointRegressor& reg,
                         FeatureMode feature_mode, uint64_t init_seed) {
    cfg.validate();
    mesh.validate();
    reg.validate();
    if (reg.m_full != mesh.m_full())
        throw ConfigError("build_model: regressor covers " + std::to_string(reg.m_full) +
                          " vertices, mesh has " + std::to_string(mesh.m_full()));
    Model model;
    model.cfg = cfg;
    model.k = reg.k;
    model.m = mesh.m();
    model.m_full = mesh.m_full();
    model.feature_mode = feature_mode;
    model.query_pos = build_query_positions(mesh, reg, cfg.positional);
    model.g_matrix = reg.g;
    model.coarse_template = mesh.coarse_vertices;
    model.coarse_source = mesh.coarse_source;

    Rng rng(derive_seed(init_seed, 0x1217, 0));
    ParamStore& ps = model.params;
    const int width0 = cfg.input_width();

    if (feature_mode == FeatureMode::tiny_cnn) {
        detail::init_trunc_normal(ps.add("cnn.conv1.w", {8, 1, 3, 3}), rng);
        ps.add("cnn.conv1.b", {1, 8});
        detail::init_trunc_normal(ps.add("cnn.conv2.w", {16, 8, 3, 3}), rng);
        ps.add("cnn.conv2.b", {1, 16});
        detail::init_trunc_normal(ps.add("cnn.conv3.w", {cfg.feature_dim, 16, 3, 3}), rng);
        ps.add("cnn.conv3.b", {1, cfg.feature_dim});
    }

    detail::init_trunc_normal(ps.add("mask_token", {1, width0}), rng);

    int in_w = width0;
    for (size_t bi = 0; bi < cfg.blocks.size(); ++bi) {
        const BlockSpec& blk = cfg.blocks[static_cast<size_t>(bi)];
        const std::string bp = "block" + std::to_string(bi) + ".";
        if (blk.hidden_dim != in_w) {
            detail::init_trunc_normal(ps.add(bp + "in_proj.w", {in_w, blk.hidden_dim}), rng);
            ps.add(bp + "in_proj.b", {1, blk.hidden_dim});
        }
        const int d = blk.hidden_dim;
        for (int li = 0; li < blk.layers; ++li) {
            const std::string lp = bp + "layer" + std::to_string(li) + ".";
            auto& g1 = ps.add(lp + "ln1.g", {1, d});
            std::fill(g1.value.begin(), g1.value.end(), 1.0);
            ps.add(lp + "ln1.b", {1, d});
            for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
                detail::init_trunc_normal(ps.add(lp + w, {d, d}), rng);
            for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) ps.add(lp + b, {1, d});
            auto& g2 = ps.add(lp + "ln2.g", {1, d});
            std::fill(g2.value.begin(), g2.value.end(), 1.0);
            ps.add(lp + "ln2.b", {1, d});
            detail::init_trunc_normal(ps.add(lp + "ffn.w1", {d, 4 * d}), rng);
            ps.add(lp + "ffn.b1", {1, 4 * d});
            detail::init_trunc_normal(ps.add(lp + "ffn.w2", {4 * d, d}), rng);
            ps.add(lp + "ffn.b2", {1, d});
        }
        in_w = blk.hidden_dim;
    }

    auto& flg = ps.add("final_ln.g", {1, in_w});
    std::fill(flg.value.begin(), flg.value.end(), 1.0);
    ps.add("final_ln.b", {1, in_w});
    detail::init_trunc_normal(ps.add("out_proj.w", {in_w, 3}), rng);
    ps.add("out_proj.b", {1, 3});
    detail::init_trunc_normal(ps.add("camera.w", {in_w, 3}), rng);
    ps.add("camera.b", {1, 3});

    // upsampler: per-coordinate nearest-coarse expansion plus a residual MLP
    // on the flattened coarse coordinates, zeroed at its output layer
    auto& skip = ps.add("upsampler.skip", {model.m_full, model.m});
    for (int j = 0; j < model.m_full; ++j)
        skip.value[static_cast<size_t>(j) * model.m + mesh.nearest_coarse[static_cast<size_t>(j)]] = 1.0;
    detail::init_trunc_normal(ps.add("upsampler.w1", {3 * model.m, cfg.upsampler_hidden}), rng);
    ps.add("upsampler.b1", {1, cfg.upsampler_hidden});
    ps.add("upsampler.w2", {cfg.upsampler_hidden, 3 * model.m_full});  // zero: residual off at start
    ps.add("upsampler.b2", {1, 3 * model.m_full});
    return model;
}

// ---------------------------------------------------------------------------
// forward pass

struct ForwardOptions {
    bool training = false;   // draw a masked-token subset (consumes rng)
    Rng* rng = nullptr;      // required when training and the mask cap is > 0
    double mvm_cap = -1.0;   // negative: use the model's configured cap
    bool retain_attention = false;
    const std::vector<int>* forced_mask_indices = nullptr;  // test hook, bypasses sampling
};

struct ForwardResult {
    Tensor feature;   // [1, H] feature actually fed to the queries
    Tensor joints3d;  // [K, 3]
    Tensor coarse3d;  // [M, 3]
    Tensor full3d;    // [M_full, 3]
    Tensor cam_s;     // [1, 1], positive
    Tensor cam_t;     // [1, 2]
    std::vector<int> masked_indices;
    std::vector<Tensor> attention_nodes;  // one fused-attention node per layer, in order
};

namespace detail {

// One leaf per parameter per graph: repeated lookups return the same node,
// which keeps gradient accumulation order independent of consumer count.
class ParamLeaves {
public:
    ParamLeaves(Graph& g, ParamStore& ps) : g_(g), ps_(ps) {}
    Tensor operator()(const std::string& name) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        Tensor t = g_.param(ps_.at(name));
        cache_.emplace(name, t);
        return t;
    }

private:
    Graph& g_;
    ParamStore& ps_;
    std::map<std::string, Tensor> cache_;
};

inline Tensor cnn_feature(Graph& g, ParamLeaves& P, const std::vector<double>& image, int h) {
    if (image.size() != static_cast<size_t>(kRasterSize) * kRasterSize)
        throw ShapeError("cnn_feature: expected a " + std::to_string(kRasterSize) + "x" +
                         std::to_string(kRasterSize) + " image, got " + std::to_string(image.size()) +
                         " values");
    Tensor x = g.input({1, kRasterSize, kRasterSize}, image);
    x = max_pool2d(gelu(conv2d(x, P("cnn.conv1.w"), P("cnn.conv1.b"))), 2);
    x = max_pool2d(gelu(conv2d(x, P("cnn.conv2.w"), P("cnn.conv2.b"))), 2);
    x = gelu(conv2d(x, P("cnn.conv3.w"), P("cnn.conv3.b")));
    (void)h;
    return global_mean_pool(x);  // [1, H]
}

}  // namespace detail

// Draws the masked-token subset for one training pass: a fraction
// f ~ U(0, cap) of the K+M slots, rounded up, distinct, uniform. A zero cap
// draws nothing and consumes no randomness.
inline std::vector<int> draw_mask_indices(int tokens, double cap, Rng& rng) {
    if (cap <= 0.0) return {};
    const double f = uniform_in(rng, 0.0, cap);
    const auto count = static_cast<uint32_t>(std::ceil(f * tokens));
    if (count == 0) return {};
    auto picked = sample_distinct(rng, static_cast<uint32_t>(tokens), count);
    return std::vector<int>(picked.begin(), picked.end());
}

inline ForwardResult model_forward(Model& model, Graph& g, const std::vector<double>& feature_or_image,
                                   const ForwardOptions& opt = {}) {
    const int T = model.tokens();
    const int H = model.cfg.feature_dim;
    const int width0 = model.cfg.input_width();
    detail::ParamLeaves P(g, model.params);
    ForwardResult out;

    // 1. feature vector
    if (model.feature_mode == FeatureMode::tiny_cnn) {
        out.feature = detail::cnn_feature(g, P, feature_or_image, H);
    } else {
        if (feature_or_image.size() != static_cast<size_t>(H))
            throw ShapeError("model_forward: expected feature of length " + std::to_string(H) + ", got " +
                             std::to_string(feature_or_image.size()));
        out.feature = g.input({1, H}, feature_or_image);
    }
    for (double v : g.values(out.feature))
        if (!std::isfinite(v)) throw NumericError("model_forward: non-finite feature input");

    // 2. queries: broadcast feature to all T slots, append positional coords
    Tensor ones = g.input({T, 1}, std::vector<double>(static_cast<size_t>(T), 1.0));
    Tensor xb = matmul(ones, out.feature);                       // [T, H]
    Tensor pos = g.input({T, 3}, model.query_pos);               // [T, 3]
    Tensor queries = concat_cols(xb, pos);                       // [T, H+3]

    // 3. masked vertex modeling
    const double mask_cap = opt.mvm_cap >= 0.0 ? opt.mvm_cap : model.cfg.mvm_max_fraction;
    if (opt.forced_mask_indices != nullptr) {
        out.masked_indices = *opt.forced_mask_indices;
    } else if (opt.training && mask_cap > 0.0) {
        if (opt.rng == nullptr) throw ConfigError("model_forward: training with masking needs an rng");
        out.masked_indices = draw_mask_indices(T, mask_cap, *opt.rng);
    }
    if (!out.masked_indices.empty()) {
        std::vector<double> keep(static_cast<size_t>(T), 1.0);
        std::vector<double> hit(static_cast<size_t>(T), 0.0);
        for (int idx : out.masked_indices) {
            if (idx < 0 || idx >= T)
                throw ValidationError("model_forward: mask index " + std::to_string(idx) + " outside [0," +
                                      std::to_string(T) + ")");
            keep[static_cast<size_t>(idx)] = 0.0;
            hit[static_cast<size_t>(idx)] = 1.0;
        }
        Tensor kept = mul_rows(queries, g.input({T, 1}, keep));
        Tensor masked = matmul(g.input({T, 1}, hit), P("mask_token"));
        queries = add(kept, masked);
    }

    // 4. encoder blocks (pre-norm layers; width reduced on block entry)
    Tensor h = queries;
    int cur_w = width0;
    for (size_t bi = 0; bi < model.cfg.blocks.size(); ++bi) {
        const BlockSpec& blk = model.cfg.blocks[bi];
        const std::string bp = "block" + std::to_string(bi) + ".";
        if (blk.hidden_dim != cur_w) {
            h = linear(h, P(bp + "in_proj.w"), P(bp + "in_proj.b"));
            cur_w = blk.hidden_dim;
        }
        for (int li = 0; li < blk.layers; ++li) {
            const std::string lp = bp + "layer" + std::to_string(li) + ".";
            Tensor a = layer_norm(h, P(lp + "ln1.g"), P(lp + "ln1.b"));
            Tensor q = linear(a, P(lp + "attn.wq"), P(lp + "attn.bq"));
            Tensor kk = linear(a, P(lp + "attn.wk"), P(lp + "attn.bk"));
            Tensor v = linear(a, P(lp + "attn.wv"), P(lp + "attn.bv"));
            Tensor mha = multi_head_attention(q, kk, v, blk.heads);
            out.attention_nodes.push_back(mha);
            h = add(h, linear(mha, P(lp + "attn.wo"), P(lp + "attn.bo")));
            Tensor f = layer_norm(h, P(lp + "ln2.g"), P(lp + "ln2.b"));
            Tensor mid = gelu(linear(f, P(lp + "ffn.w1"), P(lp + "ffn.b1")));
            h = add(h, linear(mid, P(lp + "ffn.w2"), P(lp + "ffn.b2")));
        }
    }

    // 5. heads
    Tensor hf = layer_norm(h, P("final_ln.g"), P("final_ln.b"));
    Tensor coords = linear(hf, P("out_proj.w"), P("out_proj.b"));  // [T, 3]
    out.joints3d = slice_rows(coords, 0, model.k);
    out.coarse3d = slice_rows(coords, model.k, T);

    Tensor cam = linear(mean_pool_rows(hf), P("camera.w"), P("camera.b"));  // [1, 3]
    out.cam_s = softplus(slice_cols(cam, 0, 1));
    out.cam_t = slice_cols(cam, 1, 3);

    // 6. coarse -> full upsampling: shared per-coordinate expansion plus a
    // residual MLP on the flattened coordinates
    Tensor skip = matmul(P("upsampler.skip"), out.coarse3d);  // [M_full, 3]
    Tensor flat = reshape(out.coarse3d, {1, 3 * model.m});
    Tensor mid = gelu(linear(flat, P("upsampler.w1"), P("upsampler.b1")));
    Tensor res = reshape(linear(mid, P("upsampler.w2"), P("upsampler.b2")), {model.m_full, 3});
    out.full3d = add(skip, res);

    if (!opt.retain_attention) {
        // attention stacks stay alive inside the graph for backward; the
        // handles are only surfaced when the caller asked for them
        out.attention_nodes.clear();
    }
    return out;
}

// Attention stack [heads, T, T] of the last encoder layer of a forward pass
// run with retain_attention.
inline std::vector<double> last_layer_attention(const Graph& g, const ForwardResult& fwd, Shape* shape = nullptr) {
    if (fwd.attention_nodes.empty())
        throw ValidationError("last_layer_attention: forward pass did not retain attention");
    return attention_of(g, fwd.attention_nodes.back(), shape);
}

}  // namespace mrt
