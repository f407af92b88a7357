// Command-line front end. Subcommands cover the whole pipeline: dataset
// generation, training, evaluation, single-sample inference, attention
// export, finite-difference gradient checking, and ablation sweeps.
//
// Exit codes: 0 success, 1 validation/usage error, 2 numeric failure,
// 3 I/O failure. Options may come from a JSON file (--config); explicit
// flags always win, and the effective configuration is echoed into the
// output directory for provenance.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrt/checkpoint.hpp"
#include "mrt/grad_check.hpp"
#include "mrt/train.hpp"

using nlohmann::json;
using namespace mrt;

namespace {

// ---------------------------------------------------------------------------
// small shared helpers

std::string path_join(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, sep))
        if (!part.empty()) parts.push_back(part);
    return parts;
}

PresetKind preset_from_name(const std::string& s) {
    if (s == "body") return PresetKind::body;
    if (s == "hand") return PresetKind::hand;
    throw ValidationError("unknown preset '" + s + "' (expected body or hand)");
}

const char* preset_name(PresetKind k) { return k == PresetKind::body ? "body" : "hand"; }

FeatureMode features_from_name(const std::string& s) {
    if (s == "oracle") return FeatureMode::oracle_mlp;
    if (s == "cnn") return FeatureMode::tiny_cnn;
    throw ValidationError("unknown feature mode '" + s + "' (expected oracle or cnn)");
}

const char* features_name(FeatureMode m) { return m == FeatureMode::oracle_mlp ? "oracle" : "cnn"; }

// "32x4x4,16x4x4" -> block list (width x layers x heads)
std::vector<BlockSpec> parse_blocks(const std::string& s) {
    std::vector<BlockSpec> out;
    for (const std::string& part : split(s, ',')) {
        BlockSpec b;
        if (std::sscanf(part.c_str(), "%dx%dx%d", &b.hidden_dim, &b.layers, &b.heads) != 3)
            throw ValidationError("bad block spec '" + part + "' (want WIDTHxLAYERSxHEADS)");
        out.push_back(b);
    }
    if (out.empty()) throw ValidationError("empty block list '" + s + "'");
    return out;
}

std::string blocks_to_string(const std::vector<BlockSpec>& blocks) {
    std::string s;
    for (const BlockSpec& b : blocks) {
        if (!s.empty()) s += ',';
        s += std::to_string(b.hidden_dim) + "x" + std::to_string(b.layers) + "x" + std::to_string(b.heads);
    }
    return s;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    for (const std::string& part : split(s, ',')) {
        try {
            size_t used = 0;
            out.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw ValidationError("bad number '" + part + "' in list '" + s + "'");
        }
    }
    if (out.empty()) throw ValidationError("empty number list '" + s + "'");
    return out;
}

// "rot[:scale]" entries, comma separated: "0:1,0.35,-0.35:1.05"
std::vector<TtaTransform> parse_tta(const std::string& s) {
    std::vector<TtaTransform> out;
    for (const std::string& part : split(s, ',')) {
        const auto fields = split(part, ':');
        if (fields.empty() || fields.size() > 2)
            throw ValidationError("bad transform '" + part + "' (want ROT or ROT:SCALE)");
        TtaTransform t;
        try {
            t.rot_y = std::stod(fields[0]);
            if (fields.size() == 2) t.scale = std::stod(fields[1]);
        } catch (const std::exception&) {
            throw ValidationError("bad transform '" + part + "'");
        }
        out.push_back(t);
    }
    return out;
}

// ---------------------------------------------------------------------------
// model architecture record (model.json)
//
// Everything needed to rebuild the network that produced a checkpoint; the
// checkpoint's config digest then guards against mismatched records.

struct ModelSpec {
    PresetKind preset = PresetKind::body;
    FeatureMode features = FeatureMode::oracle_mlp;
    int h = 64;
    int m_coarse = 431;
    int upsampler_hidden = 128;
    double mvm_cap = 0.3;
    std::vector<BlockSpec> blocks;
    uint64_t init_seed = 0;
};

int default_m_coarse(PresetKind k) { return k == PresetKind::body ? 431 : 195; }

json model_spec_json(const ModelSpec& ms) {
    json blocks = json::array();
    for (const BlockSpec& b : ms.blocks) blocks.push_back({b.hidden_dim, b.layers, b.heads});
    return json{{"preset", preset_name(ms.preset)},
                {"features", features_name(ms.features)},
                {"h", ms.h},
                {"m_coarse", ms.m_coarse},
                {"upsampler_hidden", ms.upsampler_hidden},
                {"mvm_max_fraction", ms.mvm_cap},
                {"blocks", blocks},
                {"init_seed", ms.init_seed}};
}

ModelSpec model_spec_from_json(const json& j, const std::string& origin) {
    ModelSpec ms;
    try {
        ms.preset = preset_from_name(j.at("preset").get<std::string>());
        ms.features = features_from_name(j.at("features").get<std::string>());
        ms.h = j.at("h").get<int>();
        ms.m_coarse = j.at("m_coarse").get<int>();
        ms.upsampler_hidden = j.at("upsampler_hidden").get<int>();
        ms.mvm_cap = j.at("mvm_max_fraction").get<double>();
        ms.init_seed = j.at("init_seed").get<uint64_t>();
        for (const auto& b : j.at("blocks"))
            ms.blocks.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>()});
    } catch (const json::exception& e) {
        throw ParseError(origin + ": " + e.what());
    }
    return ms;
}

struct ModelBundle {
    SynthRig rig;
    TemplateMesh mesh;
    Model model;
};

ModelBundle build_bundle(const ModelSpec& ms) {
    ModelBundle b;
    b.rig = build_rig(make_preset(ms.preset));
    b.mesh = build_coarse(b.rig.rest_vertices, b.rig.faces, ms.m_coarse);
    EncoderConfig cfg;
    cfg.feature_dim = ms.h;
    cfg.blocks = ms.blocks;
    cfg.mvm_max_fraction = ms.mvm_cap;
    cfg.upsampler_hidden = ms.upsampler_hidden;
    b.model = build_model(cfg, b.mesh, b.rig.regressor, ms.features, ms.init_seed);
    return b;
}

ModelBundle load_bundle(const std::string& model_config, const std::string& checkpoint) {
    if (model_config.empty()) throw ValidationError("--model-config is required");
    if (checkpoint.empty()) throw ValidationError("--checkpoint is required");
    ModelBundle b = build_bundle(model_spec_from_json(read_json_file(model_config), model_config));
    load_checkpoint(checkpoint, b.model.params, b.model.digest());
    return b;
}

// ---------------------------------------------------------------------------
// config-file merge: a flag given on the command line wins; otherwise a key
// in the --config JSON file replaces the built-in default.

template <typename T>
void merge_key(const CLI::App* sub, const json& file_cfg, const std::string& flag, const char* key,
               T& value) {
    if (sub->count(flag) > 0) return;
    if (!file_cfg.contains(key)) return;
    try {
        value = file_cfg.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("config key '") + key + "': " + e.what());
    }
}

struct CommonArgs {
    std::string config;
    std::string out_dir;
    uint64_t seed = 0;
    int threads = 1;
};

void add_common(CLI::App* sub, CommonArgs& c, const char* out_help) {
    sub->add_option("--config", c.config, "JSON config file; explicit flags override its values");
    sub->add_option("--out-dir", c.out_dir, out_help);
    sub->add_option("--seed", c.seed, "master RNG seed");
    sub->add_option("--threads", c.threads, "worker threads");
}

void merge_common(const CLI::App* sub, const json& fc, CommonArgs& c) {
    merge_key(sub, fc, "--out-dir", "out_dir", c.out_dir);
    merge_key(sub, fc, "--seed", "seed", c.seed);
    merge_key(sub, fc, "--threads", "threads", c.threads);
}

void require_out_dir(const CommonArgs& c) {
    if (c.out_dir.empty()) throw ValidationError("--out-dir is required");
}

void echo_config(const CommonArgs& c, json eff) {
    if (c.out_dir.empty()) return;
    eff["out_dir"] = c.out_dir;
    eff["seed"] = c.seed;
    eff["threads"] = c.threads;
    write_text_file(path_join(c.out_dir, "config.json"), eff.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    CommonArgs c;
    std::string preset = "body";
    std::string features = "oracle";
    int n = 256;
    int h = 64;
    double p2d_only = 0.0;
};

void run_gen_data(const GenDataArgs& o) {
    require_out_dir(o.c);
    DatasetConfig dc;
    dc.preset = preset_from_name(o.preset);
    dc.feature_mode = features_from_name(o.features);
    dc.n = o.n;
    dc.h = o.h;
    dc.seed = o.c.seed;
    dc.p_2d_only = o.p2d_only;
    dc.threads = o.c.threads;
    const Dataset ds = generate_dataset(dc);

    std::filesystem::create_directories(o.c.out_dir);
    const std::string path = path_join(o.c.out_dir, "dataset.bin");
    save_dataset(path, ds);
    echo_config(o.c, {{"preset", o.preset},
                      {"features", o.features},
                      {"n", o.n},
                      {"feature_dim", o.h},
                      {"p2d_only", o.p2d_only}});
    std::cout << "wrote " << path << " (" << ds.samples.size() << " samples, K=" << ds.k
              << ", M_full=" << ds.m_full << ", H=" << ds.h << ")\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    CommonArgs c;
    std::string data;
    int epochs = 200;
    int batch_size = 8;
    double lr = 1e-4;
    double lr_decay_factor = 10.0;
    int lr_decay_epoch = -1;
    double mvm_cap = 0.3;
    int eval_every = 10;
    double clip_norm = 1.0;
    int m_coarse = -1;
    int upsampler_hidden = 128;
    std::string blocks;
    bool aux_coarse = false;
    bool augment = false;
};

TrainConfig to_train_config(const TrainArgs& o) {
    TrainConfig tc;
    tc.epochs = o.epochs;
    tc.batch_size = o.batch_size;
    tc.lr_initial = o.lr;
    tc.lr_decay_factor = o.lr_decay_factor;
    tc.lr_decay_epoch = o.lr_decay_epoch;
    tc.mvm_max_fraction = o.mvm_cap;
    tc.eval_every = o.eval_every;
    tc.clip_norm = o.clip_norm;
    tc.seed = o.c.seed;
    tc.threads = o.c.threads;
    tc.coarse_aux_loss = o.aux_coarse;
    tc.augment = o.augment;
    return tc;
}

json train_effective_json(const TrainArgs& o) {
    return {{"data", o.data},          {"epochs", o.epochs},
            {"batch_size", o.batch_size}, {"lr", o.lr},
            {"lr_decay_factor", o.lr_decay_factor}, {"lr_decay_epoch", o.lr_decay_epoch},
            {"mvm_cap", o.mvm_cap},    {"eval_every", o.eval_every},
            {"clip_norm", o.clip_norm}, {"m_coarse", o.m_coarse},
            {"upsampler_hidden", o.upsampler_hidden}, {"blocks", o.blocks},
            {"aux_coarse", o.aux_coarse}, {"augment", o.augment}};
}

void run_train(const TrainArgs& o) {
    require_out_dir(o.c);
    if (o.data.empty()) throw ValidationError("--data is required");
    const Dataset ds = load_dataset(o.data);

    ModelSpec ms;
    ms.preset = ds.preset;
    ms.features = ds.feature_mode;
    ms.h = ds.h;
    ms.m_coarse = o.m_coarse > 0 ? o.m_coarse : default_m_coarse(ds.preset);
    ms.upsampler_hidden = o.upsampler_hidden;
    ms.mvm_cap = o.mvm_cap;
    ms.blocks = o.blocks.empty() ? EncoderConfig::default_schedule(ds.h) : parse_blocks(o.blocks);
    ms.init_seed = o.c.seed;
    ModelBundle b = build_bundle(ms);

    std::filesystem::create_directories(o.c.out_dir);
    write_text_file(path_join(o.c.out_dir, "model.json"), model_spec_json(ms).dump(2) + "\n");
    echo_config(o.c, train_effective_json(o));

    std::cout << "training " << preset_name(ms.preset) << " preset: K=" << b.model.k
              << " M=" << b.model.m << " M_full=" << b.model.m_full << " H=" << ms.h << " blocks "
              << blocks_to_string(ms.blocks) << " (" << b.model.params.total_size() << " parameters)\n";

    const TrainResult res = train(b.model, ds, to_train_config(o), o.c.out_dir);

    const EpochLog* last_eval = nullptr;
    for (const EpochLog& row : res.logs)
        if (row.evaluated) last_eval = &row;
    if (last_eval != nullptr) {
        write_text_file(path_join(o.c.out_dir, "metrics.csv"), metric_report_csv(last_eval->metrics));
        std::cout << "epoch " << last_eval->epoch << ": loss " << last_eval->total << ", MPJPE "
                  << last_eval->metrics.mpjpe << " mm, PA-MPJPE " << last_eval->metrics.pa_mpjpe
                  << " mm, MPVE " << last_eval->metrics.mpve << " mm\n";
    }
    std::cout << "checkpoint: " << res.checkpoint_path << "\n";
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    CommonArgs c;
    std::string data;
    std::string checkpoint;
    std::string model_config;
    std::string thresholds = "5,15";
    bool use_gt_as_pred = false;
    bool no_root_align = false;
};

void run_eval(const EvalArgs& o) {
    if (o.data.empty()) throw ValidationError("--data is required");
    const Dataset ds = load_dataset(o.data);
    const std::vector<double> th = parse_doubles(o.thresholds);

    MetricReport rep;
    if (o.use_gt_as_pred) {
        // sanity fixture: score the ground truth against itself through the
        // real metric code (errors 0, f-scores 1)
        if (ds.samples.empty()) throw ValidationError("dataset has no samples");
        for (double t : th) rep.f_scores[t] = 0.0;
        for (const TrainingSample& s : ds.samples) {
            rep.mpjpe += mpjpe(s.j3d, s.j3d);
            rep.pa_mpjpe += pa_mpjpe(s.j3d, s.j3d);
            rep.mpve += mpve(s.v3d, s.v3d);
            for (double t : th) rep.f_scores[t] += f_score(s.v3d, s.v3d, t);
        }
        const double inv = 1.0 / static_cast<double>(ds.samples.size());
        rep.mpjpe *= inv;
        rep.pa_mpjpe *= inv;
        rep.mpve *= inv;
        for (double t : th) rep.f_scores[t] *= inv;
    } else {
        ModelBundle b = load_bundle(o.model_config, o.checkpoint);
        EvalOptions eo;
        eo.root_align = !o.no_root_align;
        eo.f_thresholds_mm = th;
        eo.threads = o.c.threads;
        rep = evaluate(b.model, ds, eo);
    }

    const std::string csv = metric_report_csv(rep);
    std::cout << csv;
    if (!o.c.out_dir.empty()) {
        std::filesystem::create_directories(o.c.out_dir);
        write_text_file(path_join(o.c.out_dir, "metrics.csv"), csv);
        echo_config(o.c, {{"data", o.data},
                          {"checkpoint", o.checkpoint},
                          {"model_config", o.model_config},
                          {"thresholds", o.thresholds},
                          {"use_gt_as_pred", o.use_gt_as_pred},
                          {"no_root_align", o.no_root_align}});
    }
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
    CommonArgs c;
    std::string data;
    std::string checkpoint;
    std::string model_config;
    std::string tta;
    int index = 0;
};

void run_infer(const InferArgs& o) {
    require_out_dir(o.c);
    if (o.data.empty()) throw ValidationError("--data is required");
    const Dataset ds = load_dataset(o.data);
    if (o.index < 0 || o.index >= static_cast<int>(ds.samples.size()))
        throw ValidationError("--index " + std::to_string(o.index) + " outside dataset of " +
                              std::to_string(ds.samples.size()) + " samples");
    ModelBundle b = load_bundle(o.model_config, o.checkpoint);
    const TrainingSample& s = ds.samples[static_cast<size_t>(o.index)];

    Graph g;
    const ForwardResult r = model_forward(b.model, g, s.feature);
    std::vector<double> full = g.values(r.full3d);
    const std::vector<double> coarse = g.values(r.coarse3d);
    const double cam_s = g.scalar(r.cam_s);
    const std::vector<double> cam_t = g.values(r.cam_t);
    if (!o.tta.empty()) full = tta_infer(b.model, b.rig.preset, s, parse_tta(o.tta));

    std::filesystem::create_directories(o.c.out_dir);
    save_obj(path_join(o.c.out_dir, "full.obj"), full, b.rig.faces);
    save_obj(path_join(o.c.out_dir, "coarse.obj"), coarse, b.mesh.coarse_faces);
    const json cam = {{"s", cam_s}, {"tx", cam_t[0]}, {"ty", cam_t[1]}};
    write_text_file(path_join(o.c.out_dir, "camera.json"), cam.dump(2) + "\n");
    echo_config(o.c, {{"data", o.data},
                      {"checkpoint", o.checkpoint},
                      {"model_config", o.model_config},
                      {"index", o.index},
                      {"tta", o.tta}});
    std::cout << "wrote " << path_join(o.c.out_dir, "full.obj") << " ("
              << full.size() / 3 << " vertices), coarse.obj (" << coarse.size() / 3
              << " vertices), camera.json\n";
}

// ---------------------------------------------------------------------------
// attention

struct AttentionArgs {
    CommonArgs c;
    std::string data;
    std::string checkpoint;
    std::string model_config;
    std::string joints = "r_wrist,r_elbow,l_knee,l_ankle,head";
    int samples = 8;
};

void run_attention(const AttentionArgs& o) {
    require_out_dir(o.c);
    if (o.data.empty()) throw ValidationError("--data is required");
    const Dataset ds = load_dataset(o.data);
    ModelBundle b = load_bundle(o.model_config, o.checkpoint);

    int t = 0;
    const std::vector<double> agg = collect_mean_attention(b.model, ds, o.samples, &t);

    std::filesystem::create_directories(o.c.out_dir);
    save_matrix_csv(path_join(o.c.out_dir, "attention_mean.csv"), agg, t, t);
    save_pgm_heatmap(path_join(o.c.out_dir, "attention_mean.pgm"), agg, t, t);

    const std::vector<std::string>& names = b.rig.preset.skeleton.names;
    for (const std::string& name : split(o.joints, ',')) {
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) {
            std::string known;
            for (const std::string& n : names) known += (known.empty() ? "" : ", ") + n;
            throw ValidationError("unknown joint '" + name + "' for the " +
                                  preset_name(b.rig.preset.kind) + " preset (available: " + known + ")");
        }
        const int j = static_cast<int>(it - names.begin());
        std::vector<double> col(static_cast<size_t>(t));
        for (int i = 0; i < t; ++i) col[static_cast<size_t>(i)] = agg[static_cast<size_t>(i) * t + j];
        save_matrix_csv(path_join(o.c.out_dir, "attention_" + name + ".csv"), col, t, 1);
    }
    echo_config(o.c, {{"data", o.data},
                      {"checkpoint", o.checkpoint},
                      {"model_config", o.model_config},
                      {"joints", o.joints},
                      {"samples", o.samples}});
    std::cout << "wrote " << t << "x" << t << " mean attention map and per-joint columns to "
              << o.c.out_dir << "\n";
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradCheckArgs {
    CommonArgs c;
    double tol = 1e-4;
};

// Sum-of-gelu loss over one op's output; gelu keeps the reduction nonlinear
// so row-stochastic or zero-mean outputs still produce informative gradients.
double op_grad_err(Rng& rng, const Shape& shape, const std::function<Tensor(Graph&, Tensor)>& op) {
    std::vector<double> x(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : x) v = uniform_in(rng, -1.0, 1.0);
    return grad_check(x, [&](const std::vector<double>& v, std::vector<double>* go) {
        Graph g;
        Tensor in = g.input(shape, v);
        g.node(in).needs_grad = true;
        Tensor loss = sum_all(gelu(op(g, in)));
        if (go) {
            g.backward(loss);
            *go = g.grad(in);
        }
        return g.scalar(loss);
    });
}

// End-to-end check on a tiny eight-vertex cube world, identical in spirit to
// the per-module micro tests: projection weights are scaled up so key/query
// gradients are first-order at the probe step.
double micro_model_grad_err(uint64_t seed) {
    std::vector<double> verts;
    for (int x = -1; x <= 1; x += 2)
        for (int y = -1; y <= 1; y += 2)
            for (int z = -1; z <= 1; z += 2) {
                verts.push_back(0.5 * x);
                verts.push_back(0.5 * y);
                verts.push_back(0.5 * z);
            }
    const TemplateMesh mesh = build_coarse(verts, {{0, 1, 2}, {4, 5, 6}}, 4);
    JointRegressor reg;
    reg.k = 2;
    reg.m_full = 8;
    reg.g.assign(16, 0.0);
    for (int i = 0; i < 8; ++i) reg.g[static_cast<size_t>(i)] = 1.0 / 8.0;
    reg.g[8 + 3] = 1.0;
    EncoderConfig cfg;
    cfg.feature_dim = 8;
    cfg.blocks = {{4, 1, 1}};
    cfg.upsampler_hidden = 4;
    Model model = build_model(cfg, mesh, reg, FeatureMode::oracle_mlp, seed);
    for (size_t i = 0; i < model.params.count(); ++i) {
        Param& p = model.params[i];
        const bool proj = p.name.find(".attn.w") != std::string::npos ||
                          p.name.find(".ffn.w") != std::string::npos ||
                          p.name.find("in_proj.w") != std::string::npos ||
                          p.name == "out_proj.w" || p.name == "camera.w";
        if (proj)
            for (auto& v : p.value) v *= 10.0;
    }

    Rng rng(derive_seed(seed, 0x6C, 0));
    auto rand_vec = [&rng](size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = uniform_in(rng, -1.0, 1.0);
        return v;
    };
    const auto feat = rand_vec(8);
    const auto gt_v = rand_vec(24);
    const auto gt_j = rand_vec(6);
    const auto gt_j2d = rand_vec(4);
    const std::vector<int> mask = {1, 4};

    auto forward = [&](bool with_grad) {
        Graph g;
        ForwardOptions opt;
        opt.forced_mask_indices = &mask;
        const ForwardResult r = model_forward(model, g, feat, opt);
        Tensor j2d = project_weak_perspective(r.joints3d, r.cam_s, r.cam_t);
        const LossBreakdown lb =
            total_loss(r.full3d, g.input({8, 3}, gt_v), r.joints3d, g.input({2, 3}, gt_j),
                       g.input({2, 8}, model.g_matrix), j2d, g.input({2, 2}, gt_j2d), 1.0, 1.0);
        if (with_grad) g.backward(lb.total);
        return g.scalar(lb.total);
    };
    return grad_check_params(model.params, forward, 1e-5).worst_rel_err;
}

void run_gradcheck(const GradCheckArgs& o) {
    Rng rng(o.c.seed);
    // Fixture operands are drawn once per check; the build closure re-runs
    // for every finite-difference probe and must see identical constants.
    struct Fixed {
        Shape shape;
        std::vector<double> data;
        Tensor in(Graph& g) const { return g.input(shape, data); }
    };
    auto fixed = [&rng](Shape shape) {
        Fixed f{shape, std::vector<double>(static_cast<size_t>(shape_numel(shape)))};
        for (auto& x : f.data) x = uniform_in(rng, -1.0, 1.0);
        return f;
    };

    struct Row {
        std::string name;
        double err;
    };
    std::vector<Row> rows;
    auto check = [&](const char* name, const Shape& shape, const std::function<Tensor(Graph&, Tensor)>& op) {
        rows.push_back({name, op_grad_err(rng, shape, op)});
    };

    {
        const Fixed w = fixed({4, 2});
        check("matmul", {3, 4}, [&](Graph& g, Tensor x) { return matmul(x, w.in(g)); });
    }
    {
        const Fixed b = fixed({2, 3});
        check("add", {2, 3}, [&](Graph& g, Tensor x) { return add(x, b.in(g)); });
        check("sub", {2, 3}, [&](Graph& g, Tensor x) { return sub(b.in(g), x); });
    }
    check("scale", {2, 3}, [&](Graph&, Tensor x) { return scale(x, 1.7); });
    {
        const Fixed s = fixed({1, 1});
        check("scale_by", {2, 3}, [&](Graph& g, Tensor x) { return scale_by(x, s.in(g)); });
    }
    {
        const Fixed b = fixed({1, 4});
        check("add_bias", {3, 4}, [&](Graph& g, Tensor x) { return add_bias(x, b.in(g)); });
    }
    {
        const Fixed c = fixed({3, 1});
        check("mul_rows", {3, 4}, [&](Graph& g, Tensor x) { return mul_rows(x, c.in(g)); });
    }
    {
        const Fixed r = fixed({3, 3});
        check("concat_cols", {3, 2}, [&](Graph& g, Tensor x) { return concat_cols(x, r.in(g)); });
    }
    check("slice_rows", {4, 3}, [&](Graph&, Tensor x) { return slice_rows(x, 1, 3); });
    check("slice_cols", {3, 4}, [&](Graph&, Tensor x) { return slice_cols(x, 0, 2); });
    check("reshape", {2, 6}, [&](Graph&, Tensor x) { return reshape(x, {3, 4}); });
    check("transpose", {2, 5}, [&](Graph&, Tensor x) { return transpose(x); });
    check("gelu", {2, 4}, [&](Graph&, Tensor x) { return gelu(x); });
    check("softplus", {2, 4}, [&](Graph&, Tensor x) { return softplus(x); });
    check("softmax_rows", {3, 4}, [&](Graph&, Tensor x) { return softmax_rows(x); });
    {
        const Fixed gain = fixed({1, 4});
        const Fixed bias = fixed({1, 4});
        check("layer_norm", {3, 4},
              [&](Graph& g, Tensor x) { return layer_norm(x, gain.in(g), bias.in(g)); });
    }
    {
        const Fixed w = fixed({4, 3});
        const Fixed b = fixed({1, 3});
        check("linear", {3, 4}, [&](Graph& g, Tensor x) { return linear(x, w.in(g), b.in(g)); });
    }
    check("mean_pool_rows", {4, 3}, [&](Graph&, Tensor x) { return mean_pool_rows(x); });
    check("sum_all", {3, 3}, [&](Graph&, Tensor x) { return sum_all(x); });
    {
        const Fixed t = fixed({3, 4});
        check("l1_mean", {3, 4}, [&](Graph& g, Tensor x) { return l1_mean(x, t.in(g)); });
    }
    {
        const Fixed k = fixed({4, 4});
        const Fixed v = fixed({4, 4});
        check("multi_head_attention", {4, 4}, [&](Graph& g, Tensor x) {
            return multi_head_attention(x, k.in(g), v.in(g), 2);
        });
    }
    {
        const Fixed w = fixed({2, 1, 3, 3});
        const Fixed b = fixed({1, 2});
        check("conv2d", {1, 6, 6},
              [&](Graph& g, Tensor x) { return conv2d(x, w.in(g), b.in(g), 2); });
    }
    check("max_pool2d", {2, 4, 4}, [&](Graph&, Tensor x) { return max_pool2d(x, 2); });
    check("global_mean_pool", {2, 3, 3}, [&](Graph&, Tensor x) { return global_mean_pool(x); });
    rows.push_back({"model_end_to_end", micro_model_grad_err(o.c.seed + 101)});

    int failed = 0;
    std::ostringstream csv;
    csv << "name,worst_rel_err,pass\n";
    for (const Row& r : rows) {
        const bool pass = r.err < o.tol;
        if (!pass) ++failed;
        std::cout << "  " << std::left << std::setw(24) << r.name << std::scientific
                  << std::setprecision(2) << r.err << (pass ? "  PASS" : "  FAIL") << "\n"
                  << std::defaultfloat;
        csv << r.name << "," << std::setprecision(17) << r.err << "," << (pass ? 1 : 0) << "\n";
    }
    if (!o.c.out_dir.empty()) {
        std::filesystem::create_directories(o.c.out_dir);
        write_text_file(path_join(o.c.out_dir, "gradcheck.csv"), csv.str());
        echo_config(o.c, {{"tol", o.tol}});
    }
    if (failed > 0)
        throw NumericError(std::to_string(failed) + " of " + std::to_string(rows.size()) +
                           " gradient checks exceeded tolerance " + std::to_string(o.tol));
    std::cout << "all " << rows.size() << " gradient checks passed (tol " << o.tol << ")\n";
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
    CommonArgs c;
    std::string data;
    std::string sweep = "both";
    std::string caps = "0,0.1,0.2,0.3,0.4,0.5";
    std::string blocks;
    int epochs = 30;
    int batch_size = 8;
    double lr = 1e-4;
    double mvm_cap = 0.3;
    int eval_every = 10;
    int m_coarse = -1;
    int upsampler_hidden = 128;
};

void run_ablate(const AblateArgs& o) {
    require_out_dir(o.c);
    if (o.data.empty()) throw ValidationError("--data is required");
    if (o.sweep != "mvm" && o.sweep != "dims" && o.sweep != "both")
        throw ValidationError("unknown sweep '" + o.sweep + "' (expected mvm, dims, or both)");
    const Dataset ds = load_dataset(o.data);

    const SynthRig rig = build_rig(make_preset(ds.preset));
    const int m = o.m_coarse > 0 ? o.m_coarse : default_m_coarse(ds.preset);
    const TemplateMesh mesh = build_coarse(rig.rest_vertices, rig.faces, m);

    TrainConfig tc;
    tc.epochs = o.epochs;
    tc.batch_size = o.batch_size;
    tc.lr_initial = o.lr;
    tc.mvm_max_fraction = o.mvm_cap;
    tc.eval_every = o.eval_every;
    tc.seed = o.c.seed;
    tc.threads = o.c.threads;

    std::filesystem::create_directories(o.c.out_dir);
    echo_config(o.c, {{"data", o.data},
                      {"sweep", o.sweep},
                      {"caps", o.caps},
                      {"blocks", o.blocks},
                      {"epochs", o.epochs},
                      {"batch_size", o.batch_size},
                      {"lr", o.lr},
                      {"mvm_cap", o.mvm_cap},
                      {"eval_every", o.eval_every},
                      {"m_coarse", m},
                      {"upsampler_hidden", o.upsampler_hidden}});

    if (o.sweep == "mvm" || o.sweep == "both") {
        EncoderConfig base;
        base.feature_dim = ds.h;
        base.blocks = o.blocks.empty() ? EncoderConfig::default_schedule(ds.h) : parse_blocks(o.blocks);
        base.upsampler_hidden = o.upsampler_hidden;
        const auto rows =
            ablate_mvm(base, mesh, rig.regressor, ds.feature_mode, ds, tc, parse_doubles(o.caps));
        const std::string path = path_join(o.c.out_dir, "mvm_ablation.csv");
        write_text_file(path, mvm_ablation_csv(rows));
        std::cout << "wrote " << path << " (" << rows.size() << " caps)\n";
    }
    if (o.sweep == "dims" || o.sweep == "both") {
        const auto rows = ablate_dim_schemes(ds.h, mesh, rig.regressor, ds.feature_mode, ds, tc);
        const std::string path = path_join(o.c.out_dir, "scheme_ablation.csv");
        write_text_file(path, scheme_ablation_csv(rows));
        std::cout << "wrote " << path << " (" << rows.size() << " schemes)\n";
    }
}

}  // namespace

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{"mesh regression transformer toolkit"};
    app.require_subcommand(1);

    GenDataArgs gen;
    CLI::App* sub_gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(sub_gen, gen.c, "output directory for dataset.bin (required)");
    sub_gen->add_option("--preset", gen.preset, "rig preset: body or hand");
    sub_gen->add_option("--features", gen.features, "feature mode: oracle or cnn");
    sub_gen->add_option("--n", gen.n, "number of samples");
    sub_gen->add_option("--feature-dim", gen.h, "feature/embedding width H");
    sub_gen->add_option("--p2d-only", gen.p2d_only, "fraction of samples stripped to 2D-only labels");

    TrainArgs tr;
    CLI::App* sub_train = app.add_subcommand("train", "train a model on a generated dataset");
    add_common(sub_train, tr.c, "output directory for checkpoint/log/model.json (required)");
    sub_train->add_option("--data", tr.data, "dataset file from gen-data (required)");
    sub_train->add_option("--epochs", tr.epochs, "training epochs");
    sub_train->add_option("--batch-size", tr.batch_size, "samples per optimizer step");
    sub_train->add_option("--lr", tr.lr, "initial learning rate");
    sub_train->add_option("--lr-decay-factor", tr.lr_decay_factor, "divide lr by this at the decay epoch");
    sub_train->add_option("--lr-decay-epoch", tr.lr_decay_epoch, "decay epoch (-1: half of epochs)");
    sub_train->add_option("--mvm-cap", tr.mvm_cap, "max fraction of masked query tokens");
    sub_train->add_option("--eval-every", tr.eval_every, "epochs between metric evaluations");
    sub_train->add_option("--clip-norm", tr.clip_norm, "global gradient-norm clip (<=0 disables)");
    sub_train->add_option("--m-coarse", tr.m_coarse, "coarse vertex count (-1: preset default)");
    sub_train->add_option("--upsampler-hidden", tr.upsampler_hidden, "upsampler MLP hidden width");
    sub_train->add_option("--blocks", tr.blocks, "encoder blocks WxLxH,... (default: H/2,H/4,H/8 x4x4)");
    sub_train->add_flag("--aux-coarse", tr.aux_coarse, "add the coarse-vertex auxiliary loss");
    sub_train->add_flag("--augment", tr.augment, "rotation/scale data augmentation");

    EvalArgs ev;
    CLI::App* sub_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(sub_eval, ev.c, "optional output directory for metrics.csv");
    sub_eval->add_option("--data", ev.data, "dataset file (required)");
    sub_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file");
    sub_eval->add_option("--model-config", ev.model_config, "model.json written by train");
    sub_eval->add_option("--thresholds", ev.thresholds, "f-score thresholds in mm, comma separated");
    sub_eval->add_flag("--use-gt-as-pred", ev.use_gt_as_pred,
                       "score ground truth against itself (metric sanity fixture)");
    sub_eval->add_flag("--no-root-align", ev.no_root_align, "skip root-joint centering");

    InferArgs inf;
    CLI::App* sub_infer = app.add_subcommand("infer", "run one sample and write meshes + camera");
    add_common(sub_infer, inf.c, "output directory for full.obj/coarse.obj/camera.json (required)");
    sub_infer->add_option("--data", inf.data, "dataset file (required)");
    sub_infer->add_option("--index", inf.index, "sample index");
    sub_infer->add_option("--checkpoint", inf.checkpoint, "checkpoint file (required)");
    sub_infer->add_option("--model-config", inf.model_config, "model.json written by train (required)");
    sub_infer->add_option("--tta", inf.tta,
                          "test-time transforms ROT[:SCALE],... fused into full.obj");

    AttentionArgs at;
    CLI::App* sub_attn = app.add_subcommand("attention", "export mean last-layer attention maps");
    add_common(sub_attn, at.c, "output directory for attention CSV/PGM (required)");
    sub_attn->add_option("--data", at.data, "dataset file (required)");
    sub_attn->add_option("--checkpoint", at.checkpoint, "checkpoint file (required)");
    sub_attn->add_option("--model-config", at.model_config, "model.json written by train (required)");
    sub_attn->add_option("--samples", at.samples, "number of samples to average over");
    sub_attn->add_option("--joints", at.joints, "comma-separated joints for per-joint columns");

    GradCheckArgs gc;
    CLI::App* sub_grad = app.add_subcommand("gradcheck", "finite-difference check of every op");
    add_common(sub_grad, gc.c, "optional output directory for gradcheck.csv");
    sub_grad->add_option("--tol", gc.tol, "max allowed relative error");

    AblateArgs ab;
    CLI::App* sub_ablate = app.add_subcommand("ablate", "masking-cap and width-schedule sweeps");
    add_common(sub_ablate, ab.c, "output directory for ablation CSVs (required)");
    sub_ablate->add_option("--data", ab.data, "dataset file (required)");
    sub_ablate->add_option("--sweep", ab.sweep, "mvm, dims, or both");
    sub_ablate->add_option("--caps", ab.caps, "masking caps for the mvm sweep, comma separated");
    sub_ablate->add_option("--blocks", ab.blocks, "encoder blocks for the mvm sweep (default schedule)");
    sub_ablate->add_option("--epochs", ab.epochs, "epochs per run");
    sub_ablate->add_option("--batch-size", ab.batch_size, "samples per optimizer step");
    sub_ablate->add_option("--lr", ab.lr, "learning rate");
    sub_ablate->add_option("--mvm-cap", ab.mvm_cap, "masking cap for the dims sweep");
    sub_ablate->add_option("--eval-every", ab.eval_every, "epochs between evaluations");
    sub_ablate->add_option("--m-coarse", ab.m_coarse, "coarse vertex count (-1: preset default)");
    sub_ablate->add_option("--upsampler-hidden", ab.upsampler_hidden, "upsampler MLP hidden width");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*sub_gen) {
            const json fc = gen.c.config.empty() ? json::object() : read_json_file(gen.c.config);
            merge_common(sub_gen, fc, gen.c);
            merge_key(sub_gen, fc, "--preset", "preset", gen.preset);
            merge_key(sub_gen, fc, "--features", "features", gen.features);
            merge_key(sub_gen, fc, "--n", "n", gen.n);
            merge_key(sub_gen, fc, "--feature-dim", "feature_dim", gen.h);
            merge_key(sub_gen, fc, "--p2d-only", "p2d_only", gen.p2d_only);
            run_gen_data(gen);
        } else if (*sub_train) {
            const json fc = tr.c.config.empty() ? json::object() : read_json_file(tr.c.config);
            merge_common(sub_train, fc, tr.c);
            merge_key(sub_train, fc, "--data", "data", tr.data);
            merge_key(sub_train, fc, "--epochs", "epochs", tr.epochs);
            merge_key(sub_train, fc, "--batch-size", "batch_size", tr.batch_size);
            merge_key(sub_train, fc, "--lr", "lr", tr.lr);
            merge_key(sub_train, fc, "--lr-decay-factor", "lr_decay_factor", tr.lr_decay_factor);
            merge_key(sub_train, fc, "--lr-decay-epoch", "lr_decay_epoch", tr.lr_decay_epoch);
            merge_key(sub_train, fc, "--mvm-cap", "mvm_cap", tr.mvm_cap);
            merge_key(sub_train, fc, "--eval-every", "eval_every", tr.eval_every);
            merge_key(sub_train, fc, "--clip-norm", "clip_norm", tr.clip_norm);
            merge_key(sub_train, fc, "--m-coarse", "m_coarse", tr.m_coarse);
            merge_key(sub_train, fc, "--upsampler-hidden", "upsampler_hidden", tr.upsampler_hidden);
            merge_key(sub_train, fc, "--blocks", "blocks", tr.blocks);
            merge_key(sub_train, fc, "--aux-coarse", "aux_coarse", tr.aux_coarse);
            merge_key(sub_train, fc, "--augment", "augment", tr.augment);
            run_train(tr);
        } else if (*sub_eval) {
            const json fc = ev.c.config.empty() ? json::object() : read_json_file(ev.c.config);
            merge_common(sub_eval, fc, ev.c);
            merge_key(sub_eval, fc, "--data", "data", ev.data);
            merge_key(sub_eval, fc, "--checkpoint", "checkpoint", ev.checkpoint);
            merge_key(sub_eval, fc, "--model-config", "model_config", ev.model_config);
            merge_key(sub_eval, fc, "--thresholds", "thresholds", ev.thresholds);
            merge_key(sub_eval, fc, "--use-gt-as-pred", "use_gt_as_pred", ev.use_gt_as_pred);
            merge_key(sub_eval, fc, "--no-root-align", "no_root_align", ev.no_root_align);
            run_eval(ev);
        } else if (*sub_infer) {
            const json fc = inf.c.config.empty() ? json::object() : read_json_file(inf.c.config);
            merge_common(sub_infer, fc, inf.c);
            merge_key(sub_infer, fc, "--data", "data", inf.data);
            merge_key(sub_infer, fc, "--index", "index", inf.index);
            merge_key(sub_infer, fc, "--checkpoint", "checkpoint", inf.checkpoint);
            merge_key(sub_infer, fc, "--model-config", "model_config", inf.model_config);
            merge_key(sub_infer, fc, "--tta", "tta", inf.tta);
            run_infer(inf);
        } else if (*sub_attn) {
            const json fc = at.c.config.empty() ? json::object() : read_json_file(at.c.config);
            merge_common(sub_attn, fc, at.c);
            merge_key(sub_attn, fc, "--data", "data", at.data);
            merge_key(sub_attn, fc, "--checkpoint", "checkpoint", at.checkpoint);
            merge_key(sub_attn, fc, "--model-config", "model_config", at.model_config);
            merge_key(sub_attn, fc, "--joints", "joints", at.joints);
            merge_key(sub_attn, fc, "--samples", "samples", at.samples);
            run_attention(at);
        } else if (*sub_grad) {
            const json fc = gc.c.config.empty() ? json::object() : read_json_file(gc.c.config);
            merge_common(sub_grad, fc, gc.c);
            merge_key(sub_grad, fc, "--tol", "tol", gc.tol);
            run_gradcheck(gc);
        } else if (*sub_ablate) {
            const json fc = ab.c.config.empty() ? json::object() : read_json_file(ab.c.config);
            merge_common(sub_ablate, fc, ab.c);
            merge_key(sub_ablate, fc, "--data", "data", ab.data);
            merge_key(sub_ablate, fc, "--sweep", "sweep", ab.sweep);
            merge_key(sub_ablate, fc, "--caps", "caps", ab.caps);
            merge_key(sub_ablate, fc, "--blocks", "blocks", ab.blocks);
            merge_key(sub_ablate, fc, "--epochs", "epochs", ab.epochs);
            merge_key(sub_ablate, fc, "--batch-size", "batch_size", ab.batch_size);
            merge_key(sub_ablate, fc, "--lr", "lr", ab.lr);
            merge_key(sub_ablate, fc, "--mvm-cap", "mvm_cap", ab.mvm_cap);
            merge_key(sub_ablate, fc, "--eval-every", "eval_every", ab.eval_every);
            merge_key(sub_ablate, fc, "--m-coarse", "m_coarse", ab.m_coarse);
            merge_key(sub_ablate, fc, "--upsampler-hidden", "upsampler_hidden", ab.upsampler_hidden);
            run_ablate(ab);
        }
        return 0;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
