#pragma once

// Optimization harness: Adam with a single step-wise learning-rate drop,
// masked-query sampling during training, per-sample availability flags,
// global-norm gradient clipping, per-epoch CSV logs, checkpointing,
// evaluation, test-time augmentation, and the two ablation sweeps.
//
// Gradients are accumulated per sample into per-graph buffers and merged in
// sample order, so results are bitwise identical for every thread count.

#include <filesystem>
#include <functional>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mrt/checkpoint.hpp"
#include "mrt/losses.hpp"
#include "mrt/metrics.hpp"
#include "mrt/model.hpp"
#include "mrt/synth.hpp"

namespace mrt {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 8;
    double lr_initial = 1e-4;
    double lr_decay_factor = 10.0;
    int lr_decay_epoch = -1;  // negative: half of epochs
    double mvm_max_fraction = 0.3;
    uint64_t seed = 0;
    int eval_every = 10;
    double clip_norm = 1.0;  // global norm; <= 0 disables
    int threads = 1;
    bool root_align_eval = true;   // center joints on the root before MPJPE/MPVE
    bool coarse_aux_loss = false;  // extra L1 on the coarse vertices
    bool augment = false;
    double augment_max_rot = std::numbers::pi;  // vertical-axis rotation bound
    double augment_scale_jitter = 0.1;          // camera scale in [1-j, 1+j]
    std::vector<double> f_thresholds_mm = {5.0, 15.0};

    int decay_epoch() const { return lr_decay_epoch >= 0 ? lr_decay_epoch : epochs / 2; }

    // exactly lr_initial before the drop epoch, exactly lr_initial/factor after
    double lr_at(int epoch) const {
        return epoch >= decay_epoch() ? lr_initial / lr_decay_factor : lr_initial;
    }

    void validate() const {
        if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
        if (lr_initial < 0.0) throw ConfigError("train config: lr_initial must be >= 0");
        if (lr_decay_factor <= 0.0) throw ConfigError("train config: lr_decay_factor must be > 0");
        if (mvm_max_fraction < 0.0 || mvm_max_fraction > 1.0)
            throw ConfigError("train config: mvm_max_fraction outside [0,1]");
        if (eval_every < 1) throw ConfigError("train config: eval_every must be >= 1");
        if (threads < 1) throw ConfigError("train config: threads must be >= 1");
        if (augment_scale_jitter < 0.0 || augment_scale_jitter >= 1.0)
            throw ConfigError("train config: augment_scale_jitter outside [0,1)");
        for (double t : f_thresholds_mm)
            if (t <= 0.0) throw ConfigError("train config: f-score thresholds must be positive");
    }
};

// ---------------------------------------------------------------------------
// optimizer

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;
    std::vector<std::vector<double>> m, v;

    void init(const ParamStore& params) {
        t = 0;
        m.resize(params.count());
        v.resize(params.count());
        for (size_t i = 0; i < params.count(); ++i) {
            m[i].assign(params[i].value.size(), 0.0);
            v[i].assign(params[i].value.size(), 0.0);
        }
    }
};

inline void adam_step(ParamStore& params, AdamState& st, double lr) {
    if (st.m.empty()) st.init(params);
    if (st.m.size() != params.count())
        throw ConfigError("adam_step: state tracks " + std::to_string(st.m.size()) + " parameters, store has " +
                          std::to_string(params.count()));
    st.t += 1;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (size_t p = 0; p < params.count(); ++p) {
        Param& prm = params[p];
        if (st.m[p].size() != prm.value.size())
            throw ConfigError("adam_step: state shape mismatch for '" + prm.name + "'");
        double* m = st.m[p].data();
        double* v = st.v[p].data();
        for (size_t i = 0; i < prm.value.size(); ++i) {
            const double g = prm.grad[i];
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in '" + prm.name + "[" +
                                   std::to_string(i) + "]'");
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
            prm.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.eps);
        }
    }
}

inline double grad_norm(const ParamStore& params) {
    double acc = 0.0;
    for (size_t p = 0; p < params.count(); ++p)
        for (double g : params[p].grad) acc += g * g;
    return std::sqrt(acc);
}

// Scales all gradients so the global norm is at most max_norm; returns the
// factor applied (1.0 when nothing was done). Non-positive max_norm disables.
inline double clip_gradients(ParamStore& params, double max_norm) {
    if (max_norm <= 0.0) return 1.0;
    const double norm = grad_norm(params);
    if (norm <= max_norm) return 1.0;
    const double scale = max_norm / norm;
    for (size_t p = 0; p < params.count(); ++p)
        for (double& g : params[p].grad) g *= scale;
    return scale;
}

// ---------------------------------------------------------------------------
// dataset/model compatibility and per-sample loss

inline void check_model_dataset(const Model& model, const Dataset& ds) {
    if (ds.samples.empty()) throw ValidationError("dataset has no samples");
    if (ds.k != model.k || ds.m_full != model.m_full)
        throw ConfigError("dataset is K=" + std::to_string(ds.k) + "/M_full=" + std::to_string(ds.m_full) +
                          ", model expects K=" + std::to_string(model.k) + "/M_full=" +
                          std::to_string(model.m_full));
    if (ds.feature_mode != model.feature_mode)
        throw ConfigError("dataset feature mode does not match the model");
    if (model.feature_mode == FeatureMode::oracle_mlp && ds.h != model.cfg.feature_dim)
        throw ConfigError("dataset features have " + std::to_string(ds.h) + " dims, model expects " +
                          std::to_string(model.cfg.feature_dim));
}

namespace detail {

// Composite objective for one sample: the flagged loss over full vertices,
// joints, regressed joints and reprojected joints, plus the optional coarse
// auxiliary term (under the same 3D flag).
inline Tensor sample_loss(Model& model, Graph& g, const ForwardResult& fwd, const TrainingSample& s,
                          bool coarse_aux, LossBreakdown* breakdown) {
    Tensor gt_v = g.input({model.m_full, 3}, s.v3d);
    Tensor gt_j = g.input({model.k, 3}, s.j3d);
    Tensor gt_j2d = g.input({model.k, 2}, s.j2d);
    Tensor g_mat = g.input({model.k, model.m_full}, model.g_matrix);
    Tensor j2d = project_weak_perspective(fwd.joints3d, fwd.cam_s, fwd.cam_t);
    LossBreakdown lb = total_loss(fwd.full3d, gt_v, fwd.joints3d, gt_j, g_mat, j2d, gt_j2d,
                                  static_cast<double>(s.alpha), static_cast<double>(s.beta));
    Tensor total = lb.total;
    if (coarse_aux) {
        std::vector<double> gt_coarse(static_cast<size_t>(model.m) * 3);
        for (int i = 0; i < model.m; ++i)
            for (int c = 0; c < 3; ++c)
                gt_coarse[static_cast<size_t>(i) * 3 + c] =
                    s.v3d[static_cast<size_t>(model.coarse_source[static_cast<size_t>(i)]) * 3 + c];
        Tensor aux = l1_mean(fwd.coarse3d, g.input({model.m, 3}, gt_coarse));
        total = add(total, scale(aux, static_cast<double>(s.alpha)));
    }
    if (breakdown != nullptr) *breakdown = lb;
    return total;
}

inline std::string g17(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

}  // namespace detail

// Pose-consistent augmentation: the whole figure is turned about the vertical
// axis by recomposing the root joint (the feature is regenerated, so input
// and targets stay consistent), and the camera scale is jittered as an image
// zoom (2D targets move, 3D targets do not).
inline TrainingSample augment_sample(const TrainingSample& s, const Dataset& ds, double theta,
                                     double cam_scale) {
    TrainingSample out = s;
    out.angles = rotate_root_y(s.angles, theta);
    out.j3d = rotate_points_y(s.j3d, theta);
    out.v3d = rotate_points_y(s.v3d, theta);
    out.gt_cam[0] = s.gt_cam[0] * cam_scale;
    out.j2d = project_weak_perspective_values(out.j3d, out.gt_cam[0], out.gt_cam[1], out.gt_cam[2]);
    if (ds.feature_mode == FeatureMode::oracle_mlp)
        out.feature = make_oracle_feature(out.angles, ds.h);
    else
        out.feature = rasterize_silhouette(out.v3d, make_preset(ds.preset).raster_window);
    return out;
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalOptions {
    bool root_align = true;
    std::vector<double> f_thresholds_mm = {5.0, 15.0};
    int threads = 1;
};

namespace detail {

inline void center_on_root(std::vector<double>& pts, const double* root) {
    for (size_t i = 0; i < pts.size() / 3; ++i)
        for (int c = 0; c < 3; ++c) pts[i * 3 + static_cast<size_t>(c)] -= root[c];
}

}  // namespace detail

// Masking off, parameters untouched; per-sample metrics averaged in sample
// order (thread count never changes the result).
inline MetricReport evaluate(Model& model, const Dataset& ds, const EvalOptions& opt = {}) {
    check_model_dataset(model, ds);
    const int n = static_cast<int>(ds.samples.size());
    const size_t taus = opt.f_thresholds_mm.size();
    std::vector<double> per_mpjpe(static_cast<size_t>(n)), per_pa(static_cast<size_t>(n)),
        per_mpve(static_cast<size_t>(n)), per_f(static_cast<size_t>(n) * taus);

    parallel_for(n, opt.threads, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const TrainingSample& s = ds.samples[static_cast<size_t>(i)];
            Graph g;
            const ForwardResult fwd = model_forward(model, g, s.feature);
            std::vector<double> pred_j = g.values(fwd.joints3d);
            std::vector<double> pred_v = g.values(fwd.full3d);
            std::vector<double> gt_j = s.j3d;
            std::vector<double> gt_v = s.v3d;
            if (opt.root_align) {
                const std::vector<double> pred_root(pred_j.begin(), pred_j.begin() + 3);
                const std::vector<double> gt_root(gt_j.begin(), gt_j.begin() + 3);
                detail::center_on_root(pred_j, pred_root.data());
                detail::center_on_root(pred_v, pred_root.data());
                detail::center_on_root(gt_j, gt_root.data());
                detail::center_on_root(gt_v, gt_root.data());
            }
            per_mpjpe[static_cast<size_t>(i)] = mpjpe(pred_j, gt_j);
            per_pa[static_cast<size_t>(i)] = pa_mpjpe(pred_j, gt_j);
            per_mpve[static_cast<size_t>(i)] = mpve(pred_v, gt_v);
            for (size_t t = 0; t < taus; ++t)
                per_f[static_cast<size_t>(i) * taus + t] = f_score(pred_v, gt_v, opt.f_thresholds_mm[t]);
        }
    });

    MetricReport report;
    for (int i = 0; i < n; ++i) {
        report.mpjpe += per_mpjpe[static_cast<size_t>(i)];
        report.pa_mpjpe += per_pa[static_cast<size_t>(i)];
        report.mpve += per_mpve[static_cast<size_t>(i)];
    }
    report.mpjpe /= n;
    report.pa_mpjpe /= n;
    report.mpve /= n;
    for (size_t t = 0; t < taus; ++t) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += per_f[static_cast<size_t>(i) * taus + t];
        report.f_scores[opt.f_thresholds_mm[t]] = acc / n;
    }
    report.validate();
    return report;
}

// Mean last-layer attention stack over the first max_samples samples,
// aggregated over samples and heads; result is [T, T].
inline std::vector<double> collect_mean_attention(Model& model, const Dataset& ds, int max_samples,
                                                  int* t_out = nullptr) {
    check_model_dataset(model, ds);
    if (max_samples < 1) throw ValidationError("collect_mean_attention: need at least one sample");
    const int n = std::min<int>(max_samples, static_cast<int>(ds.samples.size()));
    std::vector<std::vector<double>> stacks;
    stacks.reserve(static_cast<size_t>(n));
    int heads = 0;
    for (int i = 0; i < n; ++i) {
        Graph g;
        ForwardOptions fo;
        fo.retain_attention = true;
        const ForwardResult fwd = model_forward(model, g, ds.samples[static_cast<size_t>(i)].feature, fo);
        Shape shape;
        stacks.push_back(last_layer_attention(g, fwd, &shape));
        heads = shape[0];
    }
    if (t_out != nullptr) *t_out = model.tokens();
    return aggregate_attention(stacks, heads, model.tokens());
}

// ---------------------------------------------------------------------------
// training loop

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double total = 0.0;
    double l_v = 0.0;
    double l_j = 0.0;
    double l_j_reg = 0.0;
    double l_j_proj = 0.0;
    bool evaluated = false;
    MetricReport metrics;
};

struct TrainResult {
    std::vector<EpochLog> logs;
    bool stopped_early = false;
    std::string checkpoint_path;  // empty when no out_dir was given
};

// Return true from the callback to stop after the current epoch.
using EpochCallback = std::function<bool(const EpochLog&)>;

inline std::string train_log_csv(const std::vector<EpochLog>& logs,
                                 const std::vector<double>& f_thresholds_mm) {
    std::ostringstream ss;
    ss << "epoch,lr,loss_total,loss_v,loss_j,loss_j_reg,loss_j_proj,mpjpe,pa_mpjpe,mpve";
    for (double t : f_thresholds_mm) ss << ",f@" << t;
    ss << "\n";
    for (const EpochLog& row : logs) {
        ss << row.epoch << "," << detail::g17(row.lr) << "," << detail::g17(row.total) << ","
           << detail::g17(row.l_v) << "," << detail::g17(row.l_j) << "," << detail::g17(row.l_j_reg) << ","
           << detail::g17(row.l_j_proj);
        if (row.evaluated) {
            ss << "," << detail::g17(row.metrics.mpjpe) << "," << detail::g17(row.metrics.pa_mpjpe) << ","
               << detail::g17(row.metrics.mpve);
            for (double t : f_thresholds_mm) {
                const auto it = row.metrics.f_scores.find(t);
                ss << "," << (it == row.metrics.f_scores.end() ? std::string() : detail::g17(it->second));
            }
        } else {
            for (size_t i = 0; i < 3 + f_thresholds_mm.size(); ++i) ss << ",";
        }
        ss << "\n";
    }
    return ss.str();
}

// One Adam step per batch; samples are shuffled every epoch, masked-query
// draws are derived per (epoch, position), and per-sample gradients merge in
// sample order. A checkpoint and the full log are rewritten after every
// completed epoch when out_dir is given, so an abort (non-finite loss or
// gradient) leaves the last good state on disk.
inline TrainResult train(Model& model, const Dataset& ds, const TrainConfig& cfg,
                         const std::string& out_dir = "", const EpochCallback& on_epoch = {}) {
    cfg.validate();
    check_model_dataset(model, ds);
    const int n = static_cast<int>(ds.samples.size());

    TrainResult result;
    std::string log_path;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        result.checkpoint_path = out_dir + "/checkpoint.ckpt";
        log_path = out_dir + "/train_log.csv";
    }

    AdamState adam;
    adam.init(model.params);

    bool checkpointed = false;
    const auto retained_note = [&]() -> std::string {
        return checkpointed ? "; last good checkpoint retained" : "";
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);

        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, 0xEC0C, static_cast<uint64_t>(epoch)));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[uniform_index(shuffle_rng, static_cast<uint64_t>(i + 1))]);

        double sum_total = 0.0, sum_v = 0.0, sum_j = 0.0, sum_reg = 0.0, sum_proj = 0.0;

        for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const int bn = std::min(cfg.batch_size, n - b0);
            model.params.zero_grads();

            // waves of at most cfg.threads concurrent per-sample graphs
            for (int w0 = 0; w0 < bn; w0 += cfg.threads) {
                const int wn = std::min(cfg.threads, bn - w0);
                std::vector<Graph> graphs(static_cast<size_t>(wn));
                std::vector<std::array<double, 5>> losses(static_cast<size_t>(wn));
                std::vector<std::string> failures(static_cast<size_t>(wn));

                auto run_slot = [&](int slot) {
                    try {
                        const int pos = b0 + w0 + slot;
                        const TrainingSample* sp = &ds.samples[static_cast<size_t>(order[static_cast<size_t>(pos)])];
                        TrainingSample augmented;
                        if (cfg.augment) {
                            Rng aug_rng(derive_seed(cfg.seed, 0xA06000ULL ^ static_cast<uint64_t>(epoch),
                                                    static_cast<uint64_t>(pos)));
                            const double theta = uniform_in(aug_rng, -cfg.augment_max_rot, cfg.augment_max_rot);
                            const double cs = uniform_in(aug_rng, 1.0 - cfg.augment_scale_jitter,
                                                         1.0 + cfg.augment_scale_jitter);
                            augmented = augment_sample(*sp, ds, theta, cs);
                            sp = &augmented;
                        }
                        Graph& g = graphs[static_cast<size_t>(slot)];
                        g.direct_param_grads = false;
                        Rng mask_rng(derive_seed(cfg.seed, 0x3A55EDULL ^ static_cast<uint64_t>(epoch),
                                                 static_cast<uint64_t>(pos)));
                        ForwardOptions fo;
                        fo.training = true;
                        fo.rng = &mask_rng;
                        fo.mvm_cap = cfg.mvm_max_fraction;
                        const ForwardResult fwd = model_forward(model, g, sp->feature, fo);
                        LossBreakdown lb;
                        Tensor total = detail::sample_loss(model, g, fwd, *sp, cfg.coarse_aux_loss, &lb);
                        g.backward(total);
                        losses[static_cast<size_t>(slot)] = {g.scalar(total), g.scalar(lb.l_v), g.scalar(lb.l_j),
                                                             g.scalar(lb.l_j_reg), g.scalar(lb.l_j_proj)};
                    } catch (const std::exception& e) {
                        failures[static_cast<size_t>(slot)] = e.what();
                    }
                };

                if (wn == 1) {
                    run_slot(0);
                } else {
                    std::vector<std::thread> pool;
                    pool.reserve(static_cast<size_t>(wn));
                    for (int slot = 0; slot < wn; ++slot) pool.emplace_back(run_slot, slot);
                    for (auto& th : pool) th.join();
                }

                for (int slot = 0; slot < wn; ++slot) {
                    if (!failures[static_cast<size_t>(slot)].empty())
                        throw NumericError("train: epoch " + std::to_string(epoch) + ": " +
                                           failures[static_cast<size_t>(slot)] + retained_note());
                    const auto& lv = losses[static_cast<size_t>(slot)];
                    if (!std::isfinite(lv[0]))
                        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                           retained_note());
                    graphs[static_cast<size_t>(slot)].merge_param_grads(1.0 / bn);
                    sum_total += lv[0];
                    sum_v += lv[1];
                    sum_j += lv[2];
                    sum_reg += lv[3];
                    sum_proj += lv[4];
                }
            }

            clip_gradients(model.params, cfg.clip_norm);
            try {
                adam_step(model.params, adam, lr);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + retained_note());
            }
        }

        EpochLog row;
        row.epoch = epoch;
        row.lr = lr;
        row.total = sum_total / n;
        row.l_v = sum_v / n;
        row.l_j = sum_j / n;
        row.l_j_reg = sum_reg / n;
        row.l_j_proj = sum_proj / n;
        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs - 1) {
            EvalOptions eo;
            eo.root_align = cfg.root_align_eval;
            eo.f_thresholds_mm = cfg.f_thresholds_mm;
            eo.threads = cfg.threads;
            // evaluation doubles as a health check on the freshly updated
            // weights; failing it aborts before the checkpoint is overwritten
            try {
                row.metrics = evaluate(model, ds, eo);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + retained_note());
            }
            row.evaluated = true;
        }
        result.logs.push_back(row);

        if (!out_dir.empty()) {
            save_checkpoint(result.checkpoint_path, model.params, model.digest());
            checkpointed = true;
            std::ofstream log(log_path);
            if (!log) throw IoError("cannot write " + log_path);
            log << train_log_csv(result.logs, cfg.f_thresholds_mm);
        }
        if (on_epoch && on_epoch(row)) {
            result.stopped_early = true;
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// test-time augmentation

struct TtaTransform {
    double rot_y = 0.0;  // vertical-axis rotation of the figure
    double scale = 1.0;  // image zoom (silhouette path only)
};

// Procrustes-aligns every mesh after the first onto the first and returns the
// vertexwise mean. Meshes bitwise equal to the first skip the alignment, so
// averaging duplicates of one mesh returns it unchanged.
inline std::vector<double> fuse_meshes(const std::vector<std::vector<double>>& meshes) {
    if (meshes.empty()) throw ValidationError("fuse_meshes: no meshes");
    std::vector<double> acc = meshes[0];
    for (size_t i = 1; i < meshes.size(); ++i) {
        if (meshes[i].size() != meshes[0].size())
            throw ShapeError("fuse_meshes: mesh " + std::to_string(i) + " has " +
                             std::to_string(meshes[i].size()) + " values, expected " +
                             std::to_string(meshes[0].size()));
        const std::vector<double>* aligned = &meshes[i];
        ProcrustesResult pr;
        if (meshes[i] != meshes[0]) {
            pr = procrustes_align(meshes[i], meshes[0]);
            aligned = &pr.aligned;
        }
        for (size_t j = 0; j < acc.size(); ++j) acc[j] += (*aligned)[j];
    }
    const double inv = 1.0 / static_cast<double>(meshes.size());
    for (double& v : acc) v *= inv;
    return acc;
}

// Runs one forward pass per transform on the transformed input and fuses the
// predicted full meshes. Transforms act on the raw input before feature
// extraction: rotation turns the pose (both paths), zoom rescales the
// silhouette raster (the pose embedding cannot see image scale).
inline std::vector<double> tta_infer(Model& model, const Preset& preset, const TrainingSample& sample,
                                     const std::vector<TtaTransform>& transforms) {
    if (transforms.empty()) throw ValidationError("tta_infer: need at least one transform");
    std::vector<std::vector<double>> meshes;
    meshes.reserve(transforms.size());
    for (const TtaTransform& tr : transforms) {
        if (tr.scale <= 0.0) throw ValidationError("tta_infer: scale must be positive");
        // identity transforms use the untransformed input: the root-rotation
        // decompose/recompose is not a bitwise round trip even at angle zero,
        // and an identity pass must reproduce plain inference exactly
        const bool identity = tr.rot_y == 0.0 && tr.scale == 1.0;
        std::vector<double> input;
        if (model.feature_mode == FeatureMode::oracle_mlp) {
            input = make_oracle_feature(identity ? sample.angles : rotate_root_y(sample.angles, tr.rot_y),
                                        model.cfg.feature_dim);
        } else {
            input = rasterize_silhouette(identity ? sample.v3d : rotate_points_y(sample.v3d, tr.rot_y),
                                         preset.raster_window / tr.scale);
        }
        Graph g;
        const ForwardResult fwd = model_forward(model, g, input);
        meshes.push_back(g.values(fwd.full3d));
    }
    return fuse_meshes(meshes);
}

// ---------------------------------------------------------------------------
// ablation sweeps

struct MvmAblationRow {
    double cap = 0.0;
    MetricReport metrics;
    double final_loss = 0.0;
};

// One training run per masking cap, identical init and data seeds throughout.
inline std::vector<MvmAblationRow> ablate_mvm(const EncoderConfig& base, const TemplateMesh& mesh,
                                              const JointRegressor& reg, FeatureMode mode,
                                              const Dataset& ds, const TrainConfig& tcfg,
                                              const std::vector<double>& caps = {0.0, 0.1, 0.2, 0.3, 0.4,
                                                                                 0.5}) {
    if (caps.empty()) throw ValidationError("ablate_mvm: no caps given");
    std::vector<MvmAblationRow> rows;
    for (double cap : caps) {
        if (cap < 0.0 || cap > 1.0) throw ValidationError("ablate_mvm: cap outside [0,1]");
        EncoderConfig cfg = base;
        cfg.mvm_max_fraction = cap;
        Model model = build_model(cfg, mesh, reg, mode, tcfg.seed);
        TrainConfig run_cfg = tcfg;
        run_cfg.mvm_max_fraction = cap;
        const TrainResult tr = train(model, ds, run_cfg);
        MvmAblationRow row;
        row.cap = cap;
        EvalOptions eo;
        eo.root_align = tcfg.root_align_eval;
        eo.f_thresholds_mm = tcfg.f_thresholds_mm;
        eo.threads = tcfg.threads;
        row.metrics = evaluate(model, ds, eo);
        row.final_loss = tr.logs.back().total;
        rows.push_back(row);
    }
    return rows;
}

inline std::string mvm_ablation_csv(const std::vector<MvmAblationRow>& rows) {
    std::ostringstream ss;
    ss << "cap,pa_mpjpe,mpjpe,mpve,final_loss\n";
    for (const auto& r : rows)
        ss << detail::g17(r.cap) << "," << detail::g17(r.metrics.pa_mpjpe) << ","
           << detail::g17(r.metrics.mpjpe) << "," << detail::g17(r.metrics.mpve) << ","
           << detail::g17(r.final_loss) << "\n";
    return ss.str();
}

struct SchemeSpec {
    std::string name;
    std::vector<BlockSpec> blocks;
};

// The four width schedules, all with twelve layers in total. Head counts
// fall back to the largest of {4, 2, 1} dividing the width.
inline std::vector<SchemeSpec> dim_reduction_schemes(int h) {
    auto heads_for = [](int w) { return w % 4 == 0 ? 4 : (w % 2 == 0 ? 2 : 1); };
    std::vector<SchemeSpec> out;
    out.push_back({"direct", {{h + 3, 12, heads_for(h + 3)}}});
    out.push_back({"half", {{h / 2, 12, heads_for(h / 2)}}});
    out.push_back({"half_quarter", {{h / 2, 6, heads_for(h / 2)}, {h / 4, 6, heads_for(h / 4)}}});
    out.push_back({"half_quarter_eighth",
                   {{h / 2, 4, heads_for(h / 2)}, {h / 4, 4, heads_for(h / 4)}, {h / 8, 4, heads_for(h / 8)}}});
    return out;
}

struct SchemeAblationRow {
    std::string name;
    std::string widths;
    MetricReport metrics;
    double final_loss = 0.0;
};

inline std::vector<SchemeAblationRow> ablate_dim_schemes(int h, const TemplateMesh& mesh,
                                                         const JointRegressor& reg, FeatureMode mode,
                                                         const Dataset& ds, const TrainConfig& tcfg) {
    if (h < 8) throw ValidationError("ablate_dim_schemes: feature dim must be >= 8 for distinct widths");
    std::vector<SchemeAblationRow> rows;
    for (const SchemeSpec& scheme : dim_reduction_schemes(h)) {
        EncoderConfig cfg;
        cfg.feature_dim = h;
        cfg.blocks = scheme.blocks;
        cfg.mvm_max_fraction = tcfg.mvm_max_fraction;
        Model model = build_model(cfg, mesh, reg, mode, tcfg.seed);
        const TrainResult tr = train(model, ds, tcfg);
        SchemeAblationRow row;
        row.name = scheme.name;
        std::string widths;
        for (const BlockSpec& b : scheme.blocks)
            widths += (widths.empty() ? "" : "|") + std::to_string(b.hidden_dim) + "x" +
                      std::to_string(b.layers);
        row.widths = widths;
        EvalOptions eo;
        eo.root_align = tcfg.root_align_eval;
        eo.f_thresholds_mm = tcfg.f_thresholds_mm;
        eo.threads = tcfg.threads;
        row.metrics = evaluate(model, ds, eo);
        row.final_loss = tr.logs.back().total;
        rows.push_back(row);
    }
    return rows;
}

inline std::string scheme_ablation_csv(const std::vector<SchemeAblationRow>& rows) {
    std::ostringstream ss;
    ss << "scheme,widths,pa_mpjpe,mpjpe,mpve,final_loss\n";
    for (const auto& r : rows)
        ss << r.name << "," << r.widths << "," << detail::g17(r.metrics.pa_mpjpe) << ","
           << detail::g17(r.metrics.mpjpe) << "," << detail::g17(r.metrics.mpve) << ","
           << detail::g17(r.final_loss) << "\n";
    return ss.str();
}

}  // namespace mrt
