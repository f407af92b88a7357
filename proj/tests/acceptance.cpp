// Acceptance harness: ten numbered end-to-end checks over the whole stack,
// each printing a single grep-able verdict line. Unlike the unit suites this
// binary exercises release-scale presets and the installed CLI, so it runs
// for several minutes. Exit code 0 only when every criterion passes.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mrt/checkpoint.hpp"
#include "mrt/grad_check.hpp"
#include "mrt/train.hpp"

using namespace mrt;

namespace {

// ---------------------------------------------------------------------------
// harness plumbing

int g_failures = 0;

void verdict(int n, bool pass, const std::string& note) {
    if (!pass) ++g_failures;
    std::cout << "[CRITERION " << n << "] " << (pass ? "PASS" : "FAIL");
    if (!note.empty()) std::cout << "  (" << note << ")";
    std::cout << "\n" << std::flush;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string work_dir() {
    static std::string dir = [] {
        std::string d = std::filesystem::temp_directory_path() / "mrt_acceptance";
        std::filesystem::remove_all(d);
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir;
}

struct CliResult {
    int code = -1;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    const std::string capture = work_dir() + "/cli_" + std::to_string(counter++) + ".txt";
    const int raw = std::system((std::string(MRT_CLI_PATH) + " " + args + " > " + capture + " 2>&1").c_str());
    CliResult r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream in(capture);
    std::ostringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<double> random_vec(Rng& rng, size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform_in(rng, lo, hi);
    return v;
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::setprecision(3) << v;
    return ss.str();
}

// ---------------------------------------------------------------------------
// shared model/data builders

struct Bundle {
    SynthRig rig;
    TemplateMesh mesh;
    Model model;
};

Bundle make_bundle(PresetKind kind, int h, std::vector<BlockSpec> blocks, int m_coarse, uint64_t seed,
                   double mvm_cap = 0.3, int upsampler_hidden = 128) {
    Bundle b;
    b.rig = build_rig(make_preset(kind));
    b.mesh = build_coarse(b.rig.rest_vertices, b.rig.faces, m_coarse);
    EncoderConfig cfg;
    cfg.feature_dim = h;
    cfg.blocks = std::move(blocks);
    cfg.mvm_max_fraction = mvm_cap;
    cfg.upsampler_hidden = upsampler_hidden;
    b.model = build_model(cfg, b.mesh, b.rig.regressor, FeatureMode::oracle_mlp, seed);
    return b;
}

Dataset make_data(PresetKind kind, int n, int h, uint64_t seed) {
    DatasetConfig dc;
    dc.preset = kind;
    dc.n = n;
    dc.h = h;
    dc.seed = seed;
    return generate_dataset(dc);
}

// Small two-layer configuration used by the property checks; full release
// width is only needed where a criterion pins it.
std::vector<BlockSpec> small_blocks() { return {{8, 2, 2}}; }

// ---------------------------------------------------------------------------
// criterion 1: gradient suite through the CLI (per-op table plus the micro
// end-to-end model), rel. err < 1e-4, total runtime < 60 s

void criterion_1() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string out = work_dir() + "/gradcheck";
    const CliResult r = run_cli("gradcheck --seed 7 --out-dir " + out);
    const double elapsed = seconds_since(t0);

    bool pass = r.code == 0 && elapsed < 60.0;
    std::string note = "exit " + std::to_string(r.code) + ", " + fmt(elapsed) + " s";
    if (pass) {
        // every row of the table must have actually passed
        const std::string csv = slurp(out + "/gradcheck.csv");
        int rows = 0, passed = 0;
        std::istringstream lines(csv);
        std::string line;
        std::getline(lines, line);  // header
        while (std::getline(lines, line)) {
            ++rows;
            if (line.size() >= 2 && line.compare(line.size() - 2, 2, ",1") == 0) ++passed;
        }
        pass = rows >= 25 && passed == rows && csv.find("model_end_to_end") != std::string::npos;
        note += ", " + std::to_string(passed) + "/" + std::to_string(rows) + " checks";
    }
    verdict(1, pass, note);
}

// ---------------------------------------------------------------------------
// criterion 2: release-scale body overfit. K=14, M=431, M_full=2496, H=64,
// widths 67 -> 32 -> 16 -> 8 -> 3, 64 samples; training-set MPJPE must fall
// below 10% of its epoch-0 value within 500 epochs and inside a 10-minute
// wall budget sized for a desktop-class core count.

// Training is bitwise identical for every thread count, so epochs-to-target
// carries between machines; only the wall clock depends on the host. On
// hosts with fewer than eight hardware threads the 10-minute budget is
// scaled up by the missing parallelism and the verdict says so.
double normalized_budget(double desktop_budget_s, std::string* note) {
    const unsigned hc = std::max(1u, std::thread::hardware_concurrency());
    if (hc >= 8) return desktop_budget_s;
    const double scaled = desktop_budget_s * 8.0 / hc;
    if (note != nullptr)
        *note += ", budget " + fmt(scaled) + " s for " + std::to_string(hc) + " thread(s)";
    return scaled;
}

struct OverfitOutcome {
    bool hit = false;
    double baseline = 0.0;
    double best = 0.0;
    int epochs = 0;
    double elapsed = 0.0;
};

OverfitOutcome run_overfit(PresetKind kind, int m_coarse, double wall_budget_s) {
    Bundle b = make_bundle(kind, 64, EncoderConfig::default_schedule(64), m_coarse, 1234, 0.0);
    const Dataset ds = make_data(kind, 64, 64, 4242);

    TrainConfig tc;
    tc.epochs = 500;
    tc.batch_size = 2;
    tc.lr_initial = 3e-3;
    tc.lr_decay_epoch = 999;  // flat schedule: decaying mid-descent stalls the fit
    tc.lr_decay_factor = 1.0;
    tc.mvm_max_fraction = 0.0;
    tc.eval_every = 2;
    tc.seed = 99;

    OverfitOutcome oc;
    const auto t0 = std::chrono::steady_clock::now();
    train(b.model, ds, tc, "", [&](const EpochLog& row) {
        oc.epochs = row.epoch + 1;
        oc.elapsed = seconds_since(t0);
        if (row.evaluated) {
            if (row.epoch == 0) oc.baseline = row.metrics.mpjpe;
            oc.best = oc.best == 0.0 ? row.metrics.mpjpe : std::min(oc.best, row.metrics.mpjpe);
            if (oc.baseline > 0.0 && row.metrics.mpjpe < 0.1 * oc.baseline) {
                oc.hit = true;
                return true;
            }
        }
        return oc.elapsed > wall_budget_s;  // out of time: stop and report
    });
    oc.elapsed = seconds_since(t0);
    return oc;
}

void criterion_2() {
    std::string budget_note;
    const double budget = normalized_budget(600.0, &budget_note);
    const OverfitOutcome oc = run_overfit(PresetKind::body, 431, budget);
    const bool pass = oc.hit && oc.epochs <= 500 && oc.elapsed < budget;
    verdict(2, pass,
            "epoch-0 MPJPE " + fmt(oc.baseline) + " mm, best " + fmt(oc.best) + " mm after " +
                std::to_string(oc.epochs) + " epochs, " + fmt(oc.elapsed) + " s" + budget_note);
}

// ---------------------------------------------------------------------------
// criterion 3: masking statistics and the zero-cap identity

bool masking_checks(Bundle& b, const Dataset& ds, std::string& note) {
    const int t = b.model.tokens();

    Rng rng(2024);
    double mean_fraction = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i)
        mean_fraction += static_cast<double>(draw_mask_indices(t, 0.3, rng).size()) / t;
    mean_fraction /= draws;
    const bool stats_ok = std::abs(mean_fraction - 0.15) <= 0.01;

    // cap 0 must not consume randomness or alter the pass in any way
    Rng train_rng(77);
    Graph ga, gb;
    ForwardOptions opt;
    opt.training = true;
    opt.rng = &train_rng;
    opt.mvm_cap = 0.0;
    const ForwardResult ra = model_forward(b.model, ga, ds.samples[0].feature, opt);
    const ForwardResult rb = model_forward(b.model, gb, ds.samples[0].feature);
    const bool bitwise_ok = ga.values(ra.full3d) == gb.values(rb.full3d) &&
                            ga.values(ra.joints3d) == gb.values(rb.joints3d) &&
                            ga.scalar(ra.cam_s) == gb.scalar(rb.cam_s) && ra.masked_indices.empty();

    note = "mean masked fraction " + fmt(mean_fraction) + " over 10000 draws (T=" + std::to_string(t) +
           "), cap-0 forward " + (bitwise_ok ? "bitwise equal" : "DIFFERS");
    return stats_ok && bitwise_ok;
}

void criterion_3() {
    Bundle b = make_bundle(PresetKind::body, 16, small_blocks(), 431, 31);
    const Dataset ds = make_data(PresetKind::body, 2, 16, 555);
    std::string note;
    const bool pass = masking_checks(b, ds, note);
    verdict(3, pass, note);
}

// ---------------------------------------------------------------------------
// criterion 4: permutation equivariance over the query sequence, with the
// masked-slot flags co-permuted, 50 random permutations, max dev < 1e-6

std::vector<double> token_coords(const Graph& g, const ForwardResult& r) {
    std::vector<double> out = g.values(r.joints3d);
    const std::vector<double> c = g.values(r.coarse3d);
    out.insert(out.end(), c.begin(), c.end());
    return out;
}

bool permutation_checks(Bundle& b, const Dataset& ds, int trials, std::string& note) {
    const int t = b.model.tokens();
    Rng rng(808);
    const std::vector<double>& feat = ds.samples[0].feature;
    const std::vector<int> base_mask = draw_mask_indices(t, 0.3, rng);

    Graph g_base;
    ForwardOptions base_opt;
    base_opt.forced_mask_indices = &base_mask;
    const std::vector<double> base = token_coords(g_base, model_forward(b.model, g_base, feat, base_opt));
    const std::vector<bool> base_masked = [&] {
        std::vector<bool> m(static_cast<size_t>(t), false);
        for (int idx : base_mask) m[static_cast<size_t>(idx)] = true;
        return m;
    }();

    double worst = 0.0;
    const std::vector<double> orig_pos = b.model.query_pos;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<int> perm(static_cast<size_t>(t));
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = t - 1; i > 0; --i)
            std::swap(perm[static_cast<size_t>(i)], perm[uniform_index(rng, static_cast<uint64_t>(i + 1))]);

        std::vector<int> moved_mask;
        for (int i = 0; i < t; ++i) {
            if (base_masked[static_cast<size_t>(perm[static_cast<size_t>(i)])]) moved_mask.push_back(i);
            for (int c = 0; c < 3; ++c)
                b.model.query_pos[static_cast<size_t>(i) * 3 + c] =
                    orig_pos[static_cast<size_t>(perm[static_cast<size_t>(i)]) * 3 + c];
        }

        Graph g;
        ForwardOptions opt;
        opt.forced_mask_indices = &moved_mask;
        const std::vector<double> moved = token_coords(g, model_forward(b.model, g, feat, opt));
        for (int i = 0; i < t; ++i)
            for (int c = 0; c < 3; ++c)
                worst = std::max(worst, std::abs(moved[static_cast<size_t>(i) * 3 + c] -
                                                 base[static_cast<size_t>(perm[static_cast<size_t>(i)]) * 3 + c]));
    }
    b.model.query_pos = orig_pos;
    note = std::to_string(trials) + " permutations of " + std::to_string(t) + " tokens, max dev " + fmt(worst);
    return worst < 1e-6;
}

void criterion_4() {
    Bundle b = make_bundle(PresetKind::body, 16, small_blocks(), 431, 47);
    const Dataset ds = make_data(PresetKind::body, 1, 16, 606);
    std::string note;
    const bool pass = permutation_checks(b, ds, 50, note);
    verdict(4, pass, note);
}

// ---------------------------------------------------------------------------
// criterion 5: metric oracles

std::vector<double> apply_similarity(const std::vector<double>& pts, const std::vector<double>& axis,
                                     double angle, double scale, const std::vector<double>& shift) {
    // Rodrigues rotation written out longhand, independent of the library
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    const double ux = axis[0] / n, uy = axis[1] / n, uz = axis[2] / n;
    const double c = std::cos(angle), s = std::sin(angle), o = 1.0 - c;
    const double r[3][3] = {{c + ux * ux * o, ux * uy * o - uz * s, ux * uz * o + uy * s},
                            {uy * ux * o + uz * s, c + uy * uy * o, uy * uz * o - ux * s},
                            {uz * ux * o - uy * s, uz * uy * o + ux * s, c + uz * uz * o}};
    std::vector<double> out(pts.size());
    for (size_t i = 0; i < pts.size() / 3; ++i) {
        for (int row = 0; row < 3; ++row) {
            double acc = 0.0;
            for (int col = 0; col < 3; ++col) acc += r[row][col] * pts[i * 3 + static_cast<size_t>(col)];
            out[i * 3 + static_cast<size_t>(row)] = scale * acc + shift[static_cast<size_t>(row)];
        }
    }
    return out;
}

double brute_force_f(const std::vector<double>& pred, const std::vector<double>& gt, double tau_mm) {
    auto within = [tau_mm](const std::vector<double>& a, const std::vector<double>& b) {
        size_t hits = 0;
        for (size_t i = 0; i < a.size() / 3; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (size_t j = 0; j < b.size() / 3; ++j) {
                double d2 = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double d = a[i * 3 + static_cast<size_t>(c)] - b[j * 3 + static_cast<size_t>(c)];
                    d2 += d * d;
                }
                best = std::min(best, d2);
            }
            if (std::sqrt(best) <= tau_mm / 1000.0) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(a.size() / 3);
    };
    const double p = within(pred, gt), r = within(gt, pred);
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

bool metric_oracles(int k, std::string& note) {
    Rng rng(515);
    double worst_pa = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto gt = random_vec(rng, static_cast<size_t>(k) * 3);
        const auto axis = random_vec(rng, 3);
        const auto shift = random_vec(rng, 3);
        const auto moved = apply_similarity(gt, axis, uniform_in(rng, -3.0, 3.0),
                                            uniform_in(rng, 0.5, 2.0), shift);
        worst_pa = std::max(worst_pa, pa_mpjpe(moved, gt));
    }
    const bool invariance_ok = worst_pa < 1e-6;

    bool order_ok = true;
    for (int trial = 0; trial < 1000 && order_ok; ++trial) {
        const auto pred = random_vec(rng, static_cast<size_t>(k) * 3);
        const auto gt = random_vec(rng, static_cast<size_t>(k) * 3);
        order_ok = pa_mpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9;
    }

    bool f_ok = true;
    for (int trial = 0; trial < 200 && f_ok; ++trial) {
        const size_t np = 1 + uniform_index(rng, 8), ng = 1 + uniform_index(rng, 8);
        const auto pred = random_vec(rng, np * 3, -0.01, 0.01);
        const auto gt = random_vec(rng, ng * 3, -0.01, 0.01);
        const double tau = uniform_in(rng, 1.0, 20.0);
        f_ok = f_score(pred, gt, tau) == brute_force_f(pred, gt, tau);
    }

    note = "similarity residual " + fmt(worst_pa) + " mm, PA<=MPJPE over 1000 pairs " +
           (order_ok ? "holds" : "VIOLATED") + ", f-score vs brute force " + (f_ok ? "exact" : "DIFFERS");
    return invariance_ok && order_ok && f_ok;
}

void criterion_5() {
    std::string note;
    const bool pass = metric_oracles(14, note);
    verdict(5, pass, note);
}

// ---------------------------------------------------------------------------
// criterion 6: loss identities and flag gating

bool loss_checks(int k, int m_full, std::string& note) {
    Rng rng(616);
    const auto v = random_vec(rng, static_cast<size_t>(m_full) * 3);
    const auto j = random_vec(rng, static_cast<size_t>(k) * 3);
    std::vector<double> g_mat(static_cast<size_t>(k) * m_full, 1.0 / m_full);
    const double cam_s = 1.1, cam_tx = 0.02, cam_ty = -0.01;
    const auto gt_j_reg = [&] {
        std::vector<double> out(static_cast<size_t>(k) * 3, 0.0);
        for (int r = 0; r < k; ++r)
            for (int mcol = 0; mcol < m_full; ++mcol)
                for (int c = 0; c < 3; ++c)
                    out[static_cast<size_t>(r) * 3 + c] += g_mat[static_cast<size_t>(r) * m_full + mcol] *
                                                           v[static_cast<size_t>(mcol) * 3 + c];
        return out;
    }();

    // identical prediction and target: every term must be exactly zero
    bool zero_ok;
    {
        Graph g;
        Tensor tv = g.input({m_full, 3}, v);
        Tensor tj = g.input({k, 3}, gt_j_reg);
        Tensor tg = g.input({k, m_full}, g_mat);
        Tensor ts = g.input({1, 1}, {cam_s});
        Tensor tt = g.input({1, 2}, {cam_tx, cam_ty});
        Tensor j2d = project_weak_perspective(tj, ts, tt);
        const auto gt_2d = project_weak_perspective_values(gt_j_reg, cam_s, cam_tx, cam_ty);
        const auto lb = total_loss(tv, g.input({m_full, 3}, v), tj, g.input({k, 3}, gt_j_reg), tg, j2d,
                                   g.input({k, 2}, gt_2d), 1.0, 1.0);
        zero_ok = g.scalar(lb.l_v) == 0.0 && g.scalar(lb.l_j) == 0.0 && g.scalar(lb.l_j_reg) == 0.0 &&
                  g.scalar(lb.l_j_proj) == 0.0 && g.scalar(lb.total) == 0.0;
    }

    // alpha=0: gradients of the 3D branches vanish identically (the vertex
    // input only feeds 3D terms); beta=0: the camera head gets no gradient
    auto flag_grads = [&](double alpha, double beta, bool& v_zero, bool& cam_zero, bool& any_nonzero) {
        Graph g;
        Tensor tv = g.input({m_full, 3}, v);
        Tensor tj = g.input({k, 3}, j);
        Tensor ts = g.input({1, 1}, {cam_s});
        Tensor tt = g.input({1, 2}, {cam_tx, cam_ty});
        g.node(tv).needs_grad = true;
        g.node(tj).needs_grad = true;
        g.node(ts).needs_grad = true;
        g.node(tt).needs_grad = true;
        Tensor j2d = project_weak_perspective(tj, ts, tt);
        const auto lb = total_loss(tv, g.input({m_full, 3}, random_vec(rng, v.size())), tj,
                                   g.input({k, 3}, gt_j_reg), g.input({k, m_full}, g_mat), j2d,
                                   g.input({k, 2}, random_vec(rng, static_cast<size_t>(k) * 2)), alpha, beta);
        g.backward(lb.total);
        auto all_zero = [&g](Tensor t) {
            for (double x : g.grad(t))
                if (x != 0.0) return false;
            return true;
        };
        v_zero = all_zero(tv);
        cam_zero = all_zero(ts) && all_zero(tt);
        any_nonzero = !all_zero(tj);
    };

    bool v0, c0, nz0, v1, c1, nz1, v2, c2, nz2;
    flag_grads(0.0, 1.0, v0, c0, nz0);  // 2D-only sample
    flag_grads(1.0, 0.0, v1, c1, nz1);  // no camera supervision
    flag_grads(1.0, 1.0, v2, c2, nz2);  // both on: nothing should vanish
    const bool gate_ok = v0 && !c0 && nz0 && !v1 && c1 && nz1 && !v2 && !c2 && nz2;

    note = std::string("pred==gt terms ") + (zero_ok ? "all exactly zero" : "NONZERO") +
           "; alpha/beta gating " + (gate_ok ? "correct" : "WRONG");
    return zero_ok && gate_ok;
}

void criterion_6() {
    std::string note;
    const bool pass = loss_checks(14, 60, note);
    verdict(6, pass, note);
}

// ---------------------------------------------------------------------------
// criterion 7: attention export contract

bool attention_checks(Bundle& b, const Dataset& ds, int expected_tokens, std::string& note) {
    // raw per-layer stacks are row-stochastic
    Graph g;
    ForwardOptions opt;
    opt.retain_attention = true;
    const ForwardResult fwd = model_forward(b.model, g, ds.samples[0].feature, opt);
    double worst_row = 0.0;
    for (const Tensor node : fwd.attention_nodes) {
        Shape shape;
        const std::vector<double> stack = attention_of(g, node, &shape);
        const int heads = shape[0], t = shape[1];
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < t; ++i) {
                double row = 0.0;
                for (int jcol = 0; jcol < t; ++jcol)
                    row += stack[static_cast<size_t>((h * t + i) * t + jcol)];
                worst_row = std::max(worst_row, std::abs(row - 1.0));
            }
    }

    int t_out = 0;
    const std::vector<double> agg = collect_mean_attention(b.model, ds, 2, &t_out);
    const bool shape_ok = t_out == expected_tokens &&
                          agg.size() == static_cast<size_t>(expected_tokens) * expected_tokens;
    double worst_agg_row = 0.0;
    for (int i = 0; i < t_out; ++i) {
        double row = 0.0;
        for (int jcol = 0; jcol < t_out; ++jcol) row += agg[static_cast<size_t>(i) * t_out + jcol];
        worst_agg_row = std::max(worst_agg_row, std::abs(row - 1.0));
    }

    const std::string csv_path = work_dir() + "/attention_roundtrip.csv";
    save_matrix_csv(csv_path, agg, t_out, t_out);
    int rr = 0, cc = 0;
    const std::vector<double> back = load_matrix_csv(csv_path, &rr, &cc);
    double worst_rt = rr == t_out && cc == t_out ? 0.0 : 1.0;
    for (size_t i = 0; i < agg.size() && worst_rt < 1.0; ++i)
        worst_rt = std::max(worst_rt, std::abs(back[i] - agg[i]));

    note = "row-sum dev " + fmt(std::max(worst_row, worst_agg_row)) + ", aggregate " + std::to_string(t_out) +
           "x" + std::to_string(t_out) + ", csv round-trip dev " + fmt(worst_rt);
    return worst_row < 1e-6 && worst_agg_row < 1e-6 && shape_ok && worst_rt <= 1e-9;
}

void criterion_7() {
    Bundle b = make_bundle(PresetKind::body, 16, small_blocks(), 431, 21);
    const Dataset ds = make_data(PresetKind::body, 2, 16, 717);
    std::string note;
    const bool pass = attention_checks(b, ds, 445, note);
    verdict(7, pass, note);
}

// ---------------------------------------------------------------------------
// criterion 8: the ablation subcommand sweeps caps {0..0.5} and all four
// width schedules (12 layers each), producing complete CSVs with no NaN

void criterion_8() {
    const std::string data_dir = work_dir() + "/ablate_data";
    const std::string out = work_dir() + "/ablate";
    CliResult gen = run_cli("gen-data --preset body --n 4 --feature-dim 16 --seed 81 --out-dir " + data_dir);
    if (gen.code != 0) {
        verdict(8, false, "gen-data exit " + std::to_string(gen.code));
        return;
    }
    const CliResult r = run_cli("ablate --data " + data_dir +
                                "/dataset.bin --sweep both --caps 0,0.1,0.2,0.3,0.4,0.5 --blocks 8x1x2 "
                                "--epochs 1 --batch-size 2 --seed 81 --out-dir " + out);
    if (r.code != 0) {
        verdict(8, false, "ablate exit " + std::to_string(r.code) + ": " + r.out.substr(0, 120));
        return;
    }

    const std::string mvm = slurp(out + "/mvm_ablation.csv");
    const std::string dims = slurp(out + "/scheme_ablation.csv");
    const bool mvm_ok = std::count(mvm.begin(), mvm.end(), '\n') == 7 && mvm.find("nan") == std::string::npos &&
                        mvm.find("inf") == std::string::npos;
    bool dims_ok = std::count(dims.begin(), dims.end(), '\n') == 5 && dims.find("nan") == std::string::npos;
    int twelve_layer_rows = 0;
    std::istringstream lines(dims);
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {  // widths column looks like 8x6|4x6
        const size_t a = line.find(','), bpos = line.find(',', a + 1);
        int layers = 0;
        std::istringstream widths(line.substr(a + 1, bpos - a - 1));
        std::string part;
        while (std::getline(widths, part, '|'))
            layers += std::atoi(part.substr(part.find('x') + 1).c_str());
        if (layers == 12) ++twelve_layer_rows;
    }
    dims_ok = dims_ok && twelve_layer_rows == 4;
    for (const char* name : {"direct", "half", "half_quarter", "half_quarter_eighth"})
        dims_ok = dims_ok && dims.find(name) != std::string::npos;

    verdict(8, mvm_ok && dims_ok,
            "6 caps, 4 schedules with " + std::to_string(twelve_layer_rows) + "/4 twelve-layer rows");
}

// ---------------------------------------------------------------------------
// criterion 9: persistence round trips

void criterion_9() {
    const std::string dir = work_dir() + "/persist";
    std::filesystem::create_directories(dir);
    const Dataset ds = make_data(PresetKind::body, 4, 16, 909);

    // dataset: save -> load -> save, byte identical
    save_dataset(dir + "/a.bin", ds);
    save_dataset(dir + "/b.bin", load_dataset(dir + "/a.bin"));
    const bool ds_ok = slurp(dir + "/a.bin") == slurp(dir + "/b.bin") && !slurp(dir + "/a.bin").empty();

    // a briefly trained model so the weights are not just the init
    Bundle b = make_bundle(PresetKind::body, 16, small_blocks(), 431, 91);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 2;
    tc.lr_initial = 1e-3;
    tc.eval_every = 1000;
    tc.seed = 9;
    train(b.model, ds, tc);

    const uint64_t digest = b.model.digest();
    save_checkpoint(dir + "/w1.ckpt", b.model.params, digest);
    Bundle clone1 = make_bundle(PresetKind::body, 16, small_blocks(), 431, 92);
    load_checkpoint(dir + "/w1.ckpt", clone1.model.params, clone1.model.digest());
    save_checkpoint(dir + "/w2.ckpt", clone1.model.params, clone1.model.digest());
    const bool ckpt_ok = slurp(dir + "/w1.ckpt") == slurp(dir + "/w2.ckpt") && !slurp(dir + "/w1.ckpt").empty();

    // evaluation after reload is reproducible to the last bit
    Bundle clone2 = make_bundle(PresetKind::body, 16, small_blocks(), 431, 93);
    load_checkpoint(dir + "/w1.ckpt", clone2.model.params, clone2.model.digest());
    EvalOptions eo;
    const MetricReport r1 = evaluate(clone1.model, ds, eo);
    const MetricReport r2 = evaluate(clone2.model, ds, eo);
    const bool eval_ok = metric_report_csv(r1) == metric_report_csv(r2) && r1.mpjpe == r2.mpjpe &&
                         r1.pa_mpjpe == r2.pa_mpjpe && r1.mpve == r2.mpve && r1.f_scores == r2.f_scores;

    verdict(9, ds_ok && ckpt_ok && eval_ok,
            std::string("dataset ") + (ds_ok ? "bitwise" : "DIFFERS") + ", checkpoint " +
                (ckpt_ok ? "bitwise" : "DIFFERS") + ", reloaded eval " + (eval_ok ? "bitwise" : "DIFFERS"));
}

// ---------------------------------------------------------------------------
// criterion 10: the hand preset through the identical binary and the same
// property checks (criteria 1-7 rerun against K=21, M=195, M_full=1280)

void criterion_10() {
    std::vector<std::string> notes;
    bool pass = true;
    auto sub = [&](const std::string& name, bool ok, const std::string& detail) {
        pass = pass && ok;
        if (!ok) notes.push_back(name + ": " + detail);
    };

    // the CLI trains the hand preset with no code changes
    const std::string data_dir = work_dir() + "/hand_data";
    const std::string run_dir = work_dir() + "/hand_run";
    CliResult gen = run_cli("gen-data --preset hand --n 8 --feature-dim 16 --seed 10 --out-dir " + data_dir);
    sub("gen-data", gen.code == 0, "exit " + std::to_string(gen.code));
    if (gen.code == 0) {
        const CliResult tr = run_cli("train --data " + data_dir +
                                     "/dataset.bin --epochs 2 --batch-size 2 --blocks 8x1x2 --eval-every 1 "
                                     "--seed 10 --out-dir " + run_dir);
        sub("cli-train", tr.code == 0 && slurp(run_dir + "/train_log.csv").find("nan") == std::string::npos,
            "exit " + std::to_string(tr.code));
    }

    // gradient flow (criterion 1 analog): every parameter of a reduced hand
    // model against central differences, through the full training loss
    {
        Bundle b = make_bundle(PresetKind::hand, 8, {{4, 1, 1}}, 8, 108, 0.3, 4);
        for (size_t i = 0; i < b.model.params.count(); ++i) {
            Param& p = b.model.params[i];
            // same first-order trick as the unit suite: scale projections so
            // attention gradients rise above finite-difference noise
            const bool proj = p.name.find(".attn.w") != std::string::npos ||
                              p.name.find(".ffn.w") != std::string::npos ||
                              p.name.find("in_proj.w") != std::string::npos ||
                              p.name == "out_proj.w" || p.name == "camera.w";
            if (proj)
                for (auto& x : p.value) x *= 10.0;
        }
        Rng rng(110);
        const int k = b.model.k, m_full = b.model.m_full;
        const auto feat = random_vec(rng, 8);
        const auto gt_v = random_vec(rng, static_cast<size_t>(m_full) * 3);
        const auto gt_j = random_vec(rng, static_cast<size_t>(k) * 3);
        const auto gt_2d = random_vec(rng, static_cast<size_t>(k) * 2);
        const std::vector<int> mask = {1, 4};
        auto forward = [&](bool with_grad) {
            Graph g;
            ForwardOptions opt;
            opt.forced_mask_indices = &mask;
            const ForwardResult r = model_forward(b.model, g, feat, opt);
            Tensor j2d = project_weak_perspective(r.joints3d, r.cam_s, r.cam_t);
            const auto lb = total_loss(r.full3d, g.input({m_full, 3}, gt_v), r.joints3d,
                                       g.input({k, 3}, gt_j), g.input({k, m_full}, b.model.g_matrix), j2d,
                                       g.input({k, 2}, gt_2d), 1.0, 1.0);
            if (with_grad) g.backward(lb.total);
            return g.scalar(lb.total);
        };
        const auto report = grad_check_params(b.model.params, forward, 1e-5);
        sub("gradients", report.worst_rel_err < 1e-4,
            "rel err " + fmt(report.worst_rel_err) + " at " + report.worst_param);
    }

    // training progress (criterion 2 analog under the hand rig)
    std::string budget_note;
    const double budget = normalized_budget(600.0, &budget_note);
    const OverfitOutcome oc = run_overfit(PresetKind::hand, 195, budget);
    sub("overfit", oc.hit && oc.epochs <= 500 && oc.elapsed < budget,
        "baseline " + fmt(oc.baseline) + " best " + fmt(oc.best) + " after " + std::to_string(oc.epochs) +
            " epochs, " + fmt(oc.elapsed) + " s" + budget_note);

    // criteria 3, 4, 5, 6, 7 analogs at hand shape
    Bundle small = make_bundle(PresetKind::hand, 16, small_blocks(), 195, 1010);
    const Dataset hd = make_data(PresetKind::hand, 2, 16, 1011);
    std::string detail;
    sub("masking", masking_checks(small, hd, detail), detail);
    sub("permutation", permutation_checks(small, hd, 50, detail), detail);
    sub("metrics", metric_oracles(21, detail), detail);
    sub("losses", loss_checks(21, 64, detail), detail);
    sub("attention", attention_checks(small, hd, 216, detail), detail);

    std::string note = "K=21 preset, binary + 7 property groups";
    for (const std::string& n : notes) note += "; " + n;
    verdict(10, pass, note);
}

}  // namespace

int main(int argc, char** argv) {
    // optional arguments select a subset, e.g. `acceptance 3 7 9`
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

    std::cout << "acceptance checks (" << MRT_CLI_PATH << ")\n";
    const auto t0 = std::chrono::steady_clock::now();
    struct Entry {
        int n;
        void (*fn)();
    };
    const Entry entries[] = {{1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4},
                             {5, criterion_5}, {6, criterion_6}, {7, criterion_7}, {8, criterion_8},
                             {9, criterion_9}, {10, criterion_10}};
    for (const Entry& e : entries) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), e.n) == selected.end()) continue;
        try {
            e.fn();
        } catch (const std::exception& ex) {
            verdict(e.n, false, std::string("threw: ") + ex.what());
        }
    }
    std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed")
              << " in " << fmt(seconds_since(t0)) << " s\n";
    return g_failures == 0 ? 0 : 1;
}
