#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mrt/metrics.hpp"
#include "mrt/synth.hpp"

using namespace mrt;

namespace {

struct CmdResult {
    int code = -1;
    std::string out;  // stdout + stderr
};

CmdResult run_cli(const std::string& args) {
    static int counter = 0;
    const std::string capture = ::testing::TempDir() + "cli_capture_" + std::to_string(counter++) + ".txt";
    const std::string cmd = std::string(MRT_CLI_PATH) + " " + args + " > " + capture + " 2>&1";
    const int raw = std::system(cmd.c_str());
    CmdResult r;
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

std::string fresh_dir(const std::string& name) {
    const std::string dir = ::testing::TempDir() + name;
    std::filesystem::remove_all(dir);
    return dir;
}

int count_lines_with_prefix(const std::string& text, const std::string& prefix) {
    int n = 0;
    size_t pos = 0;
    while (pos < text.size()) {
        if (text.compare(pos, prefix.size(), prefix) == 0) ++n;
        const size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return n;
}

// One tiny trained run shared by the checkpoint-consuming tests; training
// the 2.2M-parameter body model for two epochs takes around a second.
struct TrainedRun {
    std::string data_dir = fresh_dir("cli_shared_data");
    std::string run_dir = fresh_dir("cli_shared_run");

    TrainedRun() {
        CmdResult gen = run_cli("gen-data --preset body --n 4 --feature-dim 16 --seed 5 --out-dir " + data_dir);
        if (gen.code != 0) throw std::runtime_error("gen-data failed:\n" + gen.out);
        CmdResult tr = run_cli("train --data " + dataset() + " --epochs 2 --batch-size 2 --blocks 8x1x2 " +
                               "--eval-every 1 --seed 5 --out-dir " + run_dir);
        if (tr.code != 0) throw std::runtime_error("train failed:\n" + tr.out);
    }

    std::string dataset() const { return data_dir + "/dataset.bin"; }
    std::string checkpoint() const { return run_dir + "/checkpoint.ckpt"; }
    std::string model_json() const { return run_dir + "/model.json"; }
    std::string model_args() const {
        return " --checkpoint " + checkpoint() + " --model-config " + model_json();
    }
};

const TrainedRun& shared_run() {
    static TrainedRun run;
    return run;
}

}  // namespace

// ---------------------------------------------------------------------------
// usage surface

TEST(CliHelp, TopLevelExitsZeroAndListsSubcommands) {
    const CmdResult r = run_cli("--help");
    EXPECT_EQ(r.code, 0);
    for (const char* sub : {"gen-data", "train", "eval", "infer", "attention", "gradcheck", "ablate"})
        EXPECT_NE(r.out.find(sub), std::string::npos) << r.out;
}

TEST(CliHelp, SubcommandHelpListsItsFlags) {
    const CmdResult r = run_cli("train --help");
    EXPECT_EQ(r.code, 0);
    for (const char* flag : {"--config", "--out-dir", "--seed", "--threads", "--data", "--epochs",
                             "--batch-size", "--lr", "--mvm-cap", "--blocks", "--augment"})
        EXPECT_NE(r.out.find(flag), std::string::npos) << "missing " << flag << "\n" << r.out;
}

TEST(CliErrors, UnknownSubcommandAndFlagExitOne) {
    EXPECT_EQ(run_cli("frobnicate").code, 1);
    EXPECT_EQ(run_cli("gen-data --out-dir /tmp/x --no-such-flag 3").code, 1);
}

TEST(CliErrors, MissingRequiredArgumentsExitOne) {
    EXPECT_EQ(run_cli("train --data /tmp/nowhere.bin").code, 1);  // no out-dir
    const CmdResult r = run_cli("train --out-dir " + fresh_dir("cli_noarg"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("--data"), std::string::npos);
}

TEST(CliErrors, MissingInputFileExitsThree) {
    const CmdResult r = run_cli("eval --data /tmp/does_not_exist.bin --use-gt-as-pred");
    EXPECT_EQ(r.code, 3);
}

TEST(CliErrors, ImpossibleGradcheckToleranceExitsTwo) {
    EXPECT_EQ(run_cli("gradcheck --tol 1e-30").code, 2);
}

// ---------------------------------------------------------------------------
// gen-data

TEST(CliGenData, SameSeedSameBytesDifferentSeedDifferentBytes) {
    const std::string a = fresh_dir("cli_gen_a");
    const std::string b = fresh_dir("cli_gen_b");
    const std::string c = fresh_dir("cli_gen_c");
    ASSERT_EQ(run_cli("gen-data --preset hand --n 3 --feature-dim 8 --seed 7 --out-dir " + a).code, 0);
    ASSERT_EQ(run_cli("gen-data --preset hand --n 3 --feature-dim 8 --seed 7 --out-dir " + b).code, 0);
    ASSERT_EQ(run_cli("gen-data --preset hand --n 3 --feature-dim 8 --seed 8 --out-dir " + c).code, 0);
    const std::string bytes_a = slurp(a + "/dataset.bin");
    EXPECT_EQ(bytes_a, slurp(b + "/dataset.bin"));
    EXPECT_NE(bytes_a, slurp(c + "/dataset.bin"));
    EXPECT_FALSE(bytes_a.empty());
}

TEST(CliGenData, ConfigFileSuppliesValuesAndFlagsOverrideThem) {
    const std::string dir = fresh_dir("cli_gen_cfg");
    std::filesystem::create_directories(dir);
    {
        std::ofstream cfg(dir + "/cfg.json");
        cfg << R"({"preset": "hand", "n": 3, "feature_dim": 8, "seed": 9})";
    }
    const std::string out1 = fresh_dir("cli_gen_cfg_o1");
    ASSERT_EQ(run_cli("gen-data --config " + dir + "/cfg.json --out-dir " + out1).code, 0);
    Dataset ds1 = load_dataset(out1 + "/dataset.bin");
    EXPECT_EQ(ds1.samples.size(), 3u);
    EXPECT_EQ(ds1.preset, PresetKind::hand);
    EXPECT_EQ(ds1.seed, 9u);

    const std::string out2 = fresh_dir("cli_gen_cfg_o2");
    ASSERT_EQ(run_cli("gen-data --config " + dir + "/cfg.json --n 5 --out-dir " + out2).code, 0);
    Dataset ds2 = load_dataset(out2 + "/dataset.bin");
    EXPECT_EQ(ds2.samples.size(), 5u);  // flag beats file
    EXPECT_EQ(ds2.seed, 9u);            // file still fills the rest

    // the echoed effective config records the winning values
    const std::string echoed = slurp(out2 + "/config.json");
    EXPECT_NE(echoed.find("\"n\": 5"), std::string::npos) << echoed;
    EXPECT_NE(echoed.find("\"seed\": 9"), std::string::npos) << echoed;
}

// ---------------------------------------------------------------------------
// train / eval

TEST(CliTrain, WritesCheckpointLogModelRecordAndMetrics) {
    const TrainedRun& run = shared_run();
    EXPECT_TRUE(std::filesystem::exists(run.checkpoint()));
    EXPECT_TRUE(std::filesystem::exists(run.model_json()));
    EXPECT_TRUE(std::filesystem::exists(run.run_dir + "/train_log.csv"));
    EXPECT_TRUE(std::filesystem::exists(run.run_dir + "/metrics.csv"));
    EXPECT_TRUE(std::filesystem::exists(run.run_dir + "/config.json"));

    const std::string log = slurp(run.run_dir + "/train_log.csv");
    EXPECT_NE(log.find("epoch,lr,loss_total"), std::string::npos);
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);  // header + 2 epochs
}

TEST(CliEval, ReportMatchesTrainingRunAndIsRepeatable) {
    const TrainedRun& run = shared_run();
    const std::string base = "eval --data " + run.dataset() + run.model_args();
    const CmdResult a = run_cli(base);
    const CmdResult b = run_cli(base);
    ASSERT_EQ(a.code, 0) << a.out;
    EXPECT_EQ(a.out, b.out);
    EXPECT_NE(a.out.find("mpjpe,pa_mpjpe,mpve,f@5,f@15"), std::string::npos);

    const std::string out_dir = fresh_dir("cli_eval_out");
    const CmdResult c = run_cli(base + " --out-dir " + out_dir);
    ASSERT_EQ(c.code, 0);
    EXPECT_EQ(slurp(out_dir + "/metrics.csv"), c.out);
}

TEST(CliEval, GroundTruthFixtureScoresPerfectly) {
    const TrainedRun& run = shared_run();
    const CmdResult r = run_cli("eval --data " + run.dataset() + " --use-gt-as-pred");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("\n0,0,0,1,1\n"), std::string::npos) << r.out;
}

TEST(CliEval, RejectsCheckpointWithMismatchedArchitecture) {
    const TrainedRun& run = shared_run();
    const std::string dir = fresh_dir("cli_eval_badcfg");
    std::filesystem::create_directories(dir);
    std::string record = slurp(run.model_json());
    const auto pos = record.find("\"upsampler_hidden\": 128");
    ASSERT_NE(pos, std::string::npos) << record;
    record.replace(pos, 23, "\"upsampler_hidden\": 64");
    {
        std::ofstream out(dir + "/model.json");
        out << record;
    }
    const CmdResult r = run_cli("eval --data " + run.dataset() + " --checkpoint " + run.checkpoint() +
                                " --model-config " + dir + "/model.json");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("different model configuration"), std::string::npos) << r.out;
}

// ---------------------------------------------------------------------------
// infer

TEST(CliInfer, WritesMeshesAndCameraRecord) {
    const TrainedRun& run = shared_run();
    const std::string out = fresh_dir("cli_infer");
    const CmdResult r = run_cli("infer --data " + run.dataset() + " --index 1" + run.model_args() +
                                " --out-dir " + out);
    ASSERT_EQ(r.code, 0) << r.out;

    const std::string full = slurp(out + "/full.obj");
    const std::string coarse = slurp(out + "/coarse.obj");
    EXPECT_EQ(count_lines_with_prefix(full, "v "), 2496);
    EXPECT_GT(count_lines_with_prefix(full, "f "), 0);
    EXPECT_EQ(count_lines_with_prefix(coarse, "v "), 431);
    const std::string cam = slurp(out + "/camera.json");
    EXPECT_NE(cam.find("\"s\""), std::string::npos);
    EXPECT_NE(cam.find("\"tx\""), std::string::npos);
    EXPECT_NE(cam.find("\"ty\""), std::string::npos);
}

TEST(CliInfer, IdentityTtaReproducesPlainOutputBytes) {
    const TrainedRun& run = shared_run();
    const std::string plain = fresh_dir("cli_infer_plain");
    const std::string tta = fresh_dir("cli_infer_tta");
    ASSERT_EQ(run_cli("infer --data " + run.dataset() + " --index 0" + run.model_args() +
                      " --out-dir " + plain).code, 0);
    ASSERT_EQ(run_cli("infer --data " + run.dataset() + " --index 0" + run.model_args() +
                      " --tta 0 --out-dir " + tta).code, 0);
    EXPECT_EQ(slurp(plain + "/full.obj"), slurp(tta + "/full.obj"));

    const std::string multi = fresh_dir("cli_infer_tta3");
    ASSERT_EQ(run_cli("infer --data " + run.dataset() + " --index 0" + run.model_args() +
                      " --tta 0,0.4:1.05,-0.4:0.95 --out-dir " + multi).code, 0);
    EXPECT_NE(slurp(multi + "/full.obj"), slurp(plain + "/full.obj"));
}

TEST(CliInfer, OutOfRangeIndexExitsOne) {
    const TrainedRun& run = shared_run();
    const CmdResult r = run_cli("infer --data " + run.dataset() + " --index 99" + run.model_args() +
                                " --out-dir " + fresh_dir("cli_infer_oob"));
    EXPECT_EQ(r.code, 1);
}

// ---------------------------------------------------------------------------
// attention

TEST(CliAttention, ExportsRowStochasticMapAndJointColumns) {
    const TrainedRun& run = shared_run();
    const std::string out = fresh_dir("cli_attn");
    const CmdResult r = run_cli("attention --data " + run.dataset() + run.model_args() +
                                " --samples 2 --out-dir " + out);
    ASSERT_EQ(r.code, 0) << r.out;

    int rows = 0, cols = 0;
    const std::vector<double> agg = load_matrix_csv(out + "/attention_mean.csv", &rows, &cols);
    EXPECT_EQ(rows, 445);  // 14 joints + 431 coarse vertices
    EXPECT_EQ(cols, 445);
    for (int i = 0; i < rows; ++i) {
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) sum += agg[static_cast<size_t>(i) * cols + j];
        ASSERT_NEAR(sum, 1.0, 1e-6) << "row " << i;
    }

    const std::string pgm = slurp(out + "/attention_mean.pgm");
    EXPECT_EQ(pgm.rfind("P5\n445 445\n255\n", 0), 0u);
    for (const char* joint : {"r_wrist", "r_elbow", "l_knee", "l_ankle", "head"}) {
        int jr = 0, jc = 0;
        load_matrix_csv(out + "/attention_" + std::string(joint) + ".csv", &jr, &jc);
        EXPECT_EQ(jr, 445);
        EXPECT_EQ(jc, 1);
    }
}

TEST(CliAttention, UnknownJointNameListsAvailableOnes) {
    const TrainedRun& run = shared_run();
    const CmdResult r = run_cli("attention --data " + run.dataset() + run.model_args() +
                                " --samples 1 --joints no_such_joint --out-dir " + fresh_dir("cli_attn_bad"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("no_such_joint"), std::string::npos);
    EXPECT_NE(r.out.find("pelvis"), std::string::npos) << r.out;
}

// ---------------------------------------------------------------------------
// gradcheck

TEST(CliGradcheck, AllChecksPassAtDefaultTolerance) {
    const std::string out = fresh_dir("cli_gradcheck");
    const CmdResult r = run_cli("gradcheck --seed 11 --out-dir " + out);
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("gradient checks passed"), std::string::npos);
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
    const std::string csv = slurp(out + "/gradcheck.csv");
    EXPECT_NE(csv.find("model_end_to_end"), std::string::npos);
    EXPECT_NE(csv.find("multi_head_attention"), std::string::npos);
}

// ---------------------------------------------------------------------------
// ablate

TEST(CliAblate, WritesBothSweepCsvsAtMicroScale) {
    const TrainedRun& run = shared_run();
    const std::string out = fresh_dir("cli_ablate");
    const CmdResult r = run_cli("ablate --data " + run.dataset() +
                                " --sweep both --caps 0,0.3 --blocks 8x1x2 --epochs 1 --batch-size 2" +
                                " --seed 5 --out-dir " + out);
    ASSERT_EQ(r.code, 0) << r.out;

    const std::string mvm = slurp(out + "/mvm_ablation.csv");
    EXPECT_EQ(std::count(mvm.begin(), mvm.end(), '\n'), 3);  // header + 2 caps
    EXPECT_EQ(mvm.find("nan"), std::string::npos);
    const std::string dims = slurp(out + "/scheme_ablation.csv");
    EXPECT_EQ(std::count(dims.begin(), dims.end(), '\n'), 5);  // header + 4 schemes
    EXPECT_EQ(dims.find("nan"), std::string::npos);
    EXPECT_NE(dims.find("half_quarter_eighth"), std::string::npos);
}
