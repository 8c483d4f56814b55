// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// fail. Heavier fitting runs come last; their configurations (seeds, epochs,
// rig sizes) are pinned here so every run is reproducible.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mvnrsfm/io.hpp"
#include "mvnrsfm/loss.hpp"
#include "mvnrsfm/metrics.hpp"
#include "mvnrsfm/rng.hpp"
#include "mvnrsfm/train.hpp"
#include "mvnrsfm/triangulation.hpp"

using namespace mvnrsfm;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int id, const char* name, bool pass, const std::string& detail, double secs) {
    std::printf("[%s] %d. %-34s %s (%.1f s)\n", pass ? "PASS" : "FAIL", id, name, detail.c_str(),
                secs);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double mean_diameter(const data::MultiViewDataset& d) {
    double sum = 0.0;
    for (int n = 0; n < d.N; ++n) {
        double dmax = 0.0;
        for (int i = 0; i < d.P; ++i)
            for (int j = i + 1; j < d.P; ++j)
                dmax = std::max(dmax, (d.gt[n].row(i) - d.gt[n].row(j)).norm());
        sum += dmax;
    }
    return sum / d.N;
}

// ---------------------------------------------------------------------------
// 1. Gold-standard triangulation: clean rig (P=20, K=4, N=200),
//    PA-MPJPE < 1e-6 in under 10 s.
void criterion_1() {
    const auto t0 = Clock::now();
    data::SynthConfig cfg;
    cfg.P = 20;
    cfg.K = 4;
    cfg.N = 200;
    const auto d = data::synth_generate(cfg, 1001);
    const auto tri = triangulation::triangulate_dataset(d);
    const auto rep = metrics::evaluate(tri.S, d.gt, 0.1);
    const double secs = seconds_since(t0);
    const bool pass = tri.failures == 0 && rep.pa_mpjpe < 1e-6 && secs < 10.0;
    report(1, "gold-standard triangulation", pass,
           fmt("PA-MPJPE %.3g < 1e-6, %d failures, runtime < 10 s", rep.pa_mpjpe, tri.failures),
           secs);
}

// ---------------------------------------------------------------------------
// 2. OnP optimality: 1000 random (S, pose) pairs; the solver's objective
//    beats 10,000 sampled (R, s) candidates every time and recovers the
//    generating rotation within 1e-6 Frobenius on noise-free input.
void criterion_2() {
    const auto t0 = Clock::now();
    Rng rng(1002);
    Rng srng(1003);
    int optimality_failures = 0;
    double worst_recovery = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int P = 4 + static_cast<int>(rng.uniform_int(9));
        Eigen::MatrixXd S = rng.gaussian_matrix(P, 3);
        S.rowwise() -= S.colwise().mean().eval();
        geometry::CameraPose pose;
        pose.R = rng.rotation();
        pose.s = 0.2 + 2.0 * rng.uniform();
        const Eigen::MatrixXd W = pose.s * S * pose.R.leftCols<2>();

        const auto onp = geometry::solve_onp(W, S);
        worst_recovery = std::max(worst_recovery, (onp.pose.R - pose.R).norm());
        const double fstar = (W - onp.pose.s * S * onp.pose.R.leftCols<2>()).norm();

        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 10000; ++i) {
            const Eigen::Matrix3d R = srng.rotation();
            const double s = pose.s * std::exp(srng.gaussian());
            best = std::min(best, (W - s * S * R.leftCols<2>()).norm());
        }
        if (fstar > best + 1e-12) ++optimality_failures;
    }
    const bool pass = optimality_failures == 0 && worst_recovery < 1e-6;
    report(2, "OnP optimality", pass,
           fmt("0 of 1000 trials beaten by samples (failures: %d), worst rotation recovery "
               "%.3g < 1e-6",
               optimality_failures, worst_recovery),
           seconds_since(t0));
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness: reverse mode vs central differences (h = 1e-5),
//    relative error < 1e-4 over 100 random small configurations, excluding
//    coordinates within 1e-6 of a kink.
void criterion_3() {
    const auto t0 = Clock::now();
    Rng rng(1004);
    int bad_configs = 0;
    long coords_checked = 0, coords_excluded = 0;
    double worst = 0.0;

    for (int config = 0; config < 100; ++config) {
        const int P = 4 + static_cast<int>(rng.uniform_int(5));   // 4..8
        const int L = 1 + static_cast<int>(rng.uniform_int(3));   // 1..3
        const int K = 1 + static_cast<int>(rng.uniform_int(3));   // 1..3
        const int N = 1 + static_cast<int>(rng.uniform_int(3));   // 1..3
        std::vector<int> widths;
        int w = 6 + static_cast<int>(rng.uniform_int(5));
        for (int l = 0; l < L; ++l) {
            widths.push_back(w);
            w = std::max(2, w / 2 + static_cast<int>(rng.uniform_int(2)) - 1);
            if (!widths.empty() && w >= widths.back()) w = widths.back() - 1;
            if (w < 2) w = 2;
        }
        for (std::size_t i = 1; i < widths.size(); ++i)
            if (widths[i] >= widths[i - 1]) widths[i] = widths[i - 1] - 1;

        auto theta = prior::DictionaryStack::random_init(P, widths, 9000 + config);
        std::vector<diff::Instance> instances(N);
        for (auto& inst : instances) {
            inst.resize(K);
            for (auto& v : inst) v = rng.gaussian_matrix(P, 2);
        }

        const diff::ParamLayout lay = diff::ParamLayout::of(theta);
        diff::LossWeights weights;  // defaults, beta 0.1
        Eigen::VectorXd grad;
        diff::loss_gradient(std::span<const diff::Instance>(instances), theta, weights, grad);

        const Eigen::VectorXd p0 = diff::flatten(theta);
        const double h = 1e-5;
        auto eval = [&](Eigen::Index j, double delta, std::vector<double>& margins) {
            Eigen::VectorXd p = p0;
            p(j) += delta;
            const auto th = diff::unflatten(lay, p);
            diff::Tape tape;
            tape.kink_log = &margins;
            double total = 0.0;
            for (const auto& inst : instances) {
                tape.reset();
                const auto tv = diff::make_theta_vars(tape, th);
                total += tape.scalar(diff::build_instance_loss(tape, tv, inst, weights).total);
            }
            return total / instances.size();
        };

        double config_worst = 0.0;
        for (Eigen::Index j = 0; j < lay.total; ++j) {
            std::vector<double> m0, mp, mm;
            const double f0 = eval(j, 0.0, m0);
            (void)f0;
            const double fp = eval(j, h, mp);
            const double fm = eval(j, -h, mm);
            bool excluded = false;
            for (std::size_t i = 0; i < m0.size(); ++i)
                if (std::abs(m0[i]) < 1e-6 || std::abs(mp[i]) < 1e-6 || std::abs(mm[i]) < 1e-6 ||
                    (m0[i] > 0) != (mp[i] > 0) || (m0[i] > 0) != (mm[i] > 0)) {
                    excluded = true;
                    break;
                }
            if (excluded) {
                ++coords_excluded;
                continue;
            }
            const double fd = (fp - fm) / (2.0 * h);
            const double rel = std::abs(grad(j) - fd) / std::max({1.0, std::abs(grad(j)), std::abs(fd)});
            config_worst = std::max(config_worst, rel);
            ++coords_checked;
        }
        worst = std::max(worst, config_worst);
        if (config_worst >= 1e-4) ++bad_configs;
    }
    const bool pass = bad_configs == 0;
    report(3, "gradient correctness", pass,
           fmt("%ld coordinates over 100 configs, worst rel err %.3g < 1e-4 (%ld kink-adjacent "
               "excluded)",
               coords_checked, worst, coords_excluded),
           seconds_since(t0));
}

// ---------------------------------------------------------------------------
// 7. Pooling properties, exact: permutation invariance, K=1 identity,
//    doubling on duplicated views.
void criterion_7() {
    const auto t0 = Clock::now();
    Rng rng(1007);
    const auto theta = prior::DictionaryStack::random_init(10, {12, 6}, 1008);
    bool pass = true;

    for (int trial = 0; trial < 20; ++trial) {
        std::vector<geometry::Keypoints2D> views;
        for (int k = 0; k < 4; ++k) views.push_back(rng.gaussian_matrix(10, 2));
        const auto a = prior::forward(views, theta, {.lenient = true});
        std::vector<geometry::Keypoints2D> shuffled{views[2], views[0], views[3], views[1]};
        const auto b = prior::forward(shuffled, theta, {.lenient = true});
        if ((a.pooled - b.pooled).cwiseAbs().maxCoeff() != 0.0) pass = false;
        if ((a.S - b.S).cwiseAbs().maxCoeff() != 0.0) pass = false;

        const auto one = prior::forward({views[0]}, theta, {.lenient = true});
        const auto rf = prior::factorize_rotation(
            prior::encode_view(geometry::center(views[0]).first, theta).layers.back(), theta,
            true);
        if ((one.pooled - rf.psi).cwiseAbs().maxCoeff() != 0.0) pass = false;  // K=1 identity

        const auto twice = prior::forward({views[0], views[0]}, theta, {.lenient = true});
        if ((twice.pooled - 2.0 * one.pooled).cwiseAbs().maxCoeff() != 0.0) pass = false;
    }
    report(7, "pooling equivariance properties", pass,
           "permutation invariance, K=1 identity, duplicate doubling all exact",
           seconds_since(t0));
}

// ---------------------------------------------------------------------------
// 8. Determinism and persistence: same-seed reruns bitwise identical,
//    bit-exact container round trips, resume equivalence.
void criterion_8() {
    const auto t0 = Clock::now();
    namespace fs = std::filesystem;
    const fs::path tmp = fs::temp_directory_path() / "mvnrsfm_acceptance";
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    data::SynthConfig scfg;
    scfg.P = 8;
    scfg.K = 2;
    scfg.N = 48;
    scfg.basis_rank = 2;
    const auto d = data::synth_generate(scfg, 1009);
    const auto d2 = data::synth_generate(scfg, 1009);

    bool pass = true;
    std::string what = "ok";
    auto expect = [&](bool cond, const char* tag) {
        if (!cond && pass) {
            pass = false;
            what = std::string("failed: ") + tag;
        }
    };

    for (int n = 0; n < d.N && pass; ++n)
        for (int k = 0; k < d.K; ++k)
            expect((d.W[n][k] - d2.W[n][k]).cwiseAbs().maxCoeff() == 0.0, "same-seed datasets");

    io::save_dataset(d, tmp / "ds");
    const auto dl = io::load_dataset(tmp / "ds");
    io::save_dataset(dl, tmp / "ds2");
    auto file_equal = [&](const fs::path& a, const fs::path& b) {
        std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        return !sa.empty() && sa == sb;
    };
    expect(file_equal(tmp / "ds" / "W.bin", tmp / "ds2" / "W.bin"), "dataset round trip");
    expect(file_equal(tmp / "ds" / "gt.bin", tmp / "ds2" / "gt.bin"), "dataset round trip (gt)");

    diff::TrainConfig cfg;
    cfg.widths = {12, 6};
    cfg.epochs = 6;
    cfg.batch = 16;
    cfg.metrics_every = 0;
    const auto run_a = diff::train(d, cfg, 31);
    const auto run_b = diff::train(d, cfg, 31);
    expect((diff::flatten(run_a.theta) - diff::flatten(run_b.theta)).cwiseAbs().maxCoeff() == 0.0,
           "same-seed training");

    io::save_checkpoint({run_a.theta, run_a.adam, 6, ""}, tmp / "ck");
    io::save_checkpoint({io::load_checkpoint(tmp / "ck").theta, run_a.adam, 6, ""}, tmp / "ck2");
    for (const char* f : {"D1.bin", "D2.bin", "lambda.bin", "rf_rot_w.bin", "rf_code_w.bin"})
        expect(file_equal(tmp / "ck" / f, tmp / "ck2" / f), "checkpoint round trip");

    auto half_cfg = cfg;
    half_cfg.epochs = 3;
    const auto half = diff::train(d, half_cfg, 31);
    const auto resumed = diff::train_resume(d, cfg, 31, half.theta, half.adam, 3);
    expect((diff::flatten(run_a.theta) - diff::flatten(resumed.theta)).cwiseAbs().maxCoeff() == 0.0,
           "resume equivalence");

    fs::remove_all(tmp);
    report(8, "determinism and persistence", pass, what, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// 4. End-to-end fitting on the pinned rig: P=20, K=2, N=2000, basis 5,
//    keypoint noise 1 px, widths {128,64,32,16,8}. Converges (trailing-10
//    mean < 10% of epoch-1 loss), PA-MPJPE < 5% of mean shape diameter,
//    within 30 minutes. Returns state shared with criterion 6.
struct Criterion4Out {
    data::MultiViewDataset clean;
    data::MultiViewDataset noisy;
    prior::DictionaryStack theta;
    double train_pa = -1.0;
    bool trained = false;
};

Criterion4Out criterion_4() {
    const auto t0 = Clock::now();
    Criterion4Out out;

    data::SynthConfig scfg;
    scfg.P = 20;
    scfg.K = 2;
    scfg.N = 2000;
    scfg.basis_rank = 5;
    scfg.deform_scale = 0.3;
    out.clean = data::synth_generate(scfg, 42);
    data::NoiseSpec noise;
    noise.sigma_keypoints = 1.0;
    noise.seed = 43;
    out.noisy = data::inject_noise(out.clean, noise);

    diff::TrainConfig cfg;  // spec-default weights and optimizer
    cfg.widths = {128, 64, 32, 16, 8};
    cfg.epochs = 150;
    cfg.batch = 32;
    cfg.threads = 2;
    cfg.metrics_every = 0;
    const auto res = diff::train(out.noisy, cfg, 7);

    const double secs = seconds_since(t0);
    if (res.diverged || res.log.empty()) {
        report(4, "end-to-end fitting", false, "training diverged", secs);
        return out;
    }
    out.theta = res.theta;
    out.trained = true;

    const double first = res.log.front().loss.total;
    double trailing = 0.0;
    for (int i = 0; i < 10; ++i) trailing += res.log[res.log.size() - 10 + i].loss.total / 10.0;
    out.train_pa = diff::dataset_pa_mpjpe(out.noisy, res.theta);
    const double diam = mean_diameter(out.clean);

    const bool converged = trailing < 0.1 * first;
    const bool accurate = out.train_pa < 0.05 * diam;
    const bool fast = secs < 1800.0;
    report(4, "end-to-end fitting", converged && accurate && fast,
           fmt("trailing %.4g < 10%% of epoch-1 %.4g; PA-MPJPE %.4g < 5%% of diameter (%.4g); "
               "runtime < 30 min",
               trailing, first, out.train_pa, 0.05 * diam),
           secs);
    return out;
}

// ---------------------------------------------------------------------------
// 6. Generalization: the criterion-4 checkpoint applied to a held-out split
//    of the same generator stays within 2x of the training-split PA-MPJPE.
void criterion_6(const Criterion4Out& c4) {
    const auto t0 = Clock::now();
    if (!c4.trained) {
        report(6, "generalization to held-out split", false, "skipped: criterion 4 training failed",
               0.0);
        return;
    }
    data::SynthConfig scfg;
    scfg.P = 20;
    scfg.K = 2;
    scfg.N = 400;
    scfg.basis_rank = 5;
    scfg.deform_scale = 0.3;
    scfg.instance_offset = 2000;
    auto heldout = data::synth_generate(scfg, 42);
    data::NoiseSpec noise;
    noise.sigma_keypoints = 1.0;
    noise.seed = 44;
    heldout = data::inject_noise(heldout, noise);

    const double pa = diff::dataset_pa_mpjpe(heldout, c4.theta);
    const bool pass = pa <= 2.0 * c4.train_pa;
    report(6, "generalization to held-out split", pass,
           fmt("held-out PA-MPJPE %.4g <= 2x training %.4g", pa, c4.train_pa), seconds_since(t0));
}

// ---------------------------------------------------------------------------
// 5. Noise-robustness ordering: extrinsics noise degrades TRNG strictly
//    while the fitted prior is bitwise constant; keypoint noise degrades
//    both, with the prior ahead at the highest level.
void criterion_5() {
    const auto t0 = Clock::now();
    data::SynthConfig scfg;
    scfg.P = 16;
    scfg.K = 2;
    scfg.N = 500;
    scfg.basis_rank = 4;
    scfg.deform_scale = 0.3;
    const auto base = data::synth_generate(scfg, 71);

    diff::TrainConfig cfg;
    cfg.widths = {64, 32, 16, 8};
    cfg.epochs = 150;
    cfg.batch = 32;
    cfg.threads = 2;
    cfg.metrics_every = 0;

    auto trng_pa = [&](const data::MultiViewDataset& d) {
        const auto tri = triangulation::triangulate_dataset(d);
        return metrics::evaluate(tri.S, d.gt, 0.1).pa_mpjpe;
    };
    auto prior_recon = [&](const data::MultiViewDataset& d, const prior::DictionaryStack& th) {
        std::vector<Eigen::MatrixXd> S(d.N);
        for (int n = 0; n < d.N; ++n) S[n] = prior::forward(d.W[n], th, {.lenient = true}).S;
        return S;
    };

    // One clean-keypoint fit serves every extrinsics level.
    const auto clean_fit = diff::train(base, cfg, 7);
    bool pass = !clean_fit.diverged;
    std::string note = pass ? "" : "clean fit diverged; ";

    std::vector<double> trng_ext;
    std::vector<std::vector<Eigen::MatrixXd>> prior_ext_recons;
    std::vector<double> prior_ext;
    for (double s : {0.1, 0.5, 0.9}) {
        data::NoiseSpec spec;
        spec.sigma_extrinsics = s;
        spec.seed = 99;
        const auto noisy = data::inject_noise(base, spec);
        trng_ext.push_back(trng_pa(noisy));
        prior_ext_recons.push_back(prior_recon(noisy, clean_fit.theta));
        prior_ext.push_back(metrics::evaluate(prior_ext_recons.back(), noisy.gt, 0.1).pa_mpjpe);
    }
    if (!(trng_ext[0] < trng_ext[1] && trng_ext[1] < trng_ext[2])) {
        pass = false;
        note += "TRNG not strictly increasing in extrinsics noise; ";
    }
    for (int lvl = 1; lvl < 3 && pass; ++lvl) {
        if (prior_ext[lvl] != prior_ext[0]) {
            pass = false;
            note += "prior PA not bitwise constant across extrinsics noise; ";
        }
        for (int n = 0; n < base.N; ++n)
            if ((prior_ext_recons[lvl][n] - prior_ext_recons[0][n]).cwiseAbs().maxCoeff() != 0.0) {
                pass = false;
                note += "prior reconstructions differ across extrinsics noise; ";
                break;
            }
    }

    std::vector<double> trng_kp, prior_kp;
    for (double s : {5.0, 10.0, 15.0}) {
        data::NoiseSpec spec;
        spec.sigma_keypoints = s;
        spec.seed = 99;
        const auto noisy = data::inject_noise(base, spec);
        const auto fit = diff::train(noisy, cfg, 7);
        if (fit.diverged) {
            pass = false;
            note += "keypoint-noise fit diverged; ";
            break;
        }
        trng_kp.push_back(trng_pa(noisy));
        prior_kp.push_back(
            metrics::evaluate(prior_recon(noisy, fit.theta), noisy.gt, 0.1).pa_mpjpe);
    }
    if (trng_kp.size() == 3) {
        if (!(trng_kp[0] < trng_kp[1] && trng_kp[1] < trng_kp[2])) {
            pass = false;
            note += "TRNG not increasing in keypoint noise; ";
        }
        if (!(prior_kp[0] < prior_kp[1] && prior_kp[1] < prior_kp[2])) {
            pass = false;
            note += "prior not increasing in keypoint noise; ";
        }
        if (!(prior_kp[2] < trng_kp[2])) {
            pass = false;
            note += "prior not ahead of TRNG at 15 px; ";
        }
    }

    std::string detail = fmt(
        "ext TRNG {%.3g %.3g %.3g} prior const %.3g; kp TRNG {%.3g %.3g %.3g} prior {%.3g %.3g "
        "%.3g}",
        trng_ext[0], trng_ext[1], trng_ext[2], prior_ext[0],
        trng_kp.size() == 3 ? trng_kp[0] : -1.0, trng_kp.size() == 3 ? trng_kp[1] : -1.0,
        trng_kp.size() == 3 ? trng_kp[2] : -1.0, prior_kp.size() == 3 ? prior_kp[0] : -1.0,
        prior_kp.size() == 3 ? prior_kp[1] : -1.0, prior_kp.size() == 3 ? prior_kp[2] : -1.0);
    if (!note.empty()) detail = note + detail;
    report(5, "noise-robustness ordering", pass, detail, seconds_since(t0));
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_7();
    criterion_8();
    const auto c4 = criterion_4();
    criterion_6(c4);
    criterion_5();
    std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "OK" : "FAILURES", g_failures);
    return g_failures == 0 ? 0 : 1;
}
