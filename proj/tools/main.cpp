// Command-line frontend: synthetic rigs, prior fitting, reconstruction, the
// triangulation baseline, noise-robustness comparisons and metric reports.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mvnrsfm/io.hpp"
#include "mvnrsfm/metrics.hpp"
#include "mvnrsfm/train.hpp"
#include "mvnrsfm/triangulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mvnrsfm;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void write_json(const json& j, const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    os << j.dump(2) << "\n";
}

void write_run_config(const json& resolved, const fs::path& out_dir) {
    write_json(resolved, out_dir / "config.json");
}

struct TrainFlags {
    std::vector<int> widths{128, 64, 32, 16, 8};
    int epochs = 200;
    int batch = 32;
    int threads = 1;
    int metrics_every = 1;
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double w_sparse = 1.0, w_dict = 1.0, beta = 0.1;
    bool onp_frozen = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--widths", widths, "Layer widths, strictly decreasing")->delimiter(',');
        cmd->add_option("--epochs", epochs, "Training epochs");
        cmd->add_option("--batch", batch, "Instances per minibatch");
        cmd->add_option("--threads", threads, "Worker threads per batch (fixed-order reduction)");
        cmd->add_option("--metrics-every", metrics_every, "PA-MPJPE logging period, 0 disables");
        cmd->add_option("--lr", lr, "Adam learning rate");
        cmd->add_option("--beta1", beta1, "Adam beta1");
        cmd->add_option("--beta2", beta2, "Adam beta2");
        cmd->add_option("--eps", eps, "Adam epsilon");
        cmd->add_option("--w-sparse", w_sparse, "Sparsity term weight");
        cmd->add_option("--w-dict", w_dict, "Dictionary consistency term weight");
        cmd->add_option("--beta", beta, "Rotation supervision weight");
        cmd->add_flag("--onp-frozen", onp_frozen, "Treat OnP poses as constants per step");
    }

    diff::TrainConfig to_config() const {
        diff::TrainConfig cfg;
        cfg.widths = widths;
        cfg.epochs = epochs;
        cfg.batch = batch;
        cfg.threads = threads;
        cfg.metrics_every = metrics_every;
        cfg.adam = {lr, beta1, beta2, eps};
        cfg.weights = {w_sparse, w_dict, beta, onp_frozen};
        return cfg;
    }

    json to_json() const {
        return {{"widths", widths},   {"epochs", epochs},
                {"batch", batch},     {"threads", threads},
                {"metrics_every", metrics_every},
                {"lr", lr},           {"beta1", beta1},
                {"beta2", beta2},     {"eps", eps},
                {"w_sparse", w_sparse}, {"w_dict", w_dict},
                {"beta", beta},       {"onp_frozen", onp_frozen}};
    }
};

void write_train_log(const std::vector<diff::EpochRecord>& log, const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    for (const auto& r : log) {
        json j{{"epoch", r.epoch},
               {"total", r.loss.total},
               {"reproj", r.loss.reproj},
               {"sparsity", r.loss.sparsity},
               {"dict", r.loss.dict},
               {"rot", r.loss.rot},
               {"wall_ms", r.wall_ms}};
        if (r.pa_mpjpe >= 0.0) j["pa_mpjpe"] = r.pa_mpjpe;
        os << j.dump() << "\n";
    }
}

io::Predictions reconstruct_dataset(const data::MultiViewDataset& d,
                                    const prior::DictionaryStack& theta) {
    if (theta.P != d.P)
        throw ConfigMismatchError("checkpoint was trained for P=" + std::to_string(theta.P) +
                                  " keypoints, dataset has P=" + std::to_string(d.P));
    io::Predictions pr;
    pr.N = d.N;
    pr.K = d.K;
    pr.P = d.P;
    pr.S.resize(d.N);
    pr.R_rf.resize(d.N);
    pr.R_onp.resize(d.N);
    pr.scale.resize(d.N);
    pr.t_xy.resize(d.N);
    for (int n = 0; n < d.N; ++n) {
        const auto rec = prior::forward(d.W[n], theta, {.lenient = true});
        pr.S[n] = rec.S;
        for (const auto& v : rec.views) {
            pr.R_rf[n].push_back(v.R_rf);
            pr.R_onp[n].push_back(v.onp.R);
            pr.scale[n].push_back(v.onp.s);
            pr.t_xy[n].push_back(v.t_xy);
        }
    }
    return pr;
}

void write_metric_report(const metrics::MetricReport& rep, const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    for (const auto& im : rep.per_instance) {
        json j{{"instance", im.index},
               {"pa_mpjpe", im.pa_mpjpe},
               {"pck", im.pck},
               {"reflected", im.reflected},
               {"skipped", im.skipped}};
        os << j.dump() << "\n";
    }
    json summary{{"summary", true},
                 {"pa_mpjpe", rep.pa_mpjpe},
                 {"pck", rep.pck},
                 {"pck_threshold", rep.pck_threshold},
                 {"evaluated", rep.evaluated},
                 {"skipped", rep.skipped}};
    os << summary.dump() << "\n";
}

void print_metric_summary(const char* tag, const metrics::MetricReport& rep) {
    std::printf("%s: PA-MPJPE %.6g  PCK@%.3g %.2f%%  (%d instances, %d skipped)\n", tag,
                rep.pa_mpjpe, rep.pck_threshold, 100.0 * rep.pck, rep.evaluated, rep.skipped);
}

int cmd_synth(const std::string& out, const data::SynthConfig& scfg, const data::NoiseSpec& noise,
              std::uint64_t seed) {
    auto d = data::synth_generate(scfg, seed);
    const bool noisy = noise.sigma_extrinsics > 0 || noise.sigma_intrinsics > 0 ||
                       noise.sigma_keypoints > 0;
    if (noisy) d = data::inject_noise(d, noise);
    io::save_dataset(d, out);

    json cfg{{"command", "synth"},
             {"out", out},
             {"seed", seed},
             {"P", scfg.P},
             {"K", scfg.K},
             {"N", scfg.N},
             {"basis_rank", scfg.basis_rank},
             {"deform_scale", scfg.deform_scale},
             {"instance_offset", scfg.instance_offset},
             {"random_orientation", scfg.random_orientation},
             {"focal", scfg.focal},
             {"principal", scfg.principal},
             {"depth_factor", scfg.depth_factor},
             {"min_separation_deg", scfg.min_separation_deg},
             {"sigma_extrinsics", noise.sigma_extrinsics},
             {"sigma_intrinsics", noise.sigma_intrinsics},
             {"sigma_keypoints", noise.sigma_keypoints},
             {"noise_seed", noise.seed}};
    write_run_config(cfg, out);

    std::printf("synth: N=%d K=%d P=%d basis=%d noise(ext=%g int=%g kp=%g) -> %s\n", d.N, d.K,
                d.P, scfg.basis_rank, noise.sigma_extrinsics, noise.sigma_intrinsics,
                noise.sigma_keypoints, out.c_str());
    return 0;
}

int cmd_train(const std::string& dataset_path, const std::string& out, const TrainFlags& flags,
              std::uint64_t seed, const std::string& resume) {
    const auto d = io::load_dataset(dataset_path);
    const auto cfg = flags.to_config();

    json rc = flags.to_json();
    rc["command"] = "train";
    rc["dataset"] = dataset_path;
    rc["out"] = out;
    rc["seed"] = seed;
    rc["resume"] = resume;

    diff::TrainResult res;
    if (resume.empty()) {
        res = diff::train(d, cfg, seed);
    } else {
        const auto ckpt = io::load_checkpoint(resume);
        if (ckpt.theta.widths != cfg.widths)
            throw ConfigMismatchError("checkpoint widths do not match --widths");
        if (!ckpt.adam)
            throw ConfigMismatchError("checkpoint has no optimizer state; cannot resume");
        res = diff::train_resume(d, cfg, seed, ckpt.theta, *ckpt.adam, ckpt.epochs_done);
    }

    io::CheckpointBundle ckpt;
    ckpt.theta = res.theta;
    ckpt.adam = res.adam;
    ckpt.epochs_done = res.epochs_done;
    ckpt.config_json = rc.dump();
    io::save_checkpoint(ckpt, out);
    write_train_log(res.log, fs::path(out) / "train_log.jsonl");
    write_run_config(rc, out);

    for (const auto& r : res.log)
        if (r.epoch == 1 || r.epoch % 10 == 0 || r.epoch == cfg.epochs)
            std::printf("epoch %4d  loss %.6g  reproj %.6g  pa %.6g\n", r.epoch, r.loss.total,
                        r.loss.reproj, r.pa_mpjpe);

    if (res.diverged) {
        std::fprintf(stderr,
                     "train: diverged after %d epochs; last good checkpoint kept at %s\n",
                     res.epochs_done, out.c_str());
        return kExitNumeric;
    }
    std::printf("train: %d epochs -> %s\n", res.epochs_done, out.c_str());
    return 0;
}

int cmd_reconstruct(const std::string& dataset_path, const std::string& ckpt_path,
                    const std::string& out, double pck_threshold) {
    const auto d = io::load_dataset(dataset_path);
    const auto ckpt = io::load_checkpoint(ckpt_path);
    const auto pr = reconstruct_dataset(d, ckpt.theta);
    io::save_predictions(pr, out);

    write_run_config(json{{"command", "reconstruct"},
                          {"dataset", dataset_path},
                          {"checkpoint", ckpt_path},
                          {"out", out},
                          {"pck_threshold", pck_threshold}},
                     out);

    if (d.has_gt()) {
        const auto rep = metrics::evaluate(pr.S, d.gt, pck_threshold);
        write_metric_report(rep, fs::path(out) / "metrics.jsonl");
        print_metric_summary("reconstruct", rep);
    } else {
        std::printf("reconstruct: %d instances -> %s (no ground truth for metrics)\n", d.N,
                    out.c_str());
    }
    return 0;
}

int cmd_triangulate(const std::string& dataset_path, const std::string& out, int iters,
                    double reproj_threshold, double pck_threshold) {
    const auto d = io::load_dataset(dataset_path);
    const triangulation::RobustOptions opts{iters, reproj_threshold};
    const auto tri = triangulation::triangulate_dataset(d, opts);

    io::Predictions pr;
    pr.N = d.N;
    pr.K = d.K;
    pr.P = d.P;
    pr.S = tri.S;
    pr.R_rf.assign(d.N, std::vector<Eigen::Matrix3d>(d.K, Eigen::Matrix3d::Identity()));
    pr.R_onp = pr.R_rf;
    pr.scale.assign(d.N, std::vector<double>(d.K, 1.0));
    pr.t_xy.assign(d.N, std::vector<Eigen::Vector2d>(d.K, Eigen::Vector2d::Zero()));
    io::save_predictions(pr, out);

    write_run_config(json{{"command", "triangulate"},
                          {"dataset", dataset_path},
                          {"out", out},
                          {"iters", iters},
                          {"reproj_threshold", reproj_threshold},
                          {"pck_threshold", pck_threshold}},
                     out);

    std::printf("triangulate: %d instances, %d failed points\n", d.N, tri.failures);
    if (d.has_gt()) {
        const auto rep = metrics::evaluate(tri.S, d.gt, pck_threshold);
        write_metric_report(rep, fs::path(out) / "metrics.jsonl");
        print_metric_summary("triangulate", rep);
    }
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& dataset_path, double pck_threshold,
             const std::string& out) {
    const auto d = io::load_dataset(dataset_path);
    if (!d.has_gt()) throw InvalidInputError("eval: dataset carries no ground truth");
    const auto pr = io::load_predictions(pred_path);
    if (pr.N != d.N || pr.P != d.P)
        throw ConfigMismatchError("eval: predictions do not match the dataset dimensions");
    const auto rep = metrics::evaluate(pr.S, d.gt, pck_threshold);
    if (!out.empty()) {
        write_metric_report(rep, fs::path(out) / "metrics.jsonl");
        write_run_config(json{{"command", "eval"},
                              {"pred", pred_path},
                              {"dataset", dataset_path},
                              {"pck_threshold", pck_threshold},
                              {"out", out}},
                         out);
    }
    print_metric_summary("eval", rep);
    return 0;
}

int cmd_compare(const std::string& dataset_path, const std::string& out, const TrainFlags& flags,
                std::uint64_t seed, std::uint64_t noise_seed,
                const std::vector<double>& sigma_ext, const std::vector<double>& sigma_int,
                const std::vector<double>& sigma_kp, double pck_threshold,
                const std::string& checkpoint) {
    const auto base = io::load_dataset(dataset_path);
    if (!base.has_gt() || !base.has_cameras())
        throw InvalidInputError("compare: dataset must carry ground truth and calibration");
    const auto cfg = flags.to_config();

    json rc = flags.to_json();
    rc["command"] = "compare";
    rc["dataset"] = dataset_path;
    rc["out"] = out;
    rc["seed"] = seed;
    rc["noise_seed"] = noise_seed;
    rc["sigma_ext"] = sigma_ext;
    rc["sigma_int"] = sigma_int;
    rc["sigma_kp"] = sigma_kp;
    rc["checkpoint"] = checkpoint;
    write_run_config(rc, out);

    // The prior never reads calibration, so one fit covers every extrinsics
    // and intrinsics noise level; keypoint noise needs a fit per level.
    prior::DictionaryStack clean_theta;
    if (checkpoint.empty()) {
        std::printf("compare: fitting prior on clean keypoints (%d epochs)\n", cfg.epochs);
        const auto res = diff::train(base, cfg, seed);
        if (res.diverged) throw NumericalFailureError("compare: prior fit diverged");
        clean_theta = res.theta;
    } else {
        clean_theta = io::load_checkpoint(checkpoint).theta;
    }

    json table;
    table["pck_threshold"] = pck_threshold;

    auto trng_pa = [&](const data::MultiViewDataset& d) {
        const auto tri = triangulation::triangulate_dataset(d);
        return metrics::evaluate(tri.S, d.gt, pck_threshold).pa_mpjpe;
    };
    auto prior_pa = [&](const data::MultiViewDataset& d, const prior::DictionaryStack& theta) {
        const auto pr = reconstruct_dataset(d, theta);
        return metrics::evaluate(pr.S, d.gt, pck_threshold).pa_mpjpe;
    };

    auto sweep_camera_channel = [&](const char* name, const std::vector<double>& sigmas,
                                    bool extrinsics) {
        json rows = json::array();
        for (double s : sigmas) {
            data::NoiseSpec spec;
            spec.seed = noise_seed;
            (extrinsics ? spec.sigma_extrinsics : spec.sigma_intrinsics) = s;
            const auto noisy = data::inject_noise(base, spec);
            rows.push_back({{"sigma", s},
                            {"trng", trng_pa(noisy)},
                            {"prior", prior_pa(noisy, clean_theta)}});
        }
        table[name] = rows;
    };
    if (!sigma_ext.empty()) sweep_camera_channel("extrinsics", sigma_ext, true);
    if (!sigma_int.empty()) sweep_camera_channel("intrinsics", sigma_int, false);

    if (!sigma_kp.empty()) {
        json rows = json::array();
        for (double s : sigma_kp) {
            data::NoiseSpec spec;
            spec.seed = noise_seed;
            spec.sigma_keypoints = s;
            const auto noisy = data::inject_noise(base, spec);
            std::printf("compare: fitting prior at keypoint sigma %g\n", s);
            const auto res = diff::train(noisy, cfg, seed);
            if (res.diverged) throw NumericalFailureError("compare: prior fit diverged");
            rows.push_back({{"sigma", s},
                            {"trng", trng_pa(noisy)},
                            {"prior", prior_pa(noisy, res.theta)}});
        }
        table["keypoints"] = rows;
    }

    write_json(table, fs::path(out) / "compare.json");

    // Two-row table per channel, TRNG vs MV-NRSfM.
    for (const char* channel : {"extrinsics", "intrinsics", "keypoints"}) {
        if (!table.contains(channel)) continue;
        std::printf("\n%s noise\n%-10s", channel, "sigma");
        for (const auto& r : table[channel]) std::printf("%12.4g", r["sigma"].get<double>());
        std::printf("\n%-10s", "TRNG");
        for (const auto& r : table[channel]) std::printf("%12.6g", r["trng"].get<double>());
        std::printf("\n%-10s", "MV-NRSfM");
        for (const auto& r : table[channel]) std::printf("%12.6g", r["prior"].get<double>());
        std::printf("\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-view non-rigid reconstruction with a hierarchical sparse shape prior"};
    app.require_subcommand(1);
    app.set_config("--config");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-view dataset");
    data::SynthConfig scfg;
    data::NoiseSpec noise;
    std::string synth_out;
    std::uint64_t synth_seed = 0;
    bool fixed_orientation = false;
    synth->add_option("--out", synth_out, "Output dataset directory")->required();
    synth->add_option("--p", scfg.P, "Keypoints per instance");
    synth->add_option("--k", scfg.K, "Views");
    synth->add_option("--n", scfg.N, "Instances");
    synth->add_option("--basis-rank", scfg.basis_rank, "Deformation basis rank");
    synth->add_option("--deform-scale", scfg.deform_scale, "Deformation coefficient std");
    synth->add_option("--instance-offset", scfg.instance_offset,
                      "First instance index (held-out splits)");
    synth->add_flag("--fixed-orientation", fixed_orientation,
                    "Disable per-instance random object orientation");
    synth->add_option("--focal", scfg.focal, "Focal length in pixels");
    synth->add_option("--principal", scfg.principal, "Principal point (both axes)");
    synth->add_option("--depth-factor", scfg.depth_factor, "Camera distance / object radius");
    synth->add_option("--min-separation", scfg.min_separation_deg,
                      "Minimum pairwise camera separation (degrees)");
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--sigma-ext", noise.sigma_extrinsics, "Extrinsics noise std");
    synth->add_option("--sigma-int", noise.sigma_intrinsics, "Intrinsics noise std");
    synth->add_option("--sigma-kp", noise.sigma_keypoints, "Keypoint noise std (px)");
    synth->add_option("--noise-seed", noise.seed, "Noise stream seed");

    auto* train = app.add_subcommand("train", "Fit the shape prior to a dataset");
    TrainFlags tf;
    std::string train_dataset, train_out, train_resume;
    std::uint64_t train_seed = 0;
    train->add_option("--dataset", train_dataset, "Dataset directory")->required();
    train->add_option("--out", train_out, "Checkpoint output directory")->required();
    train->add_option("--seed", train_seed, "Init/shuffle seed");
    train->add_option("--resume", train_resume, "Checkpoint to resume from");
    tf.add_to(train);

    auto* rec = app.add_subcommand("reconstruct", "Run the fitted prior over a dataset");
    std::string rec_dataset, rec_ckpt, rec_out;
    double rec_pck = 0.1;
    rec->add_option("--dataset", rec_dataset, "Dataset directory")->required();
    rec->add_option("--checkpoint", rec_ckpt, "Checkpoint directory")->required();
    rec->add_option("--out", rec_out, "Predictions output directory")->required();
    rec->add_option("--pck-threshold", rec_pck, "PCK threshold (length units)");

    auto* tri = app.add_subcommand("triangulate", "Robust multi-view triangulation baseline");
    std::string tri_dataset, tri_out;
    int tri_iters = 3;
    double tri_thr = 5.0, tri_pck = 0.1;
    tri->add_option("--dataset", tri_dataset, "Dataset directory (needs calibration)")->required();
    tri->add_option("--out", tri_out, "Predictions output directory")->required();
    tri->add_option("--iters", tri_iters, "Rejection iterations");
    tri->add_option("--reproj-threshold", tri_thr, "Outlier threshold (px)");
    tri->add_option("--pck-threshold", tri_pck, "PCK threshold (length units)");

    auto* ev = app.add_subcommand("eval", "Evaluate stored predictions against ground truth");
    std::string ev_pred, ev_dataset, ev_out;
    double ev_pck = 0.1;
    ev->add_option("--pred", ev_pred, "Predictions directory")->required();
    ev->add_option("--dataset", ev_dataset, "Dataset directory with ground truth")->required();
    ev->add_option("--pck-threshold", ev_pck, "PCK threshold (length units)");
    ev->add_option("--out", ev_out, "Optional report output directory");

    auto* cmp = app.add_subcommand("compare", "TRNG vs prior under per-channel noise sweeps");
    TrainFlags cf;
    std::string cmp_dataset, cmp_out, cmp_ckpt;
    std::uint64_t cmp_seed = 0, cmp_noise_seed = 1;
    std::vector<double> cmp_ext, cmp_int, cmp_kp;
    double cmp_pck = 0.1;
    cmp->add_option("--dataset", cmp_dataset, "Clean dataset directory")->required();
    cmp->add_option("--out", cmp_out, "Output directory")->required();
    cmp->add_option("--sigma-ext", cmp_ext, "Extrinsics noise sweep")->delimiter(',');
    cmp->add_option("--sigma-int", cmp_int, "Intrinsics noise sweep")->delimiter(',');
    cmp->add_option("--sigma-kp", cmp_kp, "Keypoint noise sweep (px)")->delimiter(',');
    cmp->add_option("--seed", cmp_seed, "Training seed");
    cmp->add_option("--noise-seed", cmp_noise_seed, "Noise stream seed");
    cmp->add_option("--pck-threshold", cmp_pck, "PCK threshold (length units)");
    cmp->add_option("--checkpoint", cmp_ckpt, "Reuse a fitted checkpoint for camera channels");
    cf.add_to(cmp);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // help/version
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed()) {
            scfg.random_orientation = !fixed_orientation;
            return cmd_synth(synth_out, scfg, noise, synth_seed);
        }
        if (train->parsed()) return cmd_train(train_dataset, train_out, tf, train_seed, train_resume);
        if (rec->parsed()) return cmd_reconstruct(rec_dataset, rec_ckpt, rec_out, rec_pck);
        if (tri->parsed()) return cmd_triangulate(tri_dataset, tri_out, tri_iters, tri_thr, tri_pck);
        if (ev->parsed()) return cmd_eval(ev_pred, ev_dataset, ev_pck, ev_out);
        if (cmp->parsed())
            return cmd_compare(cmp_dataset, cmp_out, cf, cmp_seed, cmp_noise_seed, cmp_ext,
                               cmp_int, cmp_kp, cmp_pck, cmp_ckpt);
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    }
    return 0;
}
