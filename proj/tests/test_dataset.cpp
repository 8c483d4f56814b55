#include <doctest.h>

#include <cmath>

#include "mvnrsfm/dataset.hpp"
#include "mvnrsfm/geometry.hpp"
#include "oracles.hpp"

using namespace mvnrsfm;
using namespace mvnrsfm::data;

namespace {

bool datasets_equal(const MultiViewDataset& a, const MultiViewDataset& b) {
    if (a.N != b.N || a.K != b.K || a.P != b.P) return false;
    for (int n = 0; n < a.N; ++n)
        for (int k = 0; k < a.K; ++k)
            if ((a.W[n][k] - b.W[n][k]).cwiseAbs().maxCoeff() != 0.0) return false;
    for (int n = 0; n < a.N; ++n)
        if ((a.gt[n] - b.gt[n]).cwiseAbs().maxCoeff() != 0.0) return false;
    for (int k = 0; k < a.K; ++k) {
        if ((a.cameras[k].K - b.cameras[k].K).cwiseAbs().maxCoeff() != 0.0) return false;
        if ((a.cameras[k].R - b.cameras[k].R).cwiseAbs().maxCoeff() != 0.0) return false;
        if ((a.cameras[k].t - b.cameras[k].t).cwiseAbs().maxCoeff() != 0.0) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("synth_generate: deterministic, self-consistent, well-separated rig") {
    SynthConfig cfg;
    cfg.P = 12;
    cfg.K = 4;
    cfg.N = 20;
    const MultiViewDataset d = synth_generate(cfg, 7);
    const MultiViewDataset d2 = synth_generate(cfg, 7);
    CHECK(datasets_equal(d, d2));

    // Reprojection self-consistency against an independently coded pinhole.
    double worst = 0.0;
    for (int n = 0; n < d.N; ++n)
        for (int k = 0; k < d.K; ++k)
            for (int p = 0; p < d.P; ++p) {
                const Eigen::Vector2d ref = oracles::pinhole_loop(
                    d.cameras[k].K, d.cameras[k].R, d.cameras[k].t, d.gt[n].row(p).transpose());
                worst = std::max(worst, (ref - d.W[n][k].row(p).transpose()).norm());
            }
    CHECK(worst < 1e-9);

    // Camera directions are pairwise separated by at least 20 degrees.
    for (int i = 0; i < d.K; ++i)
        for (int j = i + 1; j < d.K; ++j) {
            const Eigen::Vector3d ci = d.cameras[i].center().normalized();
            const Eigen::Vector3d cj = d.cameras[j].center().normalized();
            CHECK(ci.dot(cj) < std::cos(20.0 * M_PI / 180.0) + 1e-9);
        }

    // Depth variation stays a small fraction of mean depth.
    for (int k = 0; k < d.K; ++k) {
        double zmin = 1e300, zmax = -1e300, zsum = 0.0;
        int cnt = 0;
        for (int n = 0; n < d.N; ++n)
            for (int p = 0; p < d.P; ++p) {
                const double z =
                    (d.cameras[k].R * d.gt[n].row(p).transpose() + d.cameras[k].t)(2);
                zmin = std::min(zmin, z);
                zmax = std::max(zmax, z);
                zsum += z;
                ++cnt;
            }
        CHECK((zmax - zmin) <= 0.1 * (zsum / cnt));
    }
}

TEST_CASE("synth_generate: impossible camera separation fails instead of hanging") {
    SynthConfig cfg;
    cfg.P = 4;
    cfg.K = 3;
    cfg.N = 1;
    cfg.min_separation_deg = 170.0;  // at most 2 directions fit
    CHECK_THROWS_AS(synth_generate(cfg, 1), InvalidInputError);
}

TEST_CASE("synth_generate: zero deformation gives a rigid dataset") {
    SynthConfig cfg;
    cfg.P = 8;
    cfg.K = 2;
    cfg.N = 6;
    cfg.deform_scale = 0.0;
    cfg.random_orientation = false;
    const MultiViewDataset d = synth_generate(cfg, 3);
    for (int n = 1; n < d.N; ++n) CHECK((d.gt[n] - d.gt[0]).norm() == 0.0);
}

TEST_CASE("synth_generate: instance offset extends the same rig and family") {
    SynthConfig cfg;
    cfg.P = 8;
    cfg.K = 2;
    cfg.N = 10;
    const MultiViewDataset train = synth_generate(cfg, 5);
    SynthConfig heldout = cfg;
    heldout.instance_offset = cfg.N;
    heldout.N = 5;
    const MultiViewDataset test = synth_generate(heldout, 5);

    for (int k = 0; k < cfg.K; ++k) {
        CHECK((train.cameras[k].R - test.cameras[k].R).norm() == 0.0);
        CHECK((train.cameras[k].t - test.cameras[k].t).norm() == 0.0);
    }
    CHECK((train.gt[0] - test.gt[0]).norm() > 1e-6);  // different instances
}

TEST_CASE("inject_noise: zero sigmas are bit-identical, channels are isolated") {
    SynthConfig cfg;
    cfg.P = 10;
    cfg.K = 3;
    cfg.N = 8;
    const MultiViewDataset d = synth_generate(cfg, 11);

    NoiseSpec zero;
    CHECK(datasets_equal(inject_noise(d, zero), d));

    NoiseSpec kp;
    kp.sigma_keypoints = 2.0;
    kp.seed = 1;
    const MultiViewDataset dn = inject_noise(d, kp);
    CHECK((dn.W[0][0] - d.W[0][0]).norm() > 0.0);
    for (int n = 0; n < d.N; ++n) CHECK((dn.gt[n] - d.gt[n]).norm() == 0.0);
    for (int k = 0; k < d.K; ++k) {
        CHECK((dn.cameras[k].K - d.cameras[k].K).norm() == 0.0);
        CHECK((dn.cameras[k].R - d.cameras[k].R).norm() == 0.0);
    }

    NoiseSpec ext;
    ext.sigma_extrinsics = 0.5;
    ext.seed = 1;
    const MultiViewDataset de = inject_noise(d, ext);
    CHECK((de.W[0][0] - d.W[0][0]).norm() == 0.0);
    for (int k = 0; k < d.K; ++k) {
        CHECK(geometry::is_rotation(de.cameras[k].R));
        CHECK((de.cameras[k].R - d.cameras[k].R).norm() > 0.0);
        CHECK((de.cameras[k].K - d.cameras[k].K).norm() == 0.0);
    }
}

TEST_CASE("inject_noise: keypoint sigma matches sample statistics") {
    SynthConfig cfg;
    cfg.P = 30;
    cfg.K = 2;
    cfg.N = 400;
    const MultiViewDataset d = synth_generate(cfg, 13);
    NoiseSpec spec;
    spec.sigma_keypoints = 15.0;
    spec.seed = 21;
    const MultiViewDataset dn = inject_noise(d, spec);

    double sq = 0.0;
    long cnt = 0;
    for (int n = 0; n < d.N; ++n)
        for (int k = 0; k < d.K; ++k) {
            sq += (dn.W[n][k] - d.W[n][k]).squaredNorm();
            cnt += d.P * 2;
        }
    const double std_hat = std::sqrt(sq / cnt);
    CHECK(std::abs(std_hat - 15.0) / 15.0 < 0.02);
}

TEST_CASE("inject_noise: determinism and validation") {
    SynthConfig cfg;
    cfg.P = 6;
    cfg.K = 2;
    cfg.N = 4;
    const MultiViewDataset d = synth_generate(cfg, 17);
    NoiseSpec spec;
    spec.sigma_extrinsics = 0.3;
    spec.sigma_intrinsics = 0.1;
    spec.sigma_keypoints = 5.0;
    spec.seed = 9;
    CHECK(datasets_equal(inject_noise(d, spec), inject_noise(d, spec)));

    NoiseSpec bad;
    bad.sigma_keypoints = -1.0;
    CHECK_THROWS_AS(inject_noise(d, bad), InvalidInputError);
}
