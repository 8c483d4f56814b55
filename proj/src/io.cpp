#include "mvnrsfm/io.hpp"

#include <json.hpp>

#include <bit>
#include <fstream>

namespace mvnrsfm::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "containers are declared f64-little-endian");

namespace {

constexpr const char* kDatasetMagic = "mvnrsfm-dataset";
constexpr const char* kCheckpointMagic = "mvnrsfm-checkpoint";
constexpr const char* kPredictionsMagic = "mvnrsfm-predictions";

class BlobWriter {
public:
    BlobWriter(const fs::path& dir, const char* magic) : dir_(dir) {
        fs::create_directories(dir);
        manifest_["magic"] = magic;
        manifest_["version"] = kFormatVersion;
        manifest_["dtype"] = "f64-little-endian";
        manifest_["arrays"] = json::array();
    }

    json& meta() { return manifest_; }

    void array(const std::string& name, const double* data, std::size_t count) {
        const fs::path file = dir_ / (name + ".bin");
        std::ofstream os(file, std::ios::binary | std::ios::trunc);
        if (!os) throw FormatError("cannot write " + file.string());
        os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
        if (!os) throw FormatError("short write to " + file.string());
        manifest_["arrays"].push_back({{"name", name}, {"bytes", count * 8}});
    }

    void finish() {
        std::ofstream os(dir_ / "manifest.json", std::ios::trunc);
        if (!os) throw FormatError("cannot write manifest in " + dir_.string());
        os << manifest_.dump(2) << "\n";
    }

private:
    fs::path dir_;
    json manifest_;
};

class BlobReader {
public:
    BlobReader(const fs::path& dir, const char* magic) : dir_(dir) {
        const fs::path mf = dir / "manifest.json";
        std::ifstream is(mf);
        if (!is) throw FormatError("missing manifest: " + mf.string());
        try {
            is >> manifest_;
        } catch (const json::exception& e) {
            throw FormatError("malformed manifest " + mf.string() + ": " + e.what());
        }
        if (manifest_.value("magic", "") != magic)
            throw FormatError("wrong container type in " + mf.string() + " (expected " + magic + ")");
        if (manifest_.value("version", -1) != kFormatVersion)
            throw UnsupportedVersionError("unsupported container version in " + mf.string());
        if (manifest_.value("dtype", "") != "f64-little-endian")
            throw FormatError("unsupported dtype in " + mf.string());
        for (const auto& a : manifest_.at("arrays"))
            declared_[a.at("name").get<std::string>()] = a.at("bytes").get<std::size_t>();
    }

    const json& meta() const { return manifest_; }

    void array(const std::string& name, double* out, std::size_t count) const {
        const auto it = declared_.find(name);
        if (it == declared_.end()) throw FormatError("manifest does not declare array '" + name + "'");
        if (it->second != count * 8)
            throw FormatError("array '" + name + "': manifest declares " +
                              std::to_string(it->second) + " bytes, layout requires " +
                              std::to_string(count * 8));
        const fs::path file = dir_ / (name + ".bin");
        std::ifstream is(file, std::ios::binary);
        if (!is) throw FormatError("missing blob: " + file.string());
        is.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(count * 8));
        if (is.gcount() != static_cast<std::streamsize>(count * 8))
            throw FormatError("truncated blob: " + file.string());
    }

private:
    fs::path dir_;
    json manifest_;
    std::map<std::string, std::size_t> declared_;
};

template <typename J, typename K, typename T>
T require(const J& j, const K& key, const char* ctx) {
    if (!j.contains(key)) throw FormatError(std::string(ctx) + ": missing field");
    return j.at(key).template get<T>();
}

}  // namespace

void save_dataset(const data::MultiViewDataset& d, const fs::path& dir) {
    d.validate();
    BlobWriter w(dir, kDatasetMagic);
    w.meta()["N"] = d.N;
    w.meta()["K"] = d.K;
    w.meta()["P"] = d.P;
    w.meta()["has_gt"] = d.has_gt();
    w.meta()["has_cameras"] = d.has_cameras();

    std::vector<double> buf;
    buf.reserve(static_cast<std::size_t>(d.N) * d.K * d.P * 2);
    for (const auto& views : d.W)
        for (const auto& wkp : views) buf.insert(buf.end(), wkp.data(), wkp.data() + wkp.size());
    w.array("W", buf.data(), buf.size());

    if (d.has_gt()) {
        buf.clear();
        for (const auto& s : d.gt) buf.insert(buf.end(), s.data(), s.data() + s.size());
        w.array("gt", buf.data(), buf.size());
    }
    if (d.has_cameras()) {
        std::vector<double> kbuf, rbuf, tbuf;
        for (const auto& c : d.cameras) {
            kbuf.insert(kbuf.end(), c.K.data(), c.K.data() + 9);
            rbuf.insert(rbuf.end(), c.R.data(), c.R.data() + 9);
            tbuf.insert(tbuf.end(), c.t.data(), c.t.data() + 3);
        }
        w.array("cam_intrinsics", kbuf.data(), kbuf.size());
        w.array("cam_rotations", rbuf.data(), rbuf.size());
        w.array("cam_translations", tbuf.data(), tbuf.size());
    }
    w.finish();
}

data::MultiViewDataset load_dataset(const fs::path& dir) {
    BlobReader r(dir, kDatasetMagic);
    data::MultiViewDataset d;
    d.N = require<json, const char*, int>(r.meta(), "N", "dataset manifest");
    d.K = require<json, const char*, int>(r.meta(), "K", "dataset manifest");
    d.P = require<json, const char*, int>(r.meta(), "P", "dataset manifest");
    if (d.N < 0 || d.K < 1 || d.P < 1) throw FormatError("dataset manifest: bad dimensions");

    std::vector<double> buf(static_cast<std::size_t>(d.N) * d.K * d.P * 2);
    r.array("W", buf.data(), buf.size());
    d.W.resize(d.N);
    const double* p = buf.data();
    for (int n = 0; n < d.N; ++n) {
        d.W[n].resize(d.K);
        for (int k = 0; k < d.K; ++k) {
            d.W[n][k] = Eigen::Map<const Eigen::MatrixXd>(p, d.P, 2);
            p += d.P * 2;
        }
    }
    if (r.meta().value("has_gt", false)) {
        buf.resize(static_cast<std::size_t>(d.N) * d.P * 3);
        r.array("gt", buf.data(), buf.size());
        d.gt.resize(d.N);
        p = buf.data();
        for (int n = 0; n < d.N; ++n) {
            d.gt[n] = Eigen::Map<const Eigen::MatrixXd>(p, d.P, 3);
            p += d.P * 3;
        }
    }
    if (r.meta().value("has_cameras", false)) {
        std::vector<double> kbuf(9 * d.K), rbuf(9 * d.K), tbuf(3 * d.K);
        r.array("cam_intrinsics", kbuf.data(), kbuf.size());
        r.array("cam_rotations", rbuf.data(), rbuf.size());
        r.array("cam_translations", tbuf.data(), tbuf.size());
        d.cameras.resize(d.K);
        for (int k = 0; k < d.K; ++k) {
            d.cameras[k].K = Eigen::Map<const Eigen::Matrix3d>(kbuf.data() + 9 * k);
            d.cameras[k].R = Eigen::Map<const Eigen::Matrix3d>(rbuf.data() + 9 * k);
            d.cameras[k].t = Eigen::Map<const Eigen::Vector3d>(tbuf.data() + 3 * k);
        }
    }
    d.validate();
    return d;
}

void save_checkpoint(const CheckpointBundle& ckpt, const fs::path& dir) {
    ckpt.theta.validate();
    BlobWriter w(dir, kCheckpointMagic);
    w.meta()["P"] = ckpt.theta.P;
    w.meta()["widths"] = ckpt.theta.widths;
    w.meta()["epochs_done"] = ckpt.epochs_done;
    w.meta()["has_adam"] = ckpt.adam.has_value();
    if (!ckpt.config_json.empty()) w.meta()["train_config"] = json::parse(ckpt.config_json);

    const int L = ckpt.theta.layers();
    for (int l = 0; l < L; ++l)
        w.array("D" + std::to_string(l + 1), ckpt.theta.D[l].data(), ckpt.theta.D[l].size());
    w.array("lambda", ckpt.theta.lambda.data(), ckpt.theta.lambda.size());
    w.array("rf_rot_w", ckpt.theta.rf_rot_w.data(), ckpt.theta.rf_rot_w.size());
    w.array("rf_rot_b", ckpt.theta.rf_rot_b.data(), ckpt.theta.rf_rot_b.size());
    w.array("rf_code_w", ckpt.theta.rf_code_w.data(), ckpt.theta.rf_code_w.size());
    w.array("rf_code_b", ckpt.theta.rf_code_b.data(), ckpt.theta.rf_code_b.size());
    if (ckpt.adam) {
        w.array("adam_m", ckpt.adam->m.data(), ckpt.adam->m.size());
        w.array("adam_v", ckpt.adam->v.data(), ckpt.adam->v.size());
        w.meta()["adam_step"] = ckpt.adam->step;
        w.meta()["adam_lr"] = ckpt.adam->cfg.lr;
        w.meta()["adam_beta1"] = ckpt.adam->cfg.beta1;
        w.meta()["adam_beta2"] = ckpt.adam->cfg.beta2;
        w.meta()["adam_eps"] = ckpt.adam->cfg.eps;
    }
    w.finish();
}

CheckpointBundle load_checkpoint(const fs::path& dir) {
    BlobReader r(dir, kCheckpointMagic);
    CheckpointBundle ckpt;
    auto& t = ckpt.theta;
    t.P = require<json, const char*, int>(r.meta(), "P", "checkpoint manifest");
    t.widths = require<json, const char*, std::vector<int>>(r.meta(), "widths", "checkpoint manifest");
    if (t.P < 1 || t.widths.empty()) throw FormatError("checkpoint manifest: bad dimensions");
    const int L = static_cast<int>(t.widths.size());

    t.D.resize(L);
    t.D[0].resize(3 * t.P, t.widths[0]);
    r.array("D1", t.D[0].data(), t.D[0].size());
    for (int l = 1; l < L; ++l) {
        t.D[l].resize(t.widths[l - 1], t.widths[l]);
        r.array("D" + std::to_string(l + 1), t.D[l].data(), t.D[l].size());
    }
    t.lambda.resize(L);
    r.array("lambda", t.lambda.data(), t.lambda.size());
    const int BL = t.widths.back();
    t.rf_rot_w.resize(9, 6 * BL);
    t.rf_rot_b.resize(9);
    t.rf_code_w.resize(BL, 6 * BL);
    t.rf_code_b.resize(BL);
    r.array("rf_rot_w", t.rf_rot_w.data(), t.rf_rot_w.size());
    r.array("rf_rot_b", t.rf_rot_b.data(), t.rf_rot_b.size());
    r.array("rf_code_w", t.rf_code_w.data(), t.rf_code_w.size());
    r.array("rf_code_b", t.rf_code_b.data(), t.rf_code_b.size());
    t.validate();

    ckpt.epochs_done = r.meta().value("epochs_done", 0);
    if (r.meta().contains("train_config")) ckpt.config_json = r.meta()["train_config"].dump();
    if (r.meta().value("has_adam", false)) {
        diff::AdamConfig cfg;
        cfg.lr = r.meta().value("adam_lr", cfg.lr);
        cfg.beta1 = r.meta().value("adam_beta1", cfg.beta1);
        cfg.beta2 = r.meta().value("adam_beta2", cfg.beta2);
        cfg.eps = r.meta().value("adam_eps", cfg.eps);
        const Eigen::Index total = diff::ParamLayout::of(t).total;
        diff::AdamState st = diff::AdamState::init(total, cfg);
        r.array("adam_m", st.m.data(), st.m.size());
        r.array("adam_v", st.v.data(), st.v.size());
        st.step = r.meta().value("adam_step", 0L);
        ckpt.adam = std::move(st);
    }
    return ckpt;
}

void save_predictions(const Predictions& pr, const fs::path& dir) {
    BlobWriter w(dir, kPredictionsMagic);
    w.meta()["N"] = pr.N;
    w.meta()["K"] = pr.K;
    w.meta()["P"] = pr.P;
    std::vector<double> sbuf, rf, ro, sc, tx;
    for (int n = 0; n < pr.N; ++n) {
        sbuf.insert(sbuf.end(), pr.S[n].data(), pr.S[n].data() + pr.S[n].size());
        for (int k = 0; k < pr.K; ++k) {
            rf.insert(rf.end(), pr.R_rf[n][k].data(), pr.R_rf[n][k].data() + 9);
            ro.insert(ro.end(), pr.R_onp[n][k].data(), pr.R_onp[n][k].data() + 9);
            sc.push_back(pr.scale[n][k]);
            tx.insert(tx.end(), pr.t_xy[n][k].data(), pr.t_xy[n][k].data() + 2);
        }
    }
    w.array("S", sbuf.data(), sbuf.size());
    w.array("R_rf", rf.data(), rf.size());
    w.array("R_onp", ro.data(), ro.size());
    w.array("scale", sc.data(), sc.size());
    w.array("t_xy", tx.data(), tx.size());
    w.finish();
}

Predictions load_predictions(const fs::path& dir) {
    BlobReader r(dir, kPredictionsMagic);
    Predictions pr;
    pr.N = require<json, const char*, int>(r.meta(), "N", "predictions manifest");
    pr.K = require<json, const char*, int>(r.meta(), "K", "predictions manifest");
    pr.P = require<json, const char*, int>(r.meta(), "P", "predictions manifest");
    if (pr.N < 0 || pr.K < 1 || pr.P < 1) throw FormatError("predictions manifest: bad dimensions");

    std::vector<double> sbuf(static_cast<std::size_t>(pr.N) * pr.P * 3);
    std::vector<double> rf(static_cast<std::size_t>(pr.N) * pr.K * 9), ro(rf.size());
    std::vector<double> sc(static_cast<std::size_t>(pr.N) * pr.K), tx(sc.size() * 2);
    r.array("S", sbuf.data(), sbuf.size());
    r.array("R_rf", rf.data(), rf.size());
    r.array("R_onp", ro.data(), ro.size());
    r.array("scale", sc.data(), sc.size());
    r.array("t_xy", tx.data(), tx.size());

    pr.S.resize(pr.N);
    pr.R_rf.resize(pr.N);
    pr.R_onp.resize(pr.N);
    pr.scale.resize(pr.N);
    pr.t_xy.resize(pr.N);
    for (int n = 0; n < pr.N; ++n) {
        pr.S[n] = Eigen::Map<const Eigen::MatrixXd>(sbuf.data() + static_cast<std::size_t>(n) * pr.P * 3,
                                                    pr.P, 3);
        pr.R_rf[n].resize(pr.K);
        pr.R_onp[n].resize(pr.K);
        pr.scale[n].resize(pr.K);
        pr.t_xy[n].resize(pr.K);
        for (int k = 0; k < pr.K; ++k) {
            const std::size_t i = static_cast<std::size_t>(n) * pr.K + k;
            pr.R_rf[n][k] = Eigen::Map<const Eigen::Matrix3d>(rf.data() + 9 * i);
            pr.R_onp[n][k] = Eigen::Map<const Eigen::Matrix3d>(ro.data() + 9 * i);
            pr.scale[n][k] = sc[i];
            pr.t_xy[n][k] = Eigen::Map<const Eigen::Vector2d>(tx.data() + 2 * i);
        }
    }
    return pr;
}

}  // namespace mvnrsfm::io
