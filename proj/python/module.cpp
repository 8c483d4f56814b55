// Python bindings for the core operations: geometry, the shape prior,
// training, triangulation, synthetic data and metrics.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mvnrsfm/io.hpp"
#include "mvnrsfm/metrics.hpp"
#include "mvnrsfm/train.hpp"
#include "mvnrsfm/triangulation.hpp"

namespace py = pybind11;
using namespace mvnrsfm;

namespace {

void register_errors(py::module_& m) {
    static py::exception<DataError> data_error(m, "DataError");
    static py::exception<NumericError> numeric_error(m, "NumericError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const DataError& e) {
            py::set_error(data_error, e.what());
        } catch (const NumericError& e) {
            py::set_error(numeric_error, e.what());
        }
    });
}

}  // namespace

PYBIND11_MODULE(mvnrsfm, m) {
    m.doc() = "Multi-view non-rigid 3D reconstruction: hierarchical sparse shape prior, "
              "robust triangulation baseline, synthetic rigs and pose metrics";

    register_errors(m);

    // ---- geometry ----
    py::class_<geometry::CameraPose>(m, "CameraPose")
        .def(py::init<>())
        .def_readwrite("R", &geometry::CameraPose::R)
        .def_readwrite("s", &geometry::CameraPose::s)
        .def_readwrite("t_xy", &geometry::CameraPose::t_xy);

    m.def("project_weak_perspective", &geometry::project_weak_perspective, py::arg("S"),
          py::arg("pose"), "W = s * S * R[:, :2] + t");
    m.def("nearest_rotation", &geometry::nearest_rotation, py::arg("M"),
          "SVD projection of a 3x3 matrix onto SO(3)");
    m.def(
        "solve_onp",
        [](const Eigen::MatrixXd& W, const Eigen::MatrixXd& S) {
            const auto r = geometry::solve_onp(W, S);
            return py::make_tuple(r.pose.R, r.pose.s);
        },
        py::arg("W"), py::arg("S"),
        "Weak-perspective pose (R, s) minimizing ||W - s S R[:, :2]|| for centered inputs");
    m.def(
        "procrustes_align",
        [](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, bool allow_scale) {
            return geometry::procrustes_align(X, Y, {allow_scale}).aligned;
        },
        py::arg("X"), py::arg("Y"), py::arg("allow_scale") = true,
        "Similarity alignment of X onto Y (reflections permitted)");

    // ---- prior ----
    py::class_<prior::DictionaryStack>(m, "DictionaryStack")
        .def_static("random_init", &prior::DictionaryStack::random_init, py::arg("P"),
                    py::arg("widths"), py::arg("seed"))
        .def_readonly("P", &prior::DictionaryStack::P)
        .def_readonly("widths", &prior::DictionaryStack::widths)
        .def_readwrite("D", &prior::DictionaryStack::D)
        .def_readwrite("lam", &prior::DictionaryStack::lambda)
        .def("validate", &prior::DictionaryStack::validate);

    m.def("block_soft_threshold", &prior::block_soft_threshold, py::arg("Psi"), py::arg("lam"),
          "Group shrinkage of 3x2 blocks");
    m.def(
        "encode_view",
        [](const Eigen::MatrixXd& Wc, const prior::DictionaryStack& theta) {
            return prior::encode_view(Wc, theta).layers;
        },
        py::arg("Wc"), py::arg("theta"), "Per-layer block-sparse codes of one centered view");
    m.def("pool_codes", &prior::pool_codes, py::arg("codes"), "Order-invariant sum pooling");
    m.def("decode_shape", &prior::decode_shape, py::arg("psi"), py::arg("theta"));
    m.def(
        "forward",
        [](const std::vector<Eigen::MatrixXd>& views, const prior::DictionaryStack& theta) {
            const auto rec = prior::forward(views, theta, {.lenient = true});
            py::dict out;
            out["S"] = rec.S;
            out["pooled"] = rec.pooled;
            out["reproj_loss"] = rec.reproj_loss;
            py::list rs, onp_rs, scales, ts;
            for (const auto& v : rec.views) {
                rs.append(v.R_rf);
                onp_rs.append(v.onp.R);
                scales.append(v.onp.s);
                ts.append(v.t_xy);
            }
            out["R_rf"] = rs;
            out["R_onp"] = onp_rs;
            out["scale"] = scales;
            out["t_xy"] = ts;
            return out;
        },
        py::arg("views"), py::arg("theta"),
        "Full multi-view pass: canonical shape plus per-view poses");

    // ---- data ----
    py::class_<data::CalibratedCamera>(m, "CalibratedCamera")
        .def(py::init<>())
        .def_readwrite("K", &data::CalibratedCamera::K)
        .def_readwrite("R", &data::CalibratedCamera::R)
        .def_readwrite("t", &data::CalibratedCamera::t)
        .def("project", &data::CalibratedCamera::project)
        .def("center", &data::CalibratedCamera::center);

    py::class_<data::MultiViewDataset>(m, "MultiViewDataset")
        .def(py::init<>())
        .def_readonly("N", &data::MultiViewDataset::N)
        .def_readonly("K", &data::MultiViewDataset::K)
        .def_readonly("P", &data::MultiViewDataset::P)
        .def_readwrite("W", &data::MultiViewDataset::W)
        .def_readwrite("gt", &data::MultiViewDataset::gt)
        .def_readwrite("cameras", &data::MultiViewDataset::cameras);

    py::class_<data::SynthConfig>(m, "SynthConfig")
        .def(py::init<>())
        .def_readwrite("P", &data::SynthConfig::P)
        .def_readwrite("K", &data::SynthConfig::K)
        .def_readwrite("N", &data::SynthConfig::N)
        .def_readwrite("basis_rank", &data::SynthConfig::basis_rank)
        .def_readwrite("deform_scale", &data::SynthConfig::deform_scale)
        .def_readwrite("instance_offset", &data::SynthConfig::instance_offset)
        .def_readwrite("random_orientation", &data::SynthConfig::random_orientation);

    py::class_<data::NoiseSpec>(m, "NoiseSpec")
        .def(py::init<>())
        .def_readwrite("sigma_extrinsics", &data::NoiseSpec::sigma_extrinsics)
        .def_readwrite("sigma_intrinsics", &data::NoiseSpec::sigma_intrinsics)
        .def_readwrite("sigma_keypoints", &data::NoiseSpec::sigma_keypoints)
        .def_readwrite("seed", &data::NoiseSpec::seed);

    m.def("synth_generate", &data::synth_generate, py::arg("config"), py::arg("seed"));
    m.def("inject_noise", &data::inject_noise, py::arg("dataset"), py::arg("spec"));
    m.def("save_dataset", [](const data::MultiViewDataset& d, const std::string& p) {
        io::save_dataset(d, p);
    });
    m.def("load_dataset", [](const std::string& p) { return io::load_dataset(p); });

    // ---- training ----
    py::class_<diff::TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("widths", &diff::TrainConfig::widths)
        .def_readwrite("epochs", &diff::TrainConfig::epochs)
        .def_readwrite("batch", &diff::TrainConfig::batch)
        .def_readwrite("threads", &diff::TrainConfig::threads)
        .def_readwrite("metrics_every", &diff::TrainConfig::metrics_every)
        .def_property(
            "lr", [](const diff::TrainConfig& c) { return c.adam.lr; },
            [](diff::TrainConfig& c, double v) { c.adam.lr = v; })
        .def_property(
            "w_sparse", [](const diff::TrainConfig& c) { return c.weights.w_sparse; },
            [](diff::TrainConfig& c, double v) { c.weights.w_sparse = v; })
        .def_property(
            "w_dict", [](const diff::TrainConfig& c) { return c.weights.w_dict; },
            [](diff::TrainConfig& c, double v) { c.weights.w_dict = v; })
        .def_property(
            "beta", [](const diff::TrainConfig& c) { return c.weights.beta; },
            [](diff::TrainConfig& c, double v) { c.weights.beta = v; });

    m.def(
        "train",
        [](const data::MultiViewDataset& d, const diff::TrainConfig& cfg, std::uint64_t seed) {
            const auto res = diff::train(d, cfg, seed);
            py::list log;
            for (const auto& r : res.log) {
                py::dict e;
                e["epoch"] = r.epoch;
                e["total"] = r.loss.total;
                e["reproj"] = r.loss.reproj;
                e["sparsity"] = r.loss.sparsity;
                e["dict"] = r.loss.dict;
                e["rot"] = r.loss.rot;
                e["pa_mpjpe"] = r.pa_mpjpe;
                log.append(e);
            }
            py::dict out;
            out["theta"] = res.theta;
            out["log"] = log;
            out["diverged"] = res.diverged;
            return out;
        },
        py::arg("dataset"), py::arg("config"), py::arg("seed"),
        "Fit the prior; returns {theta, log, diverged}");

    m.def(
        "loss_total",
        [](const std::vector<std::vector<Eigen::MatrixXd>>& instances,
           const prior::DictionaryStack& theta, double w_sparse, double w_dict, double beta) {
            const diff::LossWeights w{w_sparse, w_dict, beta, false};
            const auto b = diff::loss_total(instances, theta, w);
            py::dict out;
            out["total"] = b.total;
            out["reproj"] = b.reproj;
            out["sparsity"] = b.sparsity;
            out["dict"] = b.dict;
            out["rot"] = b.rot;
            return out;
        },
        py::arg("instances"), py::arg("theta"), py::arg("w_sparse") = 1.0,
        py::arg("w_dict") = 1.0, py::arg("beta") = 0.1);

    m.def("save_checkpoint",
          [](const prior::DictionaryStack& theta, const std::string& p) {
              io::save_checkpoint({theta, std::nullopt, 0, ""}, p);
          });
    m.def("load_checkpoint",
          [](const std::string& p) { return io::load_checkpoint(p).theta; });

    // ---- triangulation ----
    m.def(
        "triangulate_dlt",
        [](const std::vector<Eigen::Vector2d>& obs,
           const std::vector<data::CalibratedCamera>& cams) {
            const auto r = triangulation::triangulate_dlt(obs, cams);
            return py::make_tuple(r.point, r.degenerate);
        },
        py::arg("observations"), py::arg("cameras"));
    m.def(
        "robust_triangulate",
        [](const std::vector<Eigen::Vector2d>& obs,
           const std::vector<data::CalibratedCamera>& cams, int iters, double threshold) {
            const auto r = triangulation::robust_triangulate(obs, cams, {iters, threshold});
            return py::make_tuple(r.point, r.inliers);
        },
        py::arg("observations"), py::arg("cameras"), py::arg("iters") = 3,
        py::arg("reproj_threshold") = 5.0);
    m.def(
        "triangulate_dataset",
        [](const data::MultiViewDataset& d, int iters, double threshold) {
            return triangulation::triangulate_dataset(d, {iters, threshold}).S;
        },
        py::arg("dataset"), py::arg("iters") = 3, py::arg("reproj_threshold") = 5.0);

    // ---- metrics ----
    m.def(
        "pa_mpjpe",
        [](const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt) {
            return metrics::pa_mpjpe(pred, gt);
        },
        py::arg("pred"), py::arg("gt"));
    m.def("pck", &metrics::pck, py::arg("pred"), py::arg("gt"), py::arg("threshold"));
}
