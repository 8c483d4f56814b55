#include "mvnrsfm/optim.hpp"

#include <cmath>

namespace mvnrsfm::diff {

ParamLayout ParamLayout::of(const prior::DictionaryStack& theta) {
    theta.validate();
    ParamLayout lay;
    lay.P = theta.P;
    lay.widths = theta.widths;
    Eigen::Index off = 0;
    auto span = [&off](Eigen::Index rows, Eigen::Index cols) {
        Span s{off, rows, cols};
        off += rows * cols;
        return s;
    };
    for (const auto& D : theta.D) lay.dicts.push_back(span(D.rows(), D.cols()));
    lay.lambdas = span(theta.lambda.size(), 1);
    lay.rf_rot_w = span(theta.rf_rot_w.rows(), theta.rf_rot_w.cols());
    lay.rf_rot_b = span(theta.rf_rot_b.size(), 1);
    lay.rf_code_w = span(theta.rf_code_w.rows(), theta.rf_code_w.cols());
    lay.rf_code_b = span(theta.rf_code_b.size(), 1);
    lay.total = off;
    return lay;
}

bool ParamLayout::matches(const prior::DictionaryStack& theta) const {
    return theta.P == P && theta.widths == widths;
}

Eigen::VectorXd flatten(const prior::DictionaryStack& theta) {
    const ParamLayout lay = ParamLayout::of(theta);
    Eigen::VectorXd v(lay.total);
    for (std::size_t l = 0; l < theta.D.size(); ++l)
        v.segment(lay.dicts[l].offset, lay.dicts[l].size()) =
            Eigen::Map<const Eigen::VectorXd>(theta.D[l].data(), theta.D[l].size());
    v.segment(lay.lambdas.offset, lay.lambdas.size()) = theta.lambda;
    v.segment(lay.rf_rot_w.offset, lay.rf_rot_w.size()) =
        Eigen::Map<const Eigen::VectorXd>(theta.rf_rot_w.data(), theta.rf_rot_w.size());
    v.segment(lay.rf_rot_b.offset, lay.rf_rot_b.size()) = theta.rf_rot_b;
    v.segment(lay.rf_code_w.offset, lay.rf_code_w.size()) =
        Eigen::Map<const Eigen::VectorXd>(theta.rf_code_w.data(), theta.rf_code_w.size());
    v.segment(lay.rf_code_b.offset, lay.rf_code_b.size()) = theta.rf_code_b;
    return v;
}

prior::DictionaryStack unflatten(const ParamLayout& lay, const Eigen::VectorXd& v) {
    if (v.size() != lay.total) throw ShapeError("unflatten: wrong parameter vector length");
    prior::DictionaryStack t;
    t.P = lay.P;
    t.widths = lay.widths;
    t.D.resize(lay.dicts.size());
    for (std::size_t l = 0; l < lay.dicts.size(); ++l) {
        const auto& s = lay.dicts[l];
        t.D[l] = Eigen::Map<const Eigen::MatrixXd>(v.data() + s.offset, s.rows, s.cols);
    }
    t.lambda = v.segment(lay.lambdas.offset, lay.lambdas.size());
    t.rf_rot_w =
        Eigen::Map<const Eigen::MatrixXd>(v.data() + lay.rf_rot_w.offset, lay.rf_rot_w.rows,
                                          lay.rf_rot_w.cols);
    t.rf_rot_b = v.segment(lay.rf_rot_b.offset, lay.rf_rot_b.size());
    t.rf_code_w =
        Eigen::Map<const Eigen::MatrixXd>(v.data() + lay.rf_code_w.offset, lay.rf_code_w.rows,
                                          lay.rf_code_w.cols);
    t.rf_code_b = v.segment(lay.rf_code_b.offset, lay.rf_code_b.size());
    return t;
}

AdamState AdamState::init(Eigen::Index n, const AdamConfig& cfg) {
    AdamState s;
    s.m = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    s.step = 0;
    s.cfg = cfg;
    return s;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state,
               const ParamLayout& layout) {
    if (params.size() != grad.size() || params.size() != state.m.size())
        throw ShapeError("adam_step: size mismatch");
    if (!grad.allFinite()) throw NumericalFailureError("adam_step: non-finite gradient");

    const auto& c = state.cfg;
    state.step += 1;
    state.m = c.beta1 * state.m + (1.0 - c.beta1) * grad;
    state.v = c.beta2 * state.v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    params -= (c.lr / bc1) * state.m.cwiseQuotient(((state.v / bc2).cwiseSqrt().array() + c.eps).matrix());

    // Shrinkage thresholds live on the nonnegative orthant.
    auto lam = params.segment(layout.lambdas.offset, layout.lambdas.size());
    lam = lam.cwiseMax(0.0);
}

}  // namespace mvnrsfm::diff
