#include "mvnrsfm/loss.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <thread>

#include "mvnrsfm/optim.hpp"

namespace mvnrsfm::diff {

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
    total += o.total;
    reproj += o.reproj;
    sparsity += o.sparsity;
    dict += o.dict;
    rot += o.rot;
    return *this;
}

LossBreakdown& LossBreakdown::operator/=(double d) {
    total /= d;
    reproj /= d;
    sparsity /= d;
    dict /= d;
    rot /= d;
    return *this;
}

ThetaVars make_theta_vars(Tape& tape, const prior::DictionaryStack& theta) {
    ThetaVars tv;
    for (const auto& D : theta.D) tv.D.push_back(tape.param(D));
    for (Eigen::Index l = 0; l < theta.lambda.size(); ++l)
        tv.lambda.push_back(tape.param(Mat::Constant(1, 1, theta.lambda(l))));
    tv.rf_rot_w = tape.param(theta.rf_rot_w);
    tv.rf_rot_b = tape.param(theta.rf_rot_b);
    tv.rf_code_w = tape.param(theta.rf_code_w);
    tv.rf_code_b = tape.param(theta.rf_code_b);
    return tv;
}

namespace {

// Fold of binary adds; single element passes through untouched so K = 1
// pooling is an exact identity.
Var sum_vars(Tape& tape, const std::vector<Var>& vs) {
    Var out = vs.front();
    for (std::size_t i = 1; i < vs.size(); ++i) out = tape.add(out, vs[i]);
    return out;
}

}  // namespace

InstanceTerms build_instance_loss(Tape& tape, const ThetaVars& tv, const Instance& views,
                                  const LossWeights& weights) {
    if (views.empty()) throw ShapeError("build_instance_loss: no views");
    const int L = static_cast<int>(tv.D.size());
    const int K = static_cast<int>(views.size());
    const Eigen::Index P = tape.value(tv.D[0]).rows() / 3;
    const Eigen::Index B1 = tape.value(tv.D[0]).cols();
    const Eigen::Index BL = tape.value(tv.D[L - 1]).cols();

    std::vector<Var> Wc(K);
    std::vector<Var> R_rf(K), code(K);
    std::vector<Var> sparsity_terms, dict_terms;

    for (int k = 0; k < K; ++k) {
        if (views[k].rows() != P || views[k].cols() != 2)
            throw ShapeError("build_instance_loss: view does not match dictionary P");
        Wc[k] = tape.constant(views[k].rowwise() - views[k].colwise().mean());

        // Encoder: unrolled ISTA with block shrinkage, concealed Kronecker
        // structure handled by the rows-per-block layout.
        std::vector<Var> psi6(L);
        const Var Dsharp = tape.reshape(tv.D[0], P, 3 * B1);
        const Var z1 = tape.matmul(tape.transpose(Dsharp), Wc[k]);
        psi6[0] = tape.block_threshold(tape.blocks_to_rows(z1), tv.lambda[0]);
        for (int l = 1; l < L; ++l)
            psi6[l] = tape.block_threshold(tape.matmul(tape.transpose(tv.D[l]), psi6[l - 1]),
                                           tv.lambda[l]);

        // Rotation factorization head.
        const Var flat = tape.reshape(psi6[L - 1], 6 * BL, 1);
        const Var m9 = tape.add(tape.matmul(tv.rf_rot_w, flat), tv.rf_rot_b);
        const Eigen::Matrix3d Mval =
            Eigen::Map<const Eigen::Matrix3d>(tape.value(m9).data());
        Eigen::JacobiSVD<Eigen::Matrix3d> msvd(Mval);
        if (msvd.singularValues()(1) < 1e-12) {
            R_rf[k] = tape.constant(Eigen::Matrix3d::Identity());
        } else {
            R_rf[k] = tape.rotation_project(tape.reshape(m9, 3, 3));
        }
        code[k] = tape.relu(tape.add(tape.matmul(tv.rf_code_w, flat), tv.rf_code_b));

        for (int l = 0; l < L; ++l)
            sparsity_terms.push_back(tape.mul(tv.lambda[l], tape.row_norm_sum(psi6[l])));
        for (int l = 1; l < L; ++l)
            dict_terms.push_back(
                tape.frobenius(tape.sub(psi6[l - 1], tape.matmul(tv.D[l], psi6[l]))));
    }

    // Sum-pool the rotation-invariant codes, decode the canonical shape.
    Var psi = sum_vars(tape, code);
    for (int l = L - 1; l >= 1; --l)
        psi = tape.shifted_relu(tape.matmul(tv.D[l], psi), tv.lambda[l]);
    const Var S = tape.reshape(tape.matmul(tv.D[0], psi), P, 3);
    const Var Sc = tape.center_cols(S);
    const double Sc_norm = tape.value(Sc).norm();

    // Rank check of the decoded shape shared by every view's OnP fit.
    Eigen::JacobiSVD<Eigen::MatrixXd> ssvd(tape.value(Sc));
    const double shape_margin =
        tape.value(Sc).rows() >= 3 && Sc_norm > 0.0
            ? ssvd.singularValues()(2) - 1e-9 * ssvd.singularValues()(0)
            : -1.0;
    if (tape.kink_log) tape.kink_log->push_back(shape_margin);
    const bool shape_ok = Sc_norm >= 1e-12 && shape_margin > 0.0;

    std::vector<Var> reproj_terms, rot_terms;
    for (int k = 0; k < K; ++k) {
        if (!shape_ok) {
            // Collapsed or rank-deficient shape: the OnP pose is undefined,
            // the objective falls back to the zero-scale residual.
            reproj_terms.push_back(tape.frobenius(Wc[k]));
            rot_terms.push_back(
                tape.squared_frobenius(tape.sub(R_rf[k], tape.constant(Eigen::Matrix3d::Identity()))));
            continue;
        }
        const Var A = tape.matmul(tape.transpose(Sc), Wc[k]);
        Var Q, s;
        if (weights.onp_frozen) {
            const auto onp = geometry::solve_onp(tape.value(Wc[k]), tape.value(Sc),
                                                 {.lenient = true});
            Q = tape.constant(onp.pose.R.leftCols<2>());
            s = tape.constant(Mat::Constant(1, 1, onp.pose.s));
        } else {
            const Var C = tape.matmul(tape.transpose(Sc), Sc);
            const Var X = tape.solve(C, A);
            Q = tape.stiefel_polar(X);
            s = tape.div(tape.dot(Q, A), tape.squared_frobenius(tape.matmul(Sc, Q)));
        }
        const Var proj = tape.mul_scalar(tape.matmul(Sc, Q), s);
        reproj_terms.push_back(tape.frobenius(tape.sub(Wc[k], proj)));
        rot_terms.push_back(tape.squared_frobenius(tape.sub(R_rf[k], tape.complete_rotation(Q))));
    }

    InstanceTerms t;
    t.reproj = tape.scale(sum_vars(tape, reproj_terms), 1.0 / K);
    t.sparsity = tape.scale(sum_vars(tape, sparsity_terms), 1.0 / K);
    t.dict = dict_terms.empty() ? tape.constant(Mat::Zero(1, 1))
                                : tape.scale(sum_vars(tape, dict_terms), 1.0 / K);
    t.rot = tape.scale(sum_vars(tape, rot_terms), 1.0 / K);
    t.total = tape.add(t.reproj, tape.add(tape.scale(t.sparsity, weights.w_sparse),
                                          tape.add(tape.scale(t.dict, weights.w_dict),
                                                   tape.scale(t.rot, weights.beta))));
    return t;
}

namespace {

LossBreakdown read_terms(const Tape& tape, const InstanceTerms& t) {
    LossBreakdown b;
    b.total = tape.scalar(t.total);
    b.reproj = tape.scalar(t.reproj);
    b.sparsity = tape.scalar(t.sparsity);
    b.dict = tape.scalar(t.dict);
    b.rot = tape.scalar(t.rot);
    return b;
}

void check_finite(const LossBreakdown& b) {
    if (!std::isfinite(b.reproj))
        throw NumericalFailureError("loss: non-finite reprojection term");
    if (!std::isfinite(b.sparsity)) throw NumericalFailureError("loss: non-finite sparsity term");
    if (!std::isfinite(b.dict))
        throw NumericalFailureError("loss: non-finite dictionary-consistency term");
    if (!std::isfinite(b.rot)) throw NumericalFailureError("loss: non-finite rotation term");
}

void accumulate_leaf_grads(const Tape& tape, const ThetaVars& tv, const ParamLayout& lay,
                           Eigen::VectorXd& out) {
    auto add_span = [&](Var v, const ParamLayout::Span& s) {
        const Mat g = tape.grad(v);
        out.segment(s.offset, s.size()) += Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
    };
    for (std::size_t l = 0; l < tv.D.size(); ++l) add_span(tv.D[l], lay.dicts[l]);
    for (std::size_t l = 0; l < tv.lambda.size(); ++l)
        out(lay.lambdas.offset + static_cast<Eigen::Index>(l)) += tape.grad(tv.lambda[l])(0, 0);
    add_span(tv.rf_rot_w, lay.rf_rot_w);
    add_span(tv.rf_rot_b, lay.rf_rot_b);
    add_span(tv.rf_code_w, lay.rf_code_w);
    add_span(tv.rf_code_b, lay.rf_code_b);
}

}  // namespace

LossBreakdown loss_total(std::span<const Instance> instances,
                         const prior::DictionaryStack& theta, const LossWeights& weights) {
    if (instances.empty()) throw ShapeError("loss_total: no instances");
    theta.validate();
    Tape tape;
    LossBreakdown sum;
    for (const auto& inst : instances) {
        tape.reset();
        const ThetaVars tv = make_theta_vars(tape, theta);
        const LossBreakdown b = read_terms(tape, build_instance_loss(tape, tv, inst, weights));
        check_finite(b);
        sum += b;
    }
    sum /= static_cast<double>(instances.size());
    return sum;
}

LossBreakdown loss_gradient(std::span<const Instance* const> instances,
                            const prior::DictionaryStack& theta, const LossWeights& weights,
                            Eigen::VectorXd& grad_out, int threads) {
    if (instances.empty()) throw ShapeError("loss_gradient: no instances");
    const ParamLayout lay = ParamLayout::of(theta);
    const int n = static_cast<int>(instances.size());
    const int T = std::max(1, std::min(threads, n));

    std::vector<Eigen::VectorXd> grads(T, Eigen::VectorXd::Zero(lay.total));
    std::vector<LossBreakdown> sums(T);

    auto worker = [&](int t, int lo, int hi) {
        Tape tape;
        for (int i = lo; i < hi; ++i) {
            tape.reset();
            const ThetaVars tv = make_theta_vars(tape, theta);
            const InstanceTerms terms = build_instance_loss(tape, tv, *instances[i], weights);
            sums[t] += read_terms(tape, terms);
            tape.backward(terms.total);
            accumulate_leaf_grads(tape, tv, lay, grads[t]);
        }
    };

    if (T == 1) {
        worker(0, 0, n);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (n + T - 1) / T;
        for (int t = 0; t < T; ++t)
            pool.emplace_back(worker, t, std::min(t * chunk, n), std::min((t + 1) * chunk, n));
        for (auto& th : pool) th.join();
    }

    LossBreakdown sum;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(lay.total);
    for (int t = 0; t < T; ++t) {
        sum += sums[t];
        g += grads[t];
    }
    check_finite(sum);
    sum /= n;
    grad_out = g / n;
    return sum;
}

LossBreakdown loss_gradient(std::span<const Instance> instances,
                            const prior::DictionaryStack& theta, const LossWeights& weights,
                            Eigen::VectorXd& grad_out, int threads) {
    std::vector<const Instance*> ptrs;
    ptrs.reserve(instances.size());
    for (const auto& i : instances) ptrs.push_back(&i);
    return loss_gradient(std::span<const Instance* const>(ptrs), theta, weights, grad_out, threads);
}

}  // namespace mvnrsfm::diff
