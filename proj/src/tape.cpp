#include "mvnrsfm/tape.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace mvnrsfm::diff {

namespace {

constexpr double kDegenerateTol = 1e-8;  // guard + jitter scale for projections

Eigen::Matrix3d hat(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0, -v(2), v(1), v(2), 0, -v(0), -v(1), v(0), 0;
    return m;
}

Eigen::Vector3d vee(const Eigen::Matrix3d& m) {
    return {m(2, 1), m(0, 2), m(1, 0)};
}

Eigen::Matrix3d project_so3(const Eigen::Matrix3d& M) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d U = svd.matrixU();
    if ((U * svd.matrixV().transpose()).determinant() < 0.0) U.col(2) *= -1.0;
    return U * svd.matrixV().transpose();
}

Eigen::Matrix<double, 3, 2> polar_32(const Eigen::Matrix<double, 3, 2>& A) {
    // Thin SVD needs dynamic columns in Eigen.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace

Tape::Node& Tape::node(Var v) {
    return nodes_[static_cast<std::size_t>(v.i)];
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.i) >= nodes_.size())
        throw InvalidInputError("tape: dangling variable handle");
    return nodes_[static_cast<std::size_t>(v.i)];
}

void Tape::log_kink(double margin) {
    if (kink_log) kink_log->push_back(margin);
}

Var Tape::push_leaf(Mat v, bool rg) {
    Node n;
    n.op = Op::leaf;
    n.rg = rg;
    n.val = std::move(v);
    nodes_.push_back(std::move(n));
    return {static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::push(Op op, Var a, Var b, Mat val, double c) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.rg = (a.valid() && node(a).rg) || (b.valid() && node(b).rg);
    n.val = std::move(val);
    nodes_.push_back(std::move(n));
    return {static_cast<std::int32_t>(nodes_.size() - 1)};
}

double Tape::scalar(Var v) const {
    const Mat& m = node(v).val;
    if (m.size() != 1) throw ShapeError("tape: scalar() on non-scalar node");
    return m(0, 0);
}

Var Tape::add(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
        throw ShapeError("tape: add shape mismatch");
    return push(Op::add, a, b, value(a) + value(b));
}

Var Tape::sub(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
        throw ShapeError("tape: sub shape mismatch");
    return push(Op::sub, a, b, value(a) - value(b));
}

Var Tape::scale(Var a, double c) {
    return push(Op::scale, a, {}, c * value(a), c);
}

Var Tape::matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw ShapeError("tape: matmul shape mismatch");
    return push(Op::matmul, a, b, value(a) * value(b));
}

Var Tape::solve(Var a, Var b) {
    const Mat& av = value(a);
    if (av.rows() != av.cols() || av.rows() != value(b).rows())
        throw ShapeError("tape: solve expects square a with matching b");
    return push(Op::solve, a, b, av.partialPivLu().solve(value(b)));
}

Var Tape::transpose(Var a) {
    return push(Op::transpose, a, {}, value(a).transpose());
}

Var Tape::reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
    const Mat& m = value(a);
    if (m.size() != rows * cols) throw ShapeError("tape: reshape size mismatch");
    return push(Op::reshape, a, {}, Eigen::Map<const Mat>(m.data(), rows, cols));
}

Var Tape::blocks_to_rows(Var a) {
    const Mat& m = value(a);
    if (m.cols() != 2 || m.rows() % 3 != 0) throw ShapeError("tape: blocks_to_rows expects (3B) x 2");
    const Eigen::Index B = m.rows() / 3;
    Mat rows6(B, 6);
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index c = 0; c < 2; ++c)
            for (Eigen::Index r = 0; r < 3; ++r) rows6(b, 3 * c + r) = m(3 * b + r, c);
    return push(Op::blocks_to_rows, a, {}, std::move(rows6));
}

Var Tape::center_cols(Var a) {
    const Mat& m = value(a);
    return push(Op::center_cols, a, {}, m.rowwise() - m.colwise().mean());
}

Var Tape::mul_scalar(Var m, Var s) {
    if (value(s).size() != 1) throw ShapeError("tape: mul_scalar expects 1x1 scalar");
    return push(Op::mul_scalar, m, s, value(m) * value(s)(0, 0));
}

Var Tape::block_threshold(Var rows6, Var lambda) {
    const Mat& x = value(rows6);
    if (value(lambda).size() != 1) throw ShapeError("tape: block_threshold lambda must be 1x1");
    const double lam = value(lambda)(0, 0);
    Mat out(x.rows(), x.cols());
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
        const double n = x.row(b).norm();
        log_kink(n - lam);
        out.row(b) = (n > lam) ? ((1.0 - lam / n) * x.row(b)).eval()
                               : Eigen::RowVectorXd::Zero(x.cols()).eval();
    }
    return push(Op::block_threshold, rows6, lambda, std::move(out));
}

Var Tape::shifted_relu(Var x, Var lambda) {
    if (value(lambda).size() != 1) throw ShapeError("tape: shifted_relu lambda must be 1x1");
    const double lam = value(lambda)(0, 0);
    Mat out = value(x).array() - lam;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        log_kink(out(i));
        out(i) = std::max(0.0, out(i));
    }
    return push(Op::shifted_relu, x, lambda, std::move(out));
}

Var Tape::relu(Var x) {
    Mat out = value(x);
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        log_kink(out(i));
        out(i) = std::max(0.0, out(i));
    }
    return push(Op::relu, x, {}, std::move(out));
}

Var Tape::rotation_project(Var M) {
    const Mat& m = value(M);
    if (m.rows() != 3 || m.cols() != 3) throw ShapeError("tape: rotation_project expects 3x3");
    const Eigen::Matrix3d R = project_so3(m);
    // Margin to the nearest genuine degeneracy (rotation locally non-unique):
    // smallest eigenvalue of tr(H) I - H, H = R' M.
    const Eigen::Matrix3d H = 0.5 * (R.transpose() * m + m.transpose() * R);
    const Eigen::Matrix3d G = H.trace() * Eigen::Matrix3d::Identity() - H;
    log_kink(Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(G).eigenvalues().minCoeff());
    return push(Op::rotation_project, M, {}, R);
}

Var Tape::stiefel_polar(Var A) {
    const Mat& a = value(A);
    if (a.rows() != 3 || a.cols() != 2) throw ShapeError("tape: stiefel_polar expects 3x2");
    const Eigen::Matrix<double, 3, 2> Q = polar_32(a);
    const Eigen::Matrix2d H = 0.5 * (Q.transpose() * a + (Q.transpose() * a).transpose());
    log_kink(Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(H).eigenvalues().minCoeff());
    return push(Op::stiefel_polar, A, {}, Q);
}

Var Tape::complete_rotation(Var Q) {
    const Mat& q = value(Q);
    if (q.rows() != 3 || q.cols() != 2) throw ShapeError("tape: complete_rotation expects 3x2");
    const Eigen::Vector3d q1 = q.col(0), q2 = q.col(1);
    Eigen::Matrix3d R;
    R.col(0) = q1;
    R.col(1) = q2;
    R.col(2) = q1.cross(q2);
    return push(Op::complete_rotation, Q, {}, R);
}

Var Tape::frobenius(Var x) {
    const double n = value(x).norm();
    log_kink(n);
    return push(Op::frobenius, x, {}, Mat::Constant(1, 1, n));
}

Var Tape::squared_frobenius(Var x) {
    return push(Op::squared_frobenius, x, {}, Mat::Constant(1, 1, value(x).squaredNorm()));
}

Var Tape::row_norm_sum(Var rows6) {
    const Mat& x = value(rows6);
    double total = 0.0;
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
        const double n = x.row(b).norm();
        log_kink(n);
        total += n;
    }
    return push(Op::row_norm_sum, rows6, {}, Mat::Constant(1, 1, total));
}

Var Tape::dot(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
        throw ShapeError("tape: dot shape mismatch");
    return push(Op::dot, a, b, Mat::Constant(1, 1, value(a).cwiseProduct(value(b)).sum()));
}

Var Tape::mul(Var a, Var b) {
    if (value(a).size() != 1 || value(b).size() != 1) throw ShapeError("tape: mul expects scalars");
    return push(Op::mul, a, b, Mat::Constant(1, 1, value(a)(0, 0) * value(b)(0, 0)));
}

Var Tape::div(Var a, Var b) {
    if (value(a).size() != 1 || value(b).size() != 1) throw ShapeError("tape: div expects scalars");
    return push(Op::div, a, b, Mat::Constant(1, 1, value(a)(0, 0) / value(b)(0, 0)));
}

Mat& Tape::acc(Var v) {
    Node& n = node(v);
    if (!n.grad_live) {
        n.grad.setZero(n.val.rows(), n.val.cols());
        n.grad_live = true;
    }
    return n.grad;
}

Mat Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad_live) return n.grad;
    return Mat::Zero(n.val.rows(), n.val.cols());
}

void Tape::reset() {
    nodes_.clear();
}

void Tape::backward(Var root) {
    const Node& r = node(root);
    if (r.val.size() != 1) throw ShapeError("tape: backward root must be 1x1");
    for (auto& n : nodes_) n.grad_live = false;
    if (!r.rg) return;
    acc(root)(0, 0) = 1.0;
    for (std::int32_t i = root.i; i >= 0; --i) backward_node(i);
}

void Tape::backward_node(std::int32_t i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.rg || !n.grad_live || n.op == Op::leaf) return;
    const Mat& g = n.grad;
    const bool ga = n.a.valid() && node(n.a).rg;
    const bool gb = n.b.valid() && node(n.b).rg;

    switch (n.op) {
        case Op::leaf:
            break;
        case Op::add:
            if (ga) acc(n.a) += g;
            if (gb) acc(n.b) += g;
            break;
        case Op::sub:
            if (ga) acc(n.a) += g;
            if (gb) acc(n.b) -= g;
            break;
        case Op::scale:
            if (ga) acc(n.a) += n.c * g;
            break;
        case Op::matmul:
            if (ga) acc(n.a) += g * node(n.b).val.transpose();
            if (gb) acc(n.b) += node(n.a).val.transpose() * g;
            break;
        case Op::solve: {
            // Y = a^(-1) b: bbar = a^(-T) g, abar = -a^(-T) g Y'.
            const Mat at_g = node(n.a).val.transpose().partialPivLu().solve(g);
            if (gb) acc(n.b) += at_g;
            if (ga) acc(n.a) -= at_g * n.val.transpose();
            break;
        }
        case Op::transpose:
            if (ga) acc(n.a) += g.transpose();
            break;
        case Op::reshape:
            if (ga) {
                const Mat& av = node(n.a).val;
                acc(n.a) += Eigen::Map<const Mat>(g.data(), av.rows(), av.cols());
            }
            break;
        case Op::blocks_to_rows:
            if (ga) {
                Mat& out = acc(n.a);
                const Eigen::Index B = g.rows();
                for (Eigen::Index b = 0; b < B; ++b)
                    for (Eigen::Index c = 0; c < 2; ++c)
                        for (Eigen::Index r = 0; r < 3; ++r) out(3 * b + r, c) += g(b, 3 * c + r);
            }
            break;
        case Op::center_cols:
            if (ga) acc(n.a) += g.rowwise() - g.colwise().mean();
            break;
        case Op::mul_scalar:
            if (ga) acc(n.a) += node(n.b).val(0, 0) * g;
            if (gb) acc(n.b)(0, 0) += node(n.a).val.cwiseProduct(g).sum();
            break;
        case Op::block_threshold: {
            const Mat& x = node(n.a).val;
            const double lam = node(n.b).val(0, 0);
            for (Eigen::Index b = 0; b < x.rows(); ++b) {
                const double norm = x.row(b).norm();
                if (norm <= lam) continue;  // zero subgradient at and inside the kink
                const double xg = x.row(b).dot(g.row(b));
                if (ga) acc(n.a).row(b) += (1.0 - lam / norm) * g.row(b) +
                                           (lam / (norm * norm * norm)) * xg * x.row(b);
                if (gb) acc(n.b)(0, 0) += -xg / norm;
            }
            break;
        }
        case Op::shifted_relu: {
            const Mat& x = node(n.a).val;
            const double lam = node(n.b).val(0, 0);
            for (Eigen::Index j = 0; j < x.size(); ++j) {
                if (x(j) - lam <= 0.0) continue;
                if (ga) acc(n.a)(j) += g(j);
                if (gb) acc(n.b)(0, 0) -= g(j);
            }
            break;
        }
        case Op::relu: {
            const Mat& x = node(n.a).val;
            if (ga)
                for (Eigen::Index j = 0; j < x.size(); ++j)
                    if (x(j) > 0.0) acc(n.a)(j) += g(j);
            break;
        }
        case Op::rotation_project: {
            // Implicit differential of the SO(3) projection R(M): with
            // H = R'M (symmetric) and G = tr(H) I - H, a perturbation dM
            // moves R by R [x]_x where (tr(H) I - H) x = vee(R'dM - dM'R).
            // The adjoint is Mbar = 2 R [Ginv b]_x, b = vee(skew(R'Rbar)).
            if (!ga) break;
            Eigen::Matrix3d R = n.val;
            Eigen::Matrix3d M = node(n.a).val;
            Eigen::Matrix3d H = 0.5 * (R.transpose() * M + M.transpose() * R);
            Eigen::Matrix3d G = H.trace() * Eigen::Matrix3d::Identity() - H;
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(G);
            if (es.eigenvalues().minCoeff() < kDegenerateTol) {
                // Rotation nearly non-unique: evaluate the gradient at a
                // jittered input; the forward value above is untouched.
                M += kDegenerateTol * Eigen::Matrix3d::Identity();
                R = project_so3(M);
                H = 0.5 * (R.transpose() * M + M.transpose() * R);
                G = H.trace() * Eigen::Matrix3d::Identity() - H;
            }
            const Eigen::Matrix3d Rbar = g;
            const Eigen::Vector3d b = vee(0.5 * (R.transpose() * Rbar - Rbar.transpose() * R));
            const Eigen::Vector3d x = G.ldlt().solve(b);
            acc(n.a) += 2.0 * R * hat(x);
            break;
        }
        case Op::stiefel_polar: {
            // Thin polar factor Q(A) = A (A'A)^(-1/2), A 3x2. With H = Q'A
            // (symmetric) the differential splits into an in-plane rotation
            // dQ = w Q J + (I - QQ') dA H^(-1), with w = vee2(Q'dA - dA'Q) / tr(H)
            // and J the 2x2 rotation generator. Adjoint assembled per term.
            if (!ga) break;
            Eigen::Matrix<double, 3, 2> Q = n.val;
            Eigen::Matrix<double, 3, 2> A = node(n.a).val;
            Eigen::Matrix2d H = 0.5 * (Q.transpose() * A + (Q.transpose() * A).transpose());
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(H);
            if (es.eigenvalues().minCoeff() < kDegenerateTol) {
                A.topRows<2>() += kDegenerateTol * Eigen::Matrix2d::Identity();
                Q = polar_32(A);
                H = 0.5 * (Q.transpose() * A + (Q.transpose() * A).transpose());
            }
            Eigen::Matrix2d J;
            J << 0, 1, -1, 0;
            const Eigen::Matrix<double, 3, 2> QJ = Q * J;
            const double gamma = QJ.cwiseProduct(g).sum();
            const Eigen::Matrix<double, 3, 2> term1 = (gamma / H.trace()) * QJ;
            const Eigen::Matrix<double, 3, 2> term2 =
                (Eigen::Matrix3d::Identity() - Q * Q.transpose()) * g * H.inverse();
            acc(n.a) += term1 + term2;
            break;
        }
        case Op::complete_rotation: {
            if (!ga) break;
            const Mat& q = node(n.a).val;
            const Eigen::Vector3d q1 = q.col(0), q2 = q.col(1);
            const Eigen::Vector3d cbar = g.col(2);
            Mat& out = acc(n.a);
            out.col(0) += g.col(0) + q2.cross(cbar);
            out.col(1) += g.col(1) + cbar.cross(q1);
            break;
        }
        case Op::frobenius: {
            if (!ga) break;
            const double norm = n.val(0, 0);
            if (norm > 0.0) acc(n.a) += (g(0, 0) / norm) * node(n.a).val;
            break;
        }
        case Op::squared_frobenius:
            if (ga) acc(n.a) += 2.0 * g(0, 0) * node(n.a).val;
            break;
        case Op::row_norm_sum: {
            if (!ga) break;
            const Mat& x = node(n.a).val;
            for (Eigen::Index b = 0; b < x.rows(); ++b) {
                const double norm = x.row(b).norm();
                if (norm > 0.0) acc(n.a).row(b) += (g(0, 0) / norm) * x.row(b);
            }
            break;
        }
        case Op::dot:
            if (ga) acc(n.a) += g(0, 0) * node(n.b).val;
            if (gb) acc(n.b) += g(0, 0) * node(n.a).val;
            break;
        case Op::mul:
            if (ga) acc(n.a)(0, 0) += g(0, 0) * node(n.b).val(0, 0);
            if (gb) acc(n.b)(0, 0) += g(0, 0) * node(n.a).val(0, 0);
            break;
        case Op::div: {
            const double bv = node(n.b).val(0, 0);
            if (ga) acc(n.a)(0, 0) += g(0, 0) / bv;
            if (gb) acc(n.b)(0, 0) -= g(0, 0) * node(n.a).val(0, 0) / (bv * bv);
            break;
        }
    }
}

}  // namespace mvnrsfm::diff
