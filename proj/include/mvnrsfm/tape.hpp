#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mvnrsfm/errors.hpp"

namespace mvnrsfm::diff {

using Mat = Eigen::MatrixXd;

/// Handle into a Tape.
struct Var {
    std::int32_t i = -1;
    bool valid() const { return i >= 0; }
};

/// Reverse-mode tape over a fixed set of matrix-valued operations: the
/// operations below are exactly what the training objective is composed of.
/// Values are computed eagerly as the graph is built; backward() walks the
/// nodes in reverse and accumulates adjoints.
///
/// Subgradient convention: at every shrinkage/ReLU kink the zero subgradient
/// is chosen. The SO(3) and Stiefel projections are differentiated through
/// the implicit equations of the polar factor; near a genuine degeneracy
/// (rotation not locally unique) a symmetric 1e-8 jitter is applied to the
/// input for the gradient evaluation only, so forward values stay bit-stable.
class Tape {
public:
    /// Records margins to shrinkage/ReLU kinks and degeneracy guards during
    /// forward construction. Finite-difference harnesses use this to exclude
    /// kink-adjacent coordinates.
    std::vector<double>* kink_log = nullptr;

    Var constant(Mat v) { return push_leaf(std::move(v), false); }
    Var param(Mat v) { return push_leaf(std::move(v), true); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double c);
    Var matmul(Var a, Var b);
    Var solve(Var a, Var b);            // a^(-1) b, square invertible a
    Var transpose(Var a);
    Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);  // column-major
    Var blocks_to_rows(Var a);          // (3B) x 2 -> B x 6 block layout
    Var center_cols(Var a);             // subtract column means
    Var mul_scalar(Var m, Var s);       // matrix * 1x1 scalar
    Var block_threshold(Var rows6, Var lambda);   // group shrinkage on rows
    Var shifted_relu(Var x, Var lambda);          // max(0, x - lambda)
    Var relu(Var x);
    Var rotation_project(Var M);        // 3x3 -> nearest SO(3)
    Var stiefel_polar(Var A);           // 3x2 -> orthonormal polar factor
    Var complete_rotation(Var Q);       // 3x2 -> SO(3) via cross product
    Var frobenius(Var x);               // 1x1
    Var squared_frobenius(Var x);       // 1x1
    Var row_norm_sum(Var rows6);        // 1x1, sum of row norms
    Var dot(Var a, Var b);              // 1x1, sum of elementwise products
    Var mul(Var a, Var b);              // 1x1 * 1x1
    Var div(Var a, Var b);              // 1x1 / 1x1

    const Mat& value(Var v) const { return node(v).val; }
    double scalar(Var v) const;

    /// Reverse pass from a 1x1 root. Gradients of previous backward calls
    /// are discarded.
    void backward(Var root);

    /// Adjoint accumulated by the last backward(); zero matrix if the node
    /// was not reached.
    Mat grad(Var v) const;

    /// Drops all nodes but keeps allocated capacity for reuse.
    void reset();

    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op : std::uint8_t {
        leaf, add, sub, scale, matmul, solve, transpose, reshape, blocks_to_rows,
        center_cols, mul_scalar, block_threshold, shifted_relu, relu,
        rotation_project, stiefel_polar, complete_rotation, frobenius,
        squared_frobenius, row_norm_sum, dot, mul, div,
    };

    struct Node {
        Op op = Op::leaf;
        Var a, b;
        bool rg = false;        // requires grad
        double c = 0.0;         // payload for scale
        Mat val;
        Mat grad;
        bool grad_live = false;
    };

    Var push_leaf(Mat v, bool rg);
    Var push(Op op, Var a, Var b, Mat val, double c = 0.0);
    Node& node(Var v);
    const Node& node(Var v) const;
    Mat& acc(Var v);            // gradient accumulator of an input node
    void log_kink(double margin);
    void backward_node(std::int32_t i);

    std::vector<Node> nodes_;
};

}  // namespace mvnrsfm::diff
