#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "mvnrsfm/prior.hpp"

namespace mvnrsfm::diff {

/// Stable index map between a DictionaryStack and its flat parameter vector.
/// Order: D_1 .. D_L (column-major), lambda_1 .. lambda_L, rotation head
/// weights/bias, code head weights/bias.
struct ParamLayout {
    struct Span {
        Eigen::Index offset = 0;
        Eigen::Index rows = 0;
        Eigen::Index cols = 0;
        Eigen::Index size() const { return rows * cols; }
    };

    int P = 0;
    std::vector<int> widths;
    std::vector<Span> dicts;
    Span lambdas, rf_rot_w, rf_rot_b, rf_code_w, rf_code_b;
    Eigen::Index total = 0;

    static ParamLayout of(const prior::DictionaryStack& theta);
    bool matches(const prior::DictionaryStack& theta) const;
};

Eigen::VectorXd flatten(const prior::DictionaryStack& theta);

/// Inverse of flatten; flatten(unflatten(layout, v)) == v exactly.
prior::DictionaryStack unflatten(const ParamLayout& layout, const Eigen::VectorXd& v);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Eigen::VectorXd m, v;
    std::int64_t step = 0;
    AdamConfig cfg;

    static AdamState init(Eigen::Index n, const AdamConfig& cfg);
};

/// Standard bias-corrected Adam update in place, followed by clamping the
/// lambda span of the parameter vector to >= 0. Non-finite gradients throw
/// NumericalFailureError and leave params and state untouched.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state,
               const ParamLayout& layout);

}  // namespace mvnrsfm::diff
