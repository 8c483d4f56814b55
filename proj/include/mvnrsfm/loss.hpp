#pragma once

#include <span>
#include <vector>

#include "mvnrsfm/prior.hpp"
#include "mvnrsfm/tape.hpp"

namespace mvnrsfm::diff {

/// One multi-view training instance: the K views of a single deforming
/// object sample.
using Instance = std::vector<geometry::Keypoints2D>;

struct LossWeights {
    double w_sparse = 1.0;
    double w_dict = 1.0;
    double beta = 0.1;        // weight of ||R_rf - R_onp||^2 supervision
    bool onp_frozen = false;  // treat OnP poses as constants per step
};

struct LossBreakdown {
    double total = 0.0;
    double reproj = 0.0;     // mean_k ||Wc - s* Sc Rxy*||_F
    double sparsity = 0.0;   // mean_k sum_l lambda_l * block-norm sum
    double dict = 0.0;       // mean_k sum_{l>=2} ||Psi_{l-1} - D_l Psi_l||_F
    double rot = 0.0;        // mean_k ||R_rf - R_onp||_F^2

    LossBreakdown& operator+=(const LossBreakdown& o);
    LossBreakdown& operator/=(double d);
};

/// Parameter leaves of one tape build.
struct ThetaVars {
    std::vector<Var> D;
    std::vector<Var> lambda;  // 1x1 leaves
    Var rf_rot_w, rf_rot_b, rf_code_w, rf_code_b;
};

ThetaVars make_theta_vars(Tape& tape, const prior::DictionaryStack& theta);

struct InstanceTerms {
    Var reproj, sparsity, dict, rot, total;
};

/// Builds the objective graph for one instance (terms averaged over its
/// views). Degenerate intermediates (collapsed shape, rank-deficient
/// rotation head) are replaced by constant fallbacks so the objective stays
/// finite for any parameter value; gradients through such branches are the
/// zero subgradient.
InstanceTerms build_instance_loss(Tape& tape, const ThetaVars& tv, const Instance& views,
                                  const LossWeights& weights);

/// Objective averaged over instances and views. Throws
/// NumericalFailureError naming the offending term if any term is
/// non-finite.
LossBreakdown loss_total(std::span<const Instance> instances,
                         const prior::DictionaryStack& theta, const LossWeights& weights);

/// Mean-loss value and flat reverse-mode gradient over the given instances.
/// threads > 1 partitions the instances into contiguous per-thread chunks
/// whose partial sums are combined in thread order, so results are
/// deterministic for a fixed thread count.
LossBreakdown loss_gradient(std::span<const Instance* const> instances,
                            const prior::DictionaryStack& theta, const LossWeights& weights,
                            Eigen::VectorXd& grad_out, int threads = 1);

LossBreakdown loss_gradient(std::span<const Instance> instances,
                            const prior::DictionaryStack& theta, const LossWeights& weights,
                            Eigen::VectorXd& grad_out, int threads = 1);

}  // namespace mvnrsfm::diff
