#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mvnrsfm/errors.hpp"
#include "mvnrsfm/geometry.hpp"

namespace mvnrsfm::prior {

/// Learnable parameters of the hierarchical sparse shape prior.
///
/// D[0] is the 3P x B1 shape dictionary; D[l] for l >= 1 maps layer l+1 codes
/// to layer l codes (B_l x B_{l+1}, widths strictly decreasing). The same
/// dictionaries are shared by the encoder (transposed) and the decoder.
/// lambda holds one nonnegative shrinkage threshold per layer. The rotation
/// factorization head is a single affine map from the flattened last-layer
/// block code (6 * B_L entries) to 9 rotation parameters plus B_L code
/// entries, stored as two weight/bias pairs.
struct DictionaryStack {
    int P = 0;
    std::vector<int> widths;               // B_1 .. B_L
    std::vector<Eigen::MatrixXd> D;        // D[0]: 3P x B_1; D[l]: B_l x B_{l+1}
    Eigen::VectorXd lambda;                // L entries, >= 0
    Eigen::MatrixXd rf_rot_w;              // 9 x 6 B_L
    Eigen::VectorXd rf_rot_b;              // 9
    Eigen::MatrixXd rf_code_w;             // B_L x 6 B_L
    Eigen::VectorXd rf_code_b;             // B_L

    int layers() const { return static_cast<int>(widths.size()); }
    int last_width() const { return widths.back(); }

    /// Shape and invariant checks (widths decreasing, lambda >= 0, finite).
    void validate() const;

    /// He-style init: i.i.d. zero-mean entries with variance 2 / fan-in,
    /// lambda = 0.01, zero biases.
    static DictionaryStack random_init(int P, std::vector<int> widths, std::uint64_t seed);
};

/// One layer of block-sparse code: B blocks of 3 x 2 stacked vertically
/// into a (3B) x 2 matrix.
using BlockCodeLayer = Eigen::MatrixXd;

/// All layers of block-sparse code produced by the encoder.
struct BlockCode {
    std::vector<BlockCodeLayer> layers;
};

/// Rotation-invariant nonnegative code vector.
using VectorCode = Eigen::VectorXd;

/// Block layout helpers. rows form: one row of 6 per block, block entry
/// (r, c) at column 3c + r. Used for the flattened RF input and for turning
/// Kronecker-structured products into plain matrix products.
Eigen::MatrixXd blocks_to_rows(const BlockCodeLayer& Psi);
BlockCodeLayer rows_to_blocks(const Eigen::MatrixXd& rows6);
Eigen::VectorXd flatten_code(const BlockCodeLayer& Psi);

/// Group shrinkage: each 3 x 2 block B <- B * max(0, 1 - lambda / ||B||_F),
/// zero when ||B||_F <= lambda. This is the proximal operator of
/// lambda * sum of block Frobenius norms.
BlockCodeLayer block_soft_threshold(const BlockCodeLayer& Psi, double lambda);

/// Unrolled-ISTA encoder: layer 1 applies the reshaped shape dictionary to
/// the centered keypoints, deeper layers apply the (D kron I3)' structure,
/// each followed by block shrinkage.
BlockCode encode_view(const geometry::Keypoints2D& Wc, const DictionaryStack& theta);

struct RotationFactorization {
    Eigen::Matrix3d R;
    VectorCode psi;          // clamped to the nonnegative orthant
    bool degenerate = false; // rotation head produced a rank <= 1 matrix
};

/// Rotation factorization head: splits the last-layer block code into a
/// camera rotation (SVD projection onto SO(3)) and an unrotated nonnegative
/// code. Degenerate rotation parameters throw unless lenient, in which case
/// R = I is returned flagged.
RotationFactorization factorize_rotation(const BlockCodeLayer& PsiL, const DictionaryStack& theta,
                                         bool lenient = false);

/// Elementwise sum across views; order-invariant.
VectorCode pool_codes(const std::vector<VectorCode>& codes);

/// Decoder: psi_{l-1} = max(0, D_l psi_l - lambda_l) down the stack, then
/// S = unvec(D_1 psi_1) as P x 3.
geometry::Shape3D decode_shape(const VectorCode& psiL, const DictionaryStack& theta);

struct ForwardOptions {
    /// Degenerate intermediate quantities (all-zero shape, rank-deficient
    /// rotation head) yield flagged fallbacks instead of throwing. The
    /// training objective requires a finite value everywhere.
    bool lenient = false;
};

struct ViewResult {
    Eigen::Matrix3d R_rf;        // rotation from the factorization head
    geometry::CameraPose onp;    // OnP pose fitted against the decoded shape
    Eigen::Vector2d t_xy;        // centering translation of the raw view
    double reproj = 0.0;         // ||Wc - s* Sc Rxy*||_F for this view
    bool onp_degenerate = false;
    bool rf_degenerate = false;
};

struct Reconstruction {
    geometry::Shape3D S;         // canonical-frame shape, P x 3
    VectorCode pooled;
    std::vector<ViewResult> views;
    double reproj_loss = 0.0;    // mean over views of ViewResult::reproj
};

/// Full multi-view pass: center each view, encode, factorize rotations,
/// sum-pool the invariant codes, decode one canonical shape, and fit
/// per-view OnP poses against it.
Reconstruction forward(const std::vector<geometry::Keypoints2D>& views,
                       const DictionaryStack& theta, const ForwardOptions& opts = {});

}  // namespace mvnrsfm::prior
