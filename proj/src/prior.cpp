#include "mvnrsfm/prior.hpp"
#include <algorithm>

#include <cmath>

#include "mvnrsfm/rng.hpp"

namespace mvnrsfm::prior {

void DictionaryStack::validate() const {
    const int L = layers();
    if (P < 1 || L < 1) throw ShapeError("DictionaryStack: empty stack");
    if (static_cast<int>(D.size()) != L || lambda.size() != L)
        throw ShapeError("DictionaryStack: layer count mismatch");
    for (int l = 0; l + 1 < L; ++l)
        if (widths[l + 1] >= widths[l])
            throw ShapeError("DictionaryStack: widths must strictly decrease");
    if (D[0].rows() != 3 * P || D[0].cols() != widths[0])
        throw ShapeError("DictionaryStack: D1 must be 3P x B1");
    for (int l = 1; l < L; ++l)
        if (D[l].rows() != widths[l - 1] || D[l].cols() != widths[l])
            throw ShapeError("DictionaryStack: dictionary shape mismatch at layer " +
                             std::to_string(l + 1));
    const int BL = last_width();
    if (rf_rot_w.rows() != 9 || rf_rot_w.cols() != 6 * BL || rf_rot_b.size() != 9 ||
        rf_code_w.rows() != BL || rf_code_w.cols() != 6 * BL || rf_code_b.size() != BL)
        throw ShapeError("DictionaryStack: rotation-factorization head shape mismatch");
    for (int l = 0; l < L; ++l) {
        if (!(lambda(l) >= 0.0)) throw InvalidInputError("DictionaryStack: lambda must be >= 0");
        if (!D[l].allFinite()) throw InvalidInputError("DictionaryStack: non-finite dictionary");
    }
    if (!rf_rot_w.allFinite() || !rf_rot_b.allFinite() || !rf_code_w.allFinite() ||
        !rf_code_b.allFinite())
        throw InvalidInputError("DictionaryStack: non-finite rotation-factorization head");
}

DictionaryStack DictionaryStack::random_init(int P, std::vector<int> widths, std::uint64_t seed) {
    if (P < 1 || widths.empty()) throw ShapeError("random_init: need P >= 1 and at least one layer");
    Rng rng(seed, /*stream=*/0x696e6974ULL);  // "init"
    DictionaryStack t;
    t.P = P;
    t.widths = std::move(widths);
    const int L = t.layers();
    t.D.resize(L);
    t.D[0] = rng.gaussian_matrix(3 * P, t.widths[0], std::sqrt(2.0 / (3.0 * P)));
    for (int l = 1; l < L; ++l)
        t.D[l] = rng.gaussian_matrix(t.widths[l - 1], t.widths[l],
                                     std::sqrt(2.0 / t.widths[l - 1]));
    t.lambda = Eigen::VectorXd::Constant(L, 0.01);
    const int BL = t.last_width();
    const double rf_std = std::sqrt(2.0 / (6.0 * BL));
    t.rf_rot_w = rng.gaussian_matrix(9, 6 * BL, rf_std);
    t.rf_rot_b = Eigen::VectorXd::Zero(9);
    t.rf_code_w = rng.gaussian_matrix(BL, 6 * BL, rf_std);
    t.rf_code_b = Eigen::VectorXd::Zero(BL);
    t.validate();
    return t;
}

Eigen::MatrixXd blocks_to_rows(const BlockCodeLayer& Psi) {
    if (Psi.cols() != 2 || Psi.rows() % 3 != 0)
        throw ShapeError("blocks_to_rows: expected (3B) x 2 block code");
    const Eigen::Index B = Psi.rows() / 3;
    Eigen::MatrixXd rows6(B, 6);
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index c = 0; c < 2; ++c)
            for (Eigen::Index r = 0; r < 3; ++r) rows6(b, 3 * c + r) = Psi(3 * b + r, c);
    return rows6;
}

BlockCodeLayer rows_to_blocks(const Eigen::MatrixXd& rows6) {
    if (rows6.cols() != 6) throw ShapeError("rows_to_blocks: expected B x 6");
    const Eigen::Index B = rows6.rows();
    BlockCodeLayer Psi(3 * B, 2);
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index c = 0; c < 2; ++c)
            for (Eigen::Index r = 0; r < 3; ++r) Psi(3 * b + r, c) = rows6(b, 3 * c + r);
    return Psi;
}

Eigen::VectorXd flatten_code(const BlockCodeLayer& Psi) {
    const Eigen::MatrixXd rows6 = blocks_to_rows(Psi);
    return Eigen::Map<const Eigen::VectorXd>(rows6.data(), rows6.size());
}

BlockCodeLayer block_soft_threshold(const BlockCodeLayer& Psi, double lambda) {
    if (Psi.cols() != 2 || Psi.rows() % 3 != 0)
        throw ShapeError("block_soft_threshold: expected (3B) x 2 block code");
    if (!(lambda >= 0.0)) throw InvalidInputError("block_soft_threshold: lambda must be >= 0");
    BlockCodeLayer out = Psi;
    const Eigen::Index B = Psi.rows() / 3;
    for (Eigen::Index b = 0; b < B; ++b) {
        auto block = out.block<3, 2>(3 * b, 0);
        const double n = block.norm();
        block *= (n > lambda) ? (1.0 - lambda / n) : 0.0;
    }
    return out;
}

BlockCode encode_view(const geometry::Keypoints2D& Wc, const DictionaryStack& theta) {
    theta.validate();
    if (Wc.cols() != 2 || Wc.rows() != theta.P)
        throw ShapeError("encode_view: keypoints do not match dictionary P");
    const int L = theta.layers();
    BlockCode code;
    code.layers.resize(L);

    // Layer 1: (D1#)' W with D1# the P x 3B1 column-major reshape of D1.
    Eigen::Map<const Eigen::MatrixXd> Dsharp(theta.D[0].data(), theta.P, 3 * theta.widths[0]);
    code.layers[0] = block_soft_threshold(Dsharp.transpose() * Wc, theta.lambda(0));

    // Deeper layers: (D_l kron I3)' Psi_{l-1}; block b of the product is
    // sum_a D_l(a, b) * block a.
    for (int l = 1; l < L; ++l) {
        const Eigen::MatrixXd& Dl = theta.D[l];
        BlockCodeLayer pre = BlockCodeLayer::Zero(3 * theta.widths[l], 2);
        for (Eigen::Index b = 0; b < Dl.cols(); ++b)
            for (Eigen::Index a = 0; a < Dl.rows(); ++a)
                pre.block<3, 2>(3 * b, 0) += Dl(a, b) * code.layers[l - 1].block<3, 2>(3 * a, 0);
        code.layers[l] = block_soft_threshold(pre, theta.lambda(l));
    }
    return code;
}

RotationFactorization factorize_rotation(const BlockCodeLayer& PsiL, const DictionaryStack& theta,
                                         bool lenient) {
    if (!PsiL.allFinite()) throw InvalidInputError("factorize_rotation: non-finite code");
    if (PsiL.rows() != 3 * theta.last_width() || PsiL.cols() != 2)
        throw ShapeError("factorize_rotation: code does not match last layer width");
    const Eigen::VectorXd x = flatten_code(PsiL);
    const Eigen::VectorXd m = theta.rf_rot_w * x + theta.rf_rot_b;
    const Eigen::VectorXd raw = theta.rf_code_w * x + theta.rf_code_b;

    RotationFactorization out;
    out.psi = raw.cwiseMax(0.0);
    const Eigen::Matrix3d M = Eigen::Map<const Eigen::Matrix3d>(m.data());
    try {
        out.R = geometry::nearest_rotation(M);
    } catch (const DegenerateInputError&) {
        if (!lenient) throw;
        out.R.setIdentity();
        out.degenerate = true;
    }
    return out;
}

VectorCode pool_codes(const std::vector<VectorCode>& codes) {
    if (codes.empty()) throw ShapeError("pool_codes: no codes");
    for (const auto& c : codes)
        if (c.size() != codes[0].size()) throw ShapeError("pool_codes: length mismatch");
    if (codes.size() == 1) return codes[0];

    // Per-coordinate summation in a canonical (sorted) order, so the pooled
    // code is bitwise invariant under permutations of the views.
    VectorCode out(codes[0].size());
    std::vector<double> vals(codes.size());
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        for (std::size_t k = 0; k < codes.size(); ++k) vals[k] = codes[k](i);
        std::sort(vals.begin(), vals.end());
        double acc = 0.0;
        for (double v : vals) acc += v;
        out(i) = acc;
    }
    return out;
}

geometry::Shape3D decode_shape(const VectorCode& psiL, const DictionaryStack& theta) {
    theta.validate();
    const int L = theta.layers();
    if (psiL.size() != theta.last_width())
        throw ShapeError("decode_shape: code does not match last layer width");
    if (psiL.minCoeff() < 0.0)
        throw InvalidInputError("decode_shape: code must be nonnegative");

    VectorCode psi = psiL;
    for (int l = L - 1; l >= 1; --l)
        psi = ((theta.D[l] * psi).array() - theta.lambda(l)).cwiseMax(0.0).matrix();

    const Eigen::VectorXd s = theta.D[0] * psi;
    return Eigen::Map<const Eigen::MatrixXd>(s.data(), theta.P, 3);
}

Reconstruction forward(const std::vector<geometry::Keypoints2D>& views,
                       const DictionaryStack& theta, const ForwardOptions& opts) {
    if (views.empty()) throw ShapeError("forward: need at least one view");
    const int K = static_cast<int>(views.size());

    Reconstruction rec;
    rec.views.resize(K);
    std::vector<VectorCode> codes(K);
    for (int k = 0; k < K; ++k) {
        auto [Wc, t] = geometry::center(views[k]);
        rec.views[k].t_xy = t;
        const BlockCode bc = encode_view(Wc, theta);
        const RotationFactorization rf = factorize_rotation(bc.layers.back(), theta, opts.lenient);
        rec.views[k].R_rf = rf.R;
        rec.views[k].rf_degenerate = rf.degenerate;
        codes[k] = rf.psi;
    }
    rec.pooled = pool_codes(codes);
    rec.S = decode_shape(rec.pooled, theta);

    const geometry::Shape3D Sc = rec.S.rowwise() - rec.S.colwise().mean();
    double total = 0.0;
    for (int k = 0; k < K; ++k) {
        const auto [Wc, t] = geometry::center(views[k]);
        const auto onp = geometry::solve_onp(Wc, Sc, {.lenient = opts.lenient});
        rec.views[k].onp = onp.pose;
        rec.views[k].onp_degenerate = onp.degenerate;
        const geometry::Keypoints2D proj = onp.pose.s * Sc * onp.pose.R.leftCols<2>();
        rec.views[k].reproj = (Wc - proj).norm();
        total += rec.views[k].reproj;
    }
    rec.reproj_loss = total / K;
    return rec;
}

}  // namespace mvnrsfm::prior
