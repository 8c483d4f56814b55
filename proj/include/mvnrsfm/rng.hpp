#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

namespace mvnrsfm {

/// Deterministic random source. All distributions are implemented on top of
/// the raw mt19937_64 stream instead of <random> distribution classes, whose
/// output is implementation-defined; this pins results to the seed across
/// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(mix(seed)) {}

    /// Independent substream: same seed + different stream id gives an
    /// unrelated sequence. Used to decouple e.g. rig layout from instance
    /// deformations so one can be extended without disturbing the other.
    Rng(std::uint64_t seed, std::uint64_t stream)
        : gen_(mix(mix(seed) ^ (stream + 0x9e3779b97f4a7c15ULL))) {}

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, unbiased.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return v % n;
    }

    /// Standard normal via Box-Muller.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index c = 0; c < cols; ++c)
            for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = stddev * gaussian();
        return m;
    }

    Eigen::VectorXd gaussian_vector(Eigen::Index n, double stddev = 1.0) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = stddev * gaussian();
        return v;
    }

    /// Uniform direction on the unit sphere.
    Eigen::Vector3d unit_vector() {
        Eigen::Vector3d v;
        double n;
        do {
            v << gaussian(), gaussian(), gaussian();
            n = v.norm();
        } while (n < 1e-12);
        return v / n;
    }

    /// Uniform rotation: normalized 4-Gaussian quaternion.
    Eigen::Matrix3d rotation() {
        Eigen::Vector4d q;
        double n;
        do {
            q << gaussian(), gaussian(), gaussian(), gaussian();
            n = q.norm();
        } while (n < 1e-12);
        q /= n;
        return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).toRotationMatrix();
    }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(i))]);
    }

private:
    // splitmix64 finalizer; decorrelates nearby seeds.
    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mvnrsfm
