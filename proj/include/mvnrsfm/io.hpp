#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mvnrsfm/dataset.hpp"
#include "mvnrsfm/optim.hpp"
#include "mvnrsfm/prior.hpp"

namespace mvnrsfm::io {

/// All containers share one directory format: a JSON manifest declaring
/// magic, version, dtype ("f64-little-endian") and the arrays, plus one
/// contiguous binary blob per array (column-major per matrix, instance-major
/// slice order). Round trips are bit-exact.
inline constexpr int kFormatVersion = 1;

void save_dataset(const data::MultiViewDataset& d, const std::filesystem::path& dir);
data::MultiViewDataset load_dataset(const std::filesystem::path& dir);

struct CheckpointBundle {
    prior::DictionaryStack theta;
    std::optional<diff::AdamState> adam;
    int epochs_done = 0;
    std::string config_json;  // resolved training config snapshot, free-form
};

void save_checkpoint(const CheckpointBundle& ckpt, const std::filesystem::path& dir);
CheckpointBundle load_checkpoint(const std::filesystem::path& dir);

/// Reconstruction output: canonical shapes plus per-view poses.
struct Predictions {
    int N = 0, K = 0, P = 0;
    std::vector<Eigen::MatrixXd> S;                    // [n], P x 3
    std::vector<std::vector<Eigen::Matrix3d>> R_rf;    // [n][k]
    std::vector<std::vector<Eigen::Matrix3d>> R_onp;   // [n][k]
    std::vector<std::vector<double>> scale;            // [n][k]
    std::vector<std::vector<Eigen::Vector2d>> t_xy;    // [n][k]
};

void save_predictions(const Predictions& p, const std::filesystem::path& dir);
Predictions load_predictions(const std::filesystem::path& dir);

}  // namespace mvnrsfm::io
