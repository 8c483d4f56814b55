#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mvnrsfm/dataset.hpp"
#include "mvnrsfm/loss.hpp"
#include "mvnrsfm/optim.hpp"

namespace mvnrsfm::diff {

struct TrainConfig {
    std::vector<int> widths{128, 64, 32, 16, 8};
    LossWeights weights{};
    AdamConfig adam{};
    int epochs = 200;
    int batch = 32;
    /// Per-batch instance evaluation runs on this many threads with
    /// order-fixed gradient reduction; results are deterministic for a fixed
    /// value, which is recorded in the resolved run config.
    int threads = 1;
    /// Compute PA-MPJPE against ground truth every this many epochs (0: never).
    int metrics_every = 1;
};

struct EpochRecord {
    int epoch = 0;           // 1-based
    LossBreakdown loss;      // mean instance loss over the epoch
    double pa_mpjpe = -1.0;  // -1 when not computed
    double wall_ms = 0.0;
};

struct TrainResult {
    prior::DictionaryStack theta;
    AdamState adam;
    std::vector<EpochRecord> log;
    bool diverged = false;
    int epochs_done = 0;
};

/// Joint fitting of the parameter stack over the dataset: deterministic
/// per-epoch shuffling, minibatches of whole instances (all K views of an
/// instance stay together), Adam updates with lambda clamping. On a
/// non-finite loss or gradient the run aborts and returns the last epoch-end
/// state flagged as diverged.
TrainResult train(const data::MultiViewDataset& dataset, const TrainConfig& cfg,
                  std::uint64_t seed);

/// Continue a run from epoch `start_epoch` (0-based count of finished
/// epochs) with the saved optimizer state. With identical dataset, config
/// and seed this reproduces an uninterrupted run exactly.
TrainResult train_resume(const data::MultiViewDataset& dataset, const TrainConfig& cfg,
                         std::uint64_t seed, const prior::DictionaryStack& theta0,
                         const AdamState& adam0, int start_epoch);

/// PA-MPJPE of the prior's reconstructions against dataset ground truth
/// (mean over instances). Used for the per-epoch training log and by the
/// reconstruct/eval commands so the two agree exactly.
double dataset_pa_mpjpe(const data::MultiViewDataset& dataset,
                        const prior::DictionaryStack& theta);

}  // namespace mvnrsfm::diff
