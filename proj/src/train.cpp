#include "mvnrsfm/train.hpp"

#include <chrono>
#include <cmath>

#include "mvnrsfm/metrics.hpp"
#include "mvnrsfm/rng.hpp"

namespace mvnrsfm::diff {

namespace {

constexpr std::uint64_t kInitStream = 0x7468657461ULL;     // parameter init
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;    // epoch shuffles

std::vector<int> epoch_order(int n, std::uint64_t seed, int epoch) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed ^ kShuffleStream, static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    return order;
}

}  // namespace

double dataset_pa_mpjpe(const data::MultiViewDataset& dataset,
                        const prior::DictionaryStack& theta) {
    if (!dataset.has_gt()) throw InvalidInputError("dataset_pa_mpjpe: dataset has no ground truth");
    double sum = 0.0;
    for (int n = 0; n < dataset.N; ++n) {
        const auto rec = prior::forward(dataset.W[n], theta, {.lenient = true});
        sum += metrics::pa_mpjpe(rec.S, dataset.gt[n]);
    }
    return sum / dataset.N;
}

static TrainResult run_epochs(const data::MultiViewDataset& dataset, const TrainConfig& cfg,
                              std::uint64_t seed, prior::DictionaryStack theta, AdamState adam,
                              int start_epoch) {
    dataset.validate();
    if (dataset.N < 1) throw ShapeError("train: empty dataset");
    if (cfg.batch < 1 || cfg.epochs < 0) throw InvalidInputError("train: bad batch/epoch counts");

    const ParamLayout layout = ParamLayout::of(theta);
    Eigen::VectorXd params = flatten(theta);
    Eigen::VectorXd grad(layout.total);

    TrainResult out;
    out.epochs_done = start_epoch;

    // Last state that produced finite numbers, restored on divergence.
    Eigen::VectorXd good_params = params;
    AdamState good_adam = adam;
    int good_epoch = start_epoch;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<int> order = epoch_order(dataset.N, seed, epoch);

        LossBreakdown epoch_terms;  // accumulated as mean instance loss
        bool blew_up = false;

        for (int b0 = 0; b0 < dataset.N && !blew_up; b0 += cfg.batch) {
            const int b1 = std::min(b0 + cfg.batch, dataset.N);
            std::vector<const Instance*> batch;
            batch.reserve(b1 - b0);
            for (int i = b0; i < b1; ++i) batch.push_back(&dataset.W[order[i]]);

            try {
                LossBreakdown lb =
                    loss_gradient(std::span<const Instance* const>(batch), theta,
                                  cfg.weights, grad, cfg.threads);
                adam_step(params, grad, adam, layout);
                theta = unflatten(layout, params);
                epoch_terms += (lb /= static_cast<double>(dataset.N) / (b1 - b0));
            } catch (const NumericalFailureError&) {
                blew_up = true;
            }
        }

        if (blew_up) {
            out.theta = unflatten(layout, good_params);
            out.adam = good_adam;
            out.diverged = true;
            out.epochs_done = good_epoch;
            return out;
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.loss = epoch_terms;
        if (cfg.metrics_every > 0 && dataset.has_gt() &&
            ((epoch + 1) % cfg.metrics_every == 0 || epoch + 1 == cfg.epochs))
            rec.pa_mpjpe = dataset_pa_mpjpe(dataset, theta);
        rec.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0).count();
        out.log.push_back(rec);

        good_params = params;
        good_adam = adam;
        good_epoch = epoch + 1;
    }

    out.theta = unflatten(layout, params);
    out.adam = adam;
    out.epochs_done = cfg.epochs;
    return out;
}

TrainResult train(const data::MultiViewDataset& dataset, const TrainConfig& cfg,
                  std::uint64_t seed) {
    auto theta = prior::DictionaryStack::random_init(dataset.P, cfg.widths, seed ^ kInitStream);
    AdamState adam = AdamState::init(ParamLayout::of(theta).total, cfg.adam);
    return run_epochs(dataset, cfg, seed, std::move(theta), std::move(adam), 0);
}

TrainResult train_resume(const data::MultiViewDataset& dataset, const TrainConfig& cfg,
                         std::uint64_t seed, const prior::DictionaryStack& theta0,
                         const AdamState& adam0, int start_epoch) {
    if (theta0.P != dataset.P)
        throw ConfigMismatchError("train_resume: checkpoint P does not match dataset");
    if (theta0.widths != cfg.widths)
        throw ConfigMismatchError("train_resume: checkpoint widths do not match config");
    return run_epochs(dataset, cfg, seed, theta0, adam0, start_epoch);
}

}  // namespace mvnrsfm::diff
