#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flora/architectures.hpp"
#include "flora/data.hpp"
#include "flora/metrics.hpp"
#include "flora/model.hpp"
#include "flora/optimizers.hpp"

namespace flora {

/// Probabilities below this are clamped before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

template <typename T>
struct LossResult {
    double loss = 0;
    Tensor<T> grad_logits;     // (p - y) / N, w.r.t. the pre-softmax logits
    std::size_t clamped = 0;   // rows whose true-class probability hit the floor
};

/// Mean categorical cross-entropy of softmax outputs against one-hot targets.
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& probabilities, const Tensor<T>& one_hot);

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    OptimizerConfig optimizer;
    double freeze_ratio = 0.0;
    std::uint64_t seed = 0;
    AugmentConfig augment;  // identity ranges disable augmentation
    std::size_t workers = 1;

    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& doc);

struct EpochStats {
    double train_loss = 0;
    double train_accuracy = 0;
    std::optional<double> val_loss;
    std::optional<double> val_accuracy;
};

nlohmann::json history_to_json(const std::vector<EpochStats>& history);
std::vector<EpochStats> history_from_json(const nlohmann::json& doc);

/// Raised when a forward pass produces NaN or Inf.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t epoch, std::size_t batch, std::string layer);
    std::size_t epoch() const { return epoch_; }
    std::size_t batch() const { return batch_; }
    const std::string& layer() const { return layer_; }

private:
    std::size_t epoch_, batch_;
    std::string layer_;
};

struct TrainResult {
    Model<float> model;
    std::vector<EpochStats> history;
    std::uint64_t steps = 0;
    std::vector<std::string> warnings;
};

using EpochCallback = std::function<void(std::size_t epoch, const EpochStats&)>;

/// Trains `model` with a fresh optimizer. The freeze plan for config.freeze_ratio is applied
/// first; frozen parameters are never written. Validation runs in inference mode.
TrainResult train(Model<float> model, const DatasetIndex& data, const std::vector<std::size_t>& train_indices,
                  const std::vector<std::size_t>& val_indices, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Builds and initializes a model from `desc` (seeded by config.seed), then trains it.
TrainResult train(const ArchDescriptor& desc, const DatasetIndex& data, const std::vector<std::size_t>& train_indices,
                  const std::vector<std::size_t>& val_indices, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Fresh model for `desc` with the same initialization train() uses for `seed`.
Model<float> init_model(const ArchDescriptor& desc, std::uint64_t seed);

struct Evaluation {
    ConfusionMatrix confusion{2};
    std::vector<Prediction> predictions;
    double loss = 0;
    MacroMetrics metrics;
};

/// Inference-mode pass over `indices` without augmentation. During training with augmentation
/// enabled, validation batches are augmented from their own stream instead.
Evaluation evaluate(const Model<float>& model, const DatasetIndex& data, const std::vector<std::size_t>& indices,
                    std::size_t batch_size = 32);

/// New model for `desc` whose base is copied from `source`; the head is freshly initialized
/// from `seed`. Throws if `desc` and `source` have different bases.
Model<float> transfer_base(const Model<float>& source, const ArchDescriptor& desc, std::uint64_t seed);

struct TransferResult {
    TrainResult source;
    TrainResult target;
};

/// Trains `desc` on the source data with no freezing, then rebuilds the head for the target
/// classes, copies the base, freezes per target_config.freeze_ratio, and trains on the target.
TransferResult pretrain_then_finetune(const ArchDescriptor& desc, const DatasetIndex& source, const Split& source_split,
                                      const TrainConfig& source_config, const DatasetIndex& target,
                                      const Split& target_split, const TrainConfig& target_config,
                                      const EpochCallback& on_epoch = {});

}  // namespace flora
