#include "flora/training.hpp"

#include <cmath>
#include <stdexcept>

#include "flora/log.hpp"
#include "flora/rng.hpp"

namespace flora {

namespace {

// Sub-stream ids under TrainConfig::seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kLoaderStream = 2;
constexpr std::uint64_t kValidationStream = 3;

Evaluation evaluate_batches(const Model<float>& model, const DatasetIndex& data, const std::vector<std::size_t>& indices,
                            const BatchConfig& cfg, std::size_t epoch);

}  // namespace

template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& probabilities, const Tensor<T>& one_hot) {
    if (probabilities.rank() != 2 || probabilities.shape() != one_hot.shape()) {
        throw std::invalid_argument("cross_entropy expects matching [N, K] tensors, got " +
                                    shape_str(probabilities.shape()) + " and " + shape_str(one_hot.shape()));
    }
    const std::size_t n = probabilities.dim(0), k = probabilities.dim(1);
    if (n == 0) throw std::invalid_argument("cross_entropy of an empty batch");
    LossResult<T> out;
    out.grad_logits = Tensor<T>(probabilities.shape());
    const T inv_n = T{1} / static_cast<T>(n);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t label = k;
        for (std::size_t j = 0; j < k; ++j) {
            const T y = one_hot[i * k + j];
            if (y == T{1}) {
                if (label != k) throw std::invalid_argument("one-hot row " + std::to_string(i) + " has several labels");
                label = j;
            } else if (y != T{0}) {
                throw std::invalid_argument("one-hot row " + std::to_string(i) + " is not 0/1");
            }
            out.grad_logits[i * k + j] = (probabilities[i * k + j] - y) * inv_n;
        }
        if (label == k) throw std::invalid_argument("one-hot row " + std::to_string(i) + " has no label");
        double p = static_cast<double>(probabilities[i * k + label]);
        if (!(p >= kProbabilityFloor)) {
            p = kProbabilityFloor;
            ++out.clamped;
        }
        total -= std::log(p);
    }
    out.loss = total / static_cast<double>(n);
    return out;
}

template LossResult<float> cross_entropy(const Tensor<float>&, const Tensor<float>&);
template LossResult<double> cross_entropy(const Tensor<double>&, const Tensor<double>&);

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(freeze_ratio >= 0.0 && freeze_ratio < 1.0)) {
        throw std::invalid_argument("freeze_ratio must be in [0, 1), got " + std::to_string(freeze_ratio));
    }
    if (workers < 1) throw std::invalid_argument("workers must be >= 1");
    optimizer.validate();
    augment.validate();
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    const auto& o = c.optimizer;
    const auto& a = c.augment;
    return {
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"optimizer",
         {{"kind", std::string(to_string(o.kind))},
          {"learning_rate", o.learning_rate},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"rho", o.rho},
          {"momentum", o.momentum},
          {"epsilon", o.epsilon}}},
        {"freeze_ratio", c.freeze_ratio},
        {"seed", c.seed},
        {"augment",
         {{"rotation_range", a.rotation_range},
          {"width_shift_range", a.width_shift_range},
          {"height_shift_range", a.height_shift_range},
          {"shear_range", a.shear_range},
          {"zoom_range", a.zoom_range}}},
        {"workers", c.workers},
    };
}

TrainConfig train_config_from_json(const nlohmann::json& doc) {
    TrainConfig c;
    c.epochs = doc.at("epochs").get<std::size_t>();
    c.batch_size = doc.at("batch_size").get<std::size_t>();
    const auto& o = doc.at("optimizer");
    c.optimizer.kind = optimizer_from_string(o.at("kind").get<std::string>());
    c.optimizer.learning_rate = o.at("learning_rate").get<double>();
    c.optimizer.beta1 = o.at("beta1").get<double>();
    c.optimizer.beta2 = o.at("beta2").get<double>();
    c.optimizer.rho = o.at("rho").get<double>();
    c.optimizer.momentum = o.at("momentum").get<double>();
    c.optimizer.epsilon = o.at("epsilon").get<double>();
    c.freeze_ratio = doc.at("freeze_ratio").get<double>();
    c.seed = doc.at("seed").get<std::uint64_t>();
    const auto& a = doc.at("augment");
    c.augment.rotation_range = a.at("rotation_range").get<double>();
    c.augment.width_shift_range = a.at("width_shift_range").get<double>();
    c.augment.height_shift_range = a.at("height_shift_range").get<double>();
    c.augment.shear_range = a.at("shear_range").get<double>();
    c.augment.zoom_range = a.at("zoom_range").get<double>();
    c.workers = doc.at("workers").get<std::size_t>();
    c.validate();
    return c;
}

nlohmann::json history_to_json(const std::vector<EpochStats>& history) {
    auto out = nlohmann::json::array();
    for (const auto& e : history) {
        nlohmann::json row = {{"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy}};
        row["val_loss"] = e.val_loss ? nlohmann::json(*e.val_loss) : nlohmann::json(nullptr);
        row["val_accuracy"] = e.val_accuracy ? nlohmann::json(*e.val_accuracy) : nlohmann::json(nullptr);
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<EpochStats> history_from_json(const nlohmann::json& doc) {
    std::vector<EpochStats> out;
    for (const auto& row : doc) {
        EpochStats e;
        e.train_loss = row.at("train_loss").get<double>();
        e.train_accuracy = row.at("train_accuracy").get<double>();
        if (!row.at("val_loss").is_null()) e.val_loss = row.at("val_loss").get<double>();
        if (!row.at("val_accuracy").is_null()) e.val_accuracy = row.at("val_accuracy").get<double>();
        out.push_back(e);
    }
    return out;
}

TrainingDiverged::TrainingDiverged(std::size_t epoch, std::size_t batch, std::string layer)
    : std::runtime_error("non-finite values at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                         ", first in layer '" + layer + "'"),
      epoch_(epoch),
      batch_(batch),
      layer_(std::move(layer)) {}

Model<float> init_model(const ArchDescriptor& desc, std::uint64_t seed) {
    return Model<float>(desc, Rng::derive(seed, kInitStream));
}

namespace {

std::size_t correct_predictions(const Tensor<float>& probs, const Tensor<float>& one_hot) {
    const auto predicted = argmax_rows(probs);
    const auto actual = argmax_rows(one_hot);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == actual[i];
    return correct;
}

std::string first_nonfinite_param(const Model<float>& model) {
    for (std::size_t i = 0; i < model.num_nodes(); ++i) {
        for (const auto& p : model.layer(i).params()) {
            if (!p.values.all_finite()) return model.layer(i).node().name + "/" + p.name;
        }
    }
    return {};
}

}  // namespace

TrainResult train(Model<float> model, const DatasetIndex& data, const std::vector<std::size_t>& train_indices,
                  const std::vector<std::size_t>& val_indices, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    config.validate();
    const ArchDescriptor desc = model.descriptor();
    if (desc.num_classes != data.num_classes()) {
        throw std::invalid_argument("model '" + desc.name + "' has " + std::to_string(desc.num_classes) +
                                    " outputs but the dataset has " + std::to_string(data.num_classes()) + " classes");
    }
    if (train_indices.empty()) throw std::invalid_argument("training set is empty");

    model.apply_freeze(apply_freeze(desc, config.freeze_ratio));
    model.zero_grads();
    const auto params = model.parameters();
    Optimizer<float> optimizer(config.optimizer, params);

    BatchConfig batches;
    batches.batch_size = config.batch_size;
    batches.image_size = desc.input_shape.h;
    batches.seed = Rng::derive(config.seed, kLoaderStream);
    if (!config.augment.is_identity()) batches.augment = config.augment;
    batches.workers = config.workers;
    BatchLoader loader(data, train_indices, batches);

    BatchConfig val_batches = batches;
    val_batches.seed = Rng::derive(config.seed, kValidationStream);
    val_batches.shuffle = false;

    spdlog::info("training {} ({} frozen of {} base nodes) on {} samples, {} batches per epoch", desc.name,
                 model.freeze_plan().frozen_count, desc.base_node_count(), loader.num_samples(),
                 loader.num_batches());

    TrainResult result{std::move(model), {}, 0, {}};
    auto& net = result.model;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double loss_sum = 0;
        std::size_t correct = 0, seen = 0, b = 0;
        loader.for_each_batch(epoch, [&](Batch& batch) {
            const auto probs = net.forward(batch.images, Mode::Train);
            if (!probs.all_finite()) {
                const auto node = net.first_nonfinite_node();
                throw TrainingDiverged(epoch, b, node ? net.layer(*node).node().name : "output");
            }
            const auto ce = cross_entropy(probs, batch.labels);
            if (ce.clamped > 0) {
                auto msg = "epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + ": " +
                           std::to_string(ce.clamped) + " true-class probabilities clamped to 1e-12";
                spdlog::warn("{}", msg);
                result.warnings.push_back(std::move(msg));
            }
            net.backward_from_logits(ce.grad_logits);
            optimizer.step(params);
            const std::size_t n = batch.images.dim(0);
            loss_sum += ce.loss * static_cast<double>(n);
            correct += correct_predictions(probs, batch.labels);
            seen += n;
            ++b;
        });
        if (auto bad = first_nonfinite_param(net); !bad.empty()) {
            throw TrainingDiverged(epoch, b - 1, bad);
        }

        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(seen);
        stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
        if (!val_indices.empty()) {
            const auto val = config.augment.is_identity()
                                 ? evaluate(net, data, val_indices, config.batch_size)
                                 : evaluate_batches(net, data, val_indices, val_batches, epoch);
            stats.val_loss = val.loss;
            stats.val_accuracy = val.metrics.top1_accuracy;
        }
        if (stats.val_loss) {
            spdlog::info("epoch {}/{} loss {:.4f} acc {:.4f} val_loss {:.4f} val_acc {:.4f}", epoch + 1, config.epochs,
                         stats.train_loss, stats.train_accuracy, *stats.val_loss, *stats.val_accuracy);
        } else {
            spdlog::info("epoch {}/{} loss {:.4f} acc {:.4f}", epoch + 1, config.epochs, stats.train_loss,
                         stats.train_accuracy);
        }
        result.history.push_back(stats);
        if (on_epoch) on_epoch(epoch, stats);
    }
    result.steps = optimizer.step_count();
    return result;
}

TrainResult train(const ArchDescriptor& desc, const DatasetIndex& data, const std::vector<std::size_t>& train_indices,
                  const std::vector<std::size_t>& val_indices, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    return train(init_model(desc, config.seed), data, train_indices, val_indices, config, on_epoch);
}

namespace {

Evaluation evaluate_batches(const Model<float>& model, const DatasetIndex& data, const std::vector<std::size_t>& indices,
                            const BatchConfig& cfg, std::size_t epoch) {
    if (indices.empty()) throw std::invalid_argument("evaluation set is empty");
    const std::size_t k = model.descriptor().num_classes;
    if (k != data.num_classes()) {
        throw std::invalid_argument("model has " + std::to_string(k) + " outputs but the dataset has " +
                                    std::to_string(data.num_classes()) + " classes");
    }
    BatchLoader loader(data, indices, cfg);

    Evaluation out;
    out.confusion = ConfusionMatrix(k);
    double loss_sum = 0;
    loader.for_each_batch(epoch, [&](Batch& batch) {
        const auto probs = model.predict(batch.images);
        loss_sum += cross_entropy(probs, batch.labels).loss * static_cast<double>(batch.samples.size());
        const auto predicted = argmax_rows(probs);
        for (std::size_t i = 0; i < batch.samples.size(); ++i) {
            const auto& s = data.samples[batch.samples[i]];
            out.confusion.add(s.label, predicted[i]);
            out.predictions.push_back({s.id, s.label, predicted[i], static_cast<double>(probs[i * k + predicted[i]])});
        }
    });
    out.loss = loss_sum / static_cast<double>(indices.size());
    out.metrics = macro_metrics(out.confusion);
    return out;
}

}  // namespace

Evaluation evaluate(const Model<float>& model, const DatasetIndex& data, const std::vector<std::size_t>& indices,
                    std::size_t batch_size) {
    BatchConfig cfg;
    cfg.batch_size = batch_size;
    cfg.image_size = model.descriptor().input_shape.h;
    cfg.shuffle = false;
    return evaluate_batches(model, data, indices, cfg, 0);
}

Model<float> transfer_base(const Model<float>& source, const ArchDescriptor& desc, std::uint64_t seed) {
    auto model = init_model(desc, seed);
    model.copy_base_from(source);
    return model;
}

TransferResult pretrain_then_finetune(const ArchDescriptor& desc, const DatasetIndex& source, const Split& source_split,
                                      const TrainConfig& source_config, const DatasetIndex& target,
                                      const Split& target_split, const TrainConfig& target_config,
                                      const EpochCallback& on_epoch) {
    const auto source_desc = with_head(desc, source.num_classes(), desc.head);
    auto pre = train(source_desc, source, source_split.train, source_split.validation, source_config, on_epoch);
    const auto target_desc = with_head(desc, target.num_classes(), desc.head);
    auto model = transfer_base(pre.model, target_desc, target_config.seed);
    auto fine = train(std::move(model), target, target_split.train, target_split.validation, target_config, on_epoch);
    return {std::move(pre), std::move(fine)};
}

}  // namespace flora
