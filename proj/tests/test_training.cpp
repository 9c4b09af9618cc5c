#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "flora/checkpoint.hpp"
#include "flora/log.hpp"
#include "flora/rng.hpp"
#include "flora/training.hpp"

using namespace flora;

namespace {

const bool kQuiet = [] {
    spdlog::set_level(spdlog::level::warn);
    return true;
}();

std::vector<std::size_t> all_indices(const DatasetIndex& data) {
    std::vector<std::size_t> out(data.samples.size());
    std::iota(out.begin(), out.end(), 0);
    return out;
}

TrainConfig sgd_config(std::size_t epochs, double lr, std::uint64_t seed) {
    TrainConfig c;
    c.epochs = epochs;
    c.optimizer = OptimizerConfig::defaults(OptimizerKind::Sgd);
    c.optimizer.learning_rate = lr;
    c.seed = seed;
    return c;
}

std::vector<Tensor<float>> snapshot(const Model<float>& m) {
    std::vector<Tensor<float>> out;
    for (const auto* p : m.parameters()) out.push_back(p->values);
    return out;
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

std::string checkpoint_bytes(const Checkpoint& c) {
    std::ostringstream out;
    save_checkpoint(out, c);
    return out.str();
}

// Softmax cross-entropy written from the definition, for finite differences.
double reference_loss(const std::vector<double>& z, const std::vector<std::size_t>& labels, std::size_t k) {
    const std::size_t n = labels.size();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[i * k + j]);
        total += -(z[i * k + labels[i]] - std::log(denom));
    }
    return total / static_cast<double>(n);
}

}  // namespace

TEST(CrossEntropy, PerfectPredictionIsZero) {
    Tensor<double> p({2, 3}, std::vector<double>{0, 1, 0, 1, 0, 0});
    const auto r = cross_entropy(p, p);
    EXPECT_EQ(r.loss, 0.0);
    EXPECT_EQ(r.clamped, 0u);
    for (double g : r.grad_logits.data()) EXPECT_EQ(g, 0.0);
}

TEST(CrossEntropy, UniformSixteenClasses) {
    Tensor<double> p({3, 16}, 1.0 / 16);
    Tensor<double> y({3, 16});
    for (std::size_t i = 0; i < 3; ++i) y[i * 16 + 5 * i] = 1;
    EXPECT_NEAR(cross_entropy(p, y).loss, std::log(16.0), 1e-12);
    EXPECT_NEAR(cross_entropy(p, y).loss, 2.7726, 5e-5);
}

TEST(CrossEntropy, FusedGradientMatchesFiniteDifferences) {
    Rng rng(404);
    constexpr std::size_t n = 4, k = 3;
    constexpr double h = 1e-5;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> z(n * k);
        for (auto& v : z) v = rng.uniform(-3, 3);
        std::vector<std::size_t> labels(n);
        Tensor<double> y({n, k});
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = rng.below(k);
            y[i * k + labels[i]] = 1;
        }
        const auto probs = softmax_rows(Tensor<double>({n, k}, z));
        const auto r = cross_entropy(probs, y);
        EXPECT_NEAR(r.loss, reference_loss(z, labels, k), 1e-12);

        double diff = 0, na = 0, nn = 0;
        for (std::size_t e = 0; e < z.size(); ++e) {
            auto zp = z, zm = z;
            zp[e] += h;
            zm[e] -= h;
            const double numeric = (reference_loss(zp, labels, k) - reference_loss(zm, labels, k)) / (2 * h);
            diff += std::pow(r.grad_logits[e] - numeric, 2);
            na += std::pow(r.grad_logits[e], 2);
            nn += numeric * numeric;
        }
        const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
        ASSERT_LT(rel, 1e-6) << "trial " << trial;
    }
}

TEST(CrossEntropy, ZeroProbabilityIsClampedAndReported) {
    Tensor<float> p({2, 2}, std::vector<float>{1, 0, 0.5f, 0.5f});
    Tensor<float> y({2, 2}, std::vector<float>{0, 1, 1, 0});
    const auto r = cross_entropy(p, y);
    EXPECT_EQ(r.clamped, 1u);
    EXPECT_NEAR(r.loss, (-std::log(1e-12) - std::log(0.5)) / 2, 1e-9);
    EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(CrossEntropy, RejectsBadTargets) {
    Tensor<float> p({1, 3}, 1.0f / 3);
    EXPECT_THROW(cross_entropy(p, Tensor<float>({1, 3})), std::invalid_argument);
    EXPECT_THROW(cross_entropy(p, Tensor<float>({1, 3}, std::vector<float>{1, 1, 0})), std::invalid_argument);
    EXPECT_THROW(cross_entropy(p, Tensor<float>({1, 2}, std::vector<float>{1, 0})), std::invalid_argument);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.epochs = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.freeze_ratio = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(TrainConfig, JsonRoundTrip) {
    TrainConfig c = sgd_config(7, 0.05, 99);
    c.optimizer = OptimizerConfig::defaults(OptimizerKind::Nadam);
    c.freeze_ratio = 0.25;
    c.augment = AugmentConfig::paper_defaults();
    c.workers = 3;
    const auto back = train_config_from_json(train_config_to_json(c));
    EXPECT_EQ(train_config_to_json(back), train_config_to_json(c));
    EXPECT_EQ(back.optimizer.kind, OptimizerKind::Nadam);
    EXPECT_EQ(back.augment, c.augment);
}

TEST(Train, OneEpochOfHundredSamplesTakesFourSteps) {
    const auto data = synth_dataset(4, 25, 32, 3);
    const auto desc = build_architecture("mini_mobilenet", 32, 4, HeadKind::Gap);
    const auto r = train(desc, data, all_indices(data), {}, sgd_config(1, 0.01, 0));
    EXPECT_EQ(r.steps, 4u);
    EXPECT_EQ(r.history.size(), 1u);
    EXPECT_FALSE(r.history[0].val_loss.has_value());
}

TEST(Train, OverfitsThirtyTwoSamples) {
    const auto data = synth_dataset(4, 8, 32, 1);
    const auto desc = build_architecture("mini_mobilenet", 32, 4, HeadKind::Gap);
    std::size_t first_perfect = 0;
    const auto r = train(desc, data, all_indices(data), {}, sgd_config(200, 0.05, 1),
                         [&](std::size_t epoch, const EpochStats& s) {
                             if (first_perfect == 0 && s.train_accuracy == 1.0) first_perfect = epoch + 1;
                         });
    ASSERT_EQ(r.history.size(), 200u);
    EXPECT_GT(first_perfect, 0u);
    EXPECT_EQ(r.history.back().train_accuracy, 1.0);
    EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
    EXPECT_EQ(evaluate(r.model, data, all_indices(data)).metrics.top1_accuracy, 1.0);
}

TEST(Train, HistoryAndInferenceModeValidation) {
    const auto data = synth_dataset(3, 10, 32, 5);
    const auto split = split_dataset(data, 5);
    const auto desc = build_architecture("mini_densenet", 32, 3, HeadKind::Gap);
    const auto r = train(desc, data, split.train, split.validation, sgd_config(3, 0.02, 2));
    ASSERT_EQ(r.history.size(), 3u);
    for (const auto& e : r.history) {
        ASSERT_TRUE(e.val_loss.has_value());
        ASSERT_TRUE(e.val_accuracy.has_value());
    }
    // The last validation entry is an inference-mode pass over the final weights.
    const auto ev = evaluate(r.model, data, split.validation, 32);
    EXPECT_EQ(*r.history.back().val_loss, ev.loss);
    EXPECT_EQ(*r.history.back().val_accuracy, ev.metrics.top1_accuracy);
}

TEST(Train, ValidationIsAugmentedWithTraining) {
    const auto data = synth_dataset(3, 10, 32, 5);
    const auto split = split_dataset(data, 5);
    const auto desc = build_architecture("mini_mobilenet", 32, 3, HeadKind::Gap);
    TrainConfig cfg = sgd_config(2, 0.02, 2);
    cfg.augment = {30, 0.2, 0.2, 10, 0.2};
    const auto a = train(desc, data, split.train, split.validation, cfg);
    const auto b = train(desc, data, split.train, split.validation, cfg);
    EXPECT_EQ(*a.history.back().val_loss, *b.history.back().val_loss);

    // Same validation images through the same model, augmented as a loader for the last epoch would.
    BatchConfig bc;
    bc.batch_size = cfg.batch_size;
    bc.image_size = 32;
    bc.seed = Rng::derive(cfg.seed, 3);
    bc.shuffle = false;
    bc.augment = cfg.augment;
    BatchLoader loader(data, split.validation, bc);
    double loss = 0;
    loader.for_each_batch(1, [&](Batch& batch) {
        loss += cross_entropy(a.model.predict(batch.images), batch.labels).loss * static_cast<double>(batch.samples.size());
    });
    EXPECT_NEAR(*a.history.back().val_loss, loss / static_cast<double>(split.validation.size()), 1e-12);
    EXPECT_NE(*a.history.back().val_loss, evaluate(a.model, data, split.validation).loss);
}

TEST(Train, FirstBatchLossNearLogK) {
    for (const auto* arch : {"mini_mobilenet", "mini_densenet", "mini_xception"}) {
        for (std::size_t k : {4, 8, 16}) {
            double sum = 0;
            constexpr int seeds = 8;
            for (int seed = 0; seed < seeds; ++seed) {
                const auto data = synth_dataset(k, 4, 32, static_cast<std::uint64_t>(seed));
                BatchConfig bc;
                bc.batch_size = data.samples.size();
                BatchLoader loader(data, all_indices(data), bc);
                auto batch = loader.batch(0, 0);
                auto model = init_model(build_architecture(arch, 32, k, HeadKind::Gap), static_cast<std::uint64_t>(seed));
                sum += cross_entropy(model.forward(batch.images, Mode::Train), batch.labels).loss;
            }
            const double mean = sum / seeds;
            EXPECT_NEAR(mean / std::log(static_cast<double>(k)), 1.0, 0.2) << arch << " K=" << k;
        }
    }
}

TEST(Train, FreezeContract) {
    const auto data = synth_dataset(3, 6, 32, 8);
    for (const auto* arch : {"mini_mobilenet", "mini_densenet", "mini_xception"}) {
        for (double ratio : {0.25, 0.5, 0.75}) {
            const auto desc = build_architecture(arch, 32, 3, HeadKind::Gap);
            auto model = init_model(desc, 4);
            const auto before = snapshot(model);
            TrainConfig cfg = sgd_config(2, 0.05, 4);
            cfg.freeze_ratio = ratio;
            cfg.batch_size = 8;
            const auto r = train(std::move(model), data, all_indices(data), {}, cfg);
            const auto plan = apply_freeze(desc, ratio);
            ASSERT_EQ(r.model.freeze_plan().frozen_count, plan.frozen_count);
            std::size_t p = 0, changed_trainable = 0;
            for (std::size_t node = 0; node < r.model.num_nodes(); ++node) {
                for (const auto& param : r.model.layer(node).params()) {
                    if (plan.is_frozen(node)) {
                        EXPECT_TRUE(bit_equal(param.values, before[p])) << arch << " " << ratio << " " << param.name;
                        EXPECT_FALSE(param.trainable);
                    } else if (param.trainable && !bit_equal(param.values, before[p])) {
                        ++changed_trainable;
                    }
                    ++p;
                }
            }
            EXPECT_GT(changed_trainable, 0u) << arch << " " << ratio;
        }
    }
}

TEST(Train, SeededDeterminism) {
    const auto data = synth_dataset(3, 10, 32, 2);
    const auto split = split_dataset(data, 2);
    const auto desc = build_architecture("mini_mobilenet", 32, 3, HeadKind::Gap);
    TrainConfig cfg = sgd_config(3, 0.05, 11);
    cfg.batch_size = 8;
    cfg.augment = AugmentConfig::paper_defaults();
    auto run = [&](std::size_t workers, std::uint64_t seed) {
        TrainConfig c = cfg;
        c.workers = workers;
        c.seed = seed;
        return checkpoint_bytes(make_checkpoint(train(desc, data, split.train, split.validation, c), data.class_names, cfg));
    };
    const auto a = run(1, 11);
    EXPECT_EQ(a, run(1, 11));
    EXPECT_EQ(a, run(3, 11));
    EXPECT_NE(a, run(1, 12));
}

TEST(Train, NonFiniteWeightsAbortWithDiagnostics) {
    const auto data = synth_dataset(2, 4, 32, 1);
    const auto desc = build_architecture("mini_mobilenet", 32, 2, HeadKind::Gap);
    auto model = init_model(desc, 0);
    model.layer(1).params()[0].values[0] = std::numeric_limits<float>::quiet_NaN();
    const std::string name = model.layer(1).node().name;
    try {
        train(std::move(model), data, all_indices(data), {}, sgd_config(2, 0.01, 0));
        FAIL() << "expected TrainingDiverged";
    } catch (const TrainingDiverged& e) {
        EXPECT_EQ(e.epoch(), 0u);
        EXPECT_EQ(e.batch(), 0u);
        EXPECT_EQ(e.layer(), name);
        EXPECT_NE(std::string(e.what()).find(name), std::string::npos);
    }
}

TEST(Train, DivergingLearningRateIsReported) {
    const auto data = synth_dataset(2, 4, 32, 1);
    const auto desc = build_architecture("mini_mobilenet", 32, 2, HeadKind::Gap);
    EXPECT_THROW(train(desc, data, all_indices(data), {}, sgd_config(50, 1e30, 0)), TrainingDiverged);
}

TEST(Train, RejectsMismatchedClassCount) {
    const auto data = synth_dataset(3, 4, 32, 1);
    const auto desc = build_architecture("mini_mobilenet", 32, 4, HeadKind::Gap);
    EXPECT_THROW(train(desc, data, all_indices(data), {}, sgd_config(1, 0.01, 0)), std::invalid_argument);
    EXPECT_THROW(train(build_architecture("mini_mobilenet", 32, 3, HeadKind::Gap), data, {}, {}, sgd_config(1, 0.01, 0)),
                 std::invalid_argument);
}

TEST(Evaluate, PredictionsAndConfusionAgree) {
    const auto data = synth_dataset(3, 10, 32, 6);
    const auto model = init_model(build_architecture("mini_mobilenet", 32, 3, HeadKind::Gap), 6);
    const auto idx = all_indices(data);
    const auto ev = evaluate(model, data, idx, 7);
    ASSERT_EQ(ev.predictions.size(), idx.size());
    EXPECT_EQ(ev.confusion.total(), idx.size());
    std::uint64_t correct = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        EXPECT_EQ(ev.predictions[i].sample_id, data.samples[idx[i]].id);
        EXPECT_EQ(ev.predictions[i].actual, data.samples[idx[i]].label);
        EXPECT_GT(ev.predictions[i].confidence, 0.0);
        EXPECT_LE(ev.predictions[i].confidence, 1.0);
        correct += ev.predictions[i].actual == ev.predictions[i].predicted;
    }
    EXPECT_EQ(correct, ev.confusion.trace());
    // Batch size does not change inference results.
    const auto ev1 = evaluate(model, data, idx, 1);
    EXPECT_NEAR(ev1.loss, ev.loss, 1e-6);
    EXPECT_EQ(ev1.confusion.trace(), ev.confusion.trace());
}

TEST(Transfer, FineTuneReachesFullTrainAccuracy) {
    const auto source = synth_dataset(4, 10, 32, 1);
    const auto target = synth_dataset(3, 10, 32, 77);
    const auto desc = build_architecture("mini_mobilenet", 32, 4, HeadKind::Gap);
    const auto r = pretrain_then_finetune(desc, source, split_dataset(source, 1), sgd_config(15, 0.05, 1), target,
                                          split_dataset(target, 2), sgd_config(100, 0.05, 2));
    EXPECT_EQ(r.source.model.descriptor().num_classes, 4u);
    EXPECT_EQ(r.target.model.descriptor().num_classes, 3u);
    const auto& dense = r.target.model.layer(r.target.model.num_nodes() - 1);
    EXPECT_EQ(dense.params()[0].values.dim(1), 3u);
    EXPECT_EQ(r.target.history.back().train_accuracy, 1.0);
}

TEST(Transfer, FrozenPrefixMatchesSource) {
    const auto source = synth_dataset(4, 10, 32, 1);
    const auto target = synth_dataset(3, 10, 32, 77);
    const auto desc = build_architecture("mini_mobilenet", 32, 4, HeadKind::Gap);
    TrainConfig fine = sgd_config(5, 0.05, 2);
    fine.freeze_ratio = 0.75;
    const auto r = pretrain_then_finetune(desc, source, split_dataset(source, 1), sgd_config(3, 0.05, 1), target,
                                          split_dataset(target, 2), fine);
    const auto plan = apply_freeze(r.target.model.descriptor(), 0.75);
    ASSERT_EQ(r.target.model.freeze_plan().frozen_count, plan.frozen_count);
    std::size_t checked = 0, moved = 0;
    for (std::size_t node = 0; node < r.target.model.descriptor().base_node_count(); ++node) {
        const auto& a = r.source.model.layer(node).params();
        const auto& b = r.target.model.layer(node).params();
        for (std::size_t k = 0; k < a.size(); ++k) {
            if (plan.is_frozen(node)) {
                EXPECT_TRUE(bit_equal(a[k].values, b[k].values)) << r.target.model.layer(node).node().name;
                ++checked;
            } else if (!bit_equal(a[k].values, b[k].values)) {
                ++moved;
            }
        }
    }
    EXPECT_GT(checked, 0u);
    EXPECT_GT(moved, 0u);
}

TEST(Transfer, BaseMismatchIsRejected) {
    const auto src = init_model(build_architecture("mini_xception", 32, 4, HeadKind::Gap), 0);
    EXPECT_THROW(transfer_base(src, build_architecture("mini_mobilenet", 32, 3, HeadKind::Gap), 0),
                 std::invalid_argument);
    EXPECT_THROW(transfer_base(src, build_architecture("mini_xception", 48, 3, HeadKind::Gap), 0),
                 std::invalid_argument);
    EXPECT_NO_THROW(transfer_base(src, build_architecture("mini_xception", 32, 9, HeadKind::Flatten), 0));
}

namespace {

Checkpoint trained_mini(std::uint64_t seed) {
    const auto data = synth_dataset(3, 6, 32, seed);
    const auto desc = build_architecture("mini_xception", 32, 3, HeadKind::Gap);
    TrainConfig cfg = sgd_config(2, 0.05, seed);
    cfg.batch_size = 6;
    cfg.freeze_ratio = 0.25;
    return make_checkpoint(train(desc, data, all_indices(data), {}, cfg), data.class_names, cfg);
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto ckpt = trained_mini(3);
    const std::string bytes = checkpoint_bytes(ckpt);
    ASSERT_EQ(bytes.substr(0, 8), "FLORCKPT");
    std::istringstream in(bytes);
    const auto back = load_checkpoint(in);
    EXPECT_EQ(back.model.descriptor(), ckpt.model.descriptor());
    EXPECT_EQ(back.class_names, ckpt.class_names);
    EXPECT_EQ(back.model.param_count(), ckpt.model.param_count());
    EXPECT_EQ(back.model.freeze_plan().frozen_count, ckpt.model.freeze_plan().frozen_count);
    ASSERT_TRUE(back.train_config.has_value());
    EXPECT_EQ(train_config_to_json(*back.train_config), train_config_to_json(*ckpt.train_config));
    ASSERT_EQ(back.history.size(), ckpt.history.size());
    EXPECT_EQ(back.history[1].train_loss, ckpt.history[1].train_loss);
    EXPECT_EQ(checkpoint_bytes(back), bytes);

    Rng rng(10);
    for (int i = 0; i < 10; ++i) {
        Tensor<float> x({2, 32, 32, 3});
        for (auto& v : x.vec()) v = static_cast<float>(rng.uniform());
        EXPECT_TRUE(bit_equal(ckpt.model.predict(x), back.model.predict(x))) << i;
    }
}

TEST(Checkpoint, FileRoundTrip) {
    const auto ckpt = trained_mini(4);
    const auto path = std::filesystem::temp_directory_path() / "flora_test.ckpt";
    save_checkpoint(path, ckpt);
    const auto back = load_checkpoint(path);
    EXPECT_EQ(checkpoint_bytes(back), checkpoint_bytes(ckpt));
    std::filesystem::remove(path);
    EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST(Checkpoint, StructuredErrors) {
    const std::string good = checkpoint_bytes(trained_mini(5));
    auto load = [](const std::string& bytes) {
        std::istringstream in(bytes);
        return load_checkpoint(in);
    };
    auto code_of = [&](const std::string& bytes) {
        try {
            load(bytes);
        } catch (const CheckpointError& e) {
            return e.code();
        }
        ADD_FAILURE() << "expected CheckpointError";
        return CheckpointError::Code::Io;
    };
    using Code = CheckpointError::Code;

    std::string bad = good;
    bad[0] = 'X';
    EXPECT_EQ(code_of(bad), Code::BadMagic);
    bad = good;
    bad[8] = 2;
    EXPECT_EQ(code_of(bad), Code::BadVersion);
    EXPECT_EQ(code_of(good.substr(0, 5)), Code::Truncated);
    EXPECT_EQ(code_of(good.substr(0, 40)), Code::Truncated);
    EXPECT_EQ(code_of(good.substr(0, good.size() - 3)), Code::Truncated);
    EXPECT_EQ(code_of(good + "x"), Code::TrailingData);

    std::uint64_t header_len = 0;
    std::memcpy(&header_len, good.data() + 12, 8);
    const std::size_t blobs = 20 + header_len;

    // Tampered first record: one extent changed.
    bad = good;
    bad[blobs + 8] = static_cast<char>(bad[blobs + 8] + 7);
    try {
        load(bad);
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError& e) {
        EXPECT_EQ(e.parameter(), "block1_conv1/kernel");
        EXPECT_NE(std::string(e.what()).find("block1_conv1/kernel"), std::string::npos);
    }

    // Header count that disagrees with the rebuilt model.
    auto header = nlohmann::json::parse(good.substr(20, header_len));
    header["param_counts"]["total"] = header["param_counts"]["total"].get<std::uint64_t>() + 1;
    auto rebuild = [&](const nlohmann::json& h) {
        const std::string text = h.dump();
        std::string out = good.substr(0, 12);
        const std::uint64_t len = text.size();
        out.append(reinterpret_cast<const char*>(&len), 8);
        return out + text + good.substr(blobs);
    };
    EXPECT_EQ(code_of(rebuild(header)), Code::CountMismatch);

    header = nlohmann::json::parse(good.substr(20, header_len));
    header["tensors"].erase(header["tensors"].size() - 1);
    EXPECT_EQ(code_of(rebuild(header)), Code::CountMismatch);

    header = nlohmann::json::parse(good.substr(20, header_len));
    header["class_names"].push_back("extra");
    EXPECT_EQ(code_of(rebuild(header)), Code::BadHeader);

    header = nlohmann::json::parse(good.substr(20, header_len));
    header.erase("descriptor");
    EXPECT_EQ(code_of(rebuild(header)), Code::BadHeader);
}

TEST(Checkpoint, FullSizeCountsReverified) {
    auto model = init_model(build_architecture("mobilenet", 224, 16, HeadKind::Gap), 0);
    model.apply_freeze(apply_freeze(model.descriptor(), 0.5));
    std::vector<std::string> names;
    for (int i = 0; i < 16; ++i) names.push_back("class_" + std::to_string(i));
    Checkpoint ckpt{std::move(model), names, {224, 1.0 / 255}, std::nullopt, {}};
    std::stringstream buf;
    save_checkpoint(buf, ckpt);
    const auto header = read_checkpoint_header(buf);
    EXPECT_EQ(header["param_counts"]["total"].get<std::uint64_t>(), 3'245'264u);
    EXPECT_EQ(header["param_counts"]["non_trainable"].get<std::uint64_t>(), 291'008u);
    buf.seekg(0);
    const auto back = load_checkpoint(buf);
    EXPECT_EQ(back.model.param_count().total, 3'245'264u);
    EXPECT_EQ(back.model.param_count().non_trainable, 291'008u);
}
