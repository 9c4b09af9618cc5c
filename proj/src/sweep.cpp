#include "flora/sweep.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>

#include <fmt/format.h>

#include "flora/log.hpp"

namespace flora {

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

}  // namespace

SweepResult run_sweep(const SweepGrid& grid, const DatasetIndex& data, const Split& split, const SweepOptions& options) {
    if (grid.architectures.empty()) throw std::invalid_argument("sweep grid has no architectures");
    if (grid.optimizers.empty()) throw std::invalid_argument("sweep grid has no optimizers");
    if (grid.freeze_ratios.empty()) throw std::invalid_argument("sweep grid has no freeze ratios");
    if (grid.heads.empty()) throw std::invalid_argument("sweep grid has no heads");
    if (split.train.empty() || split.test.empty()) throw std::invalid_argument("sweep needs train and test samples");
    if (options.pretrain && !options.pretrain->data) throw std::invalid_argument("sweep pretrain source has no data");

    bool warned_freeze = false;
    std::map<std::string, std::optional<Model<float>>> bases;
    std::map<std::string, std::string> base_errors;

    SweepResult result;
    for (const auto& arch : grid.architectures) {
        if (options.pretrain && !bases.count(arch) && !base_errors.count(arch)) {
            const auto& pre = *options.pretrain;
            try {
                spdlog::info("sweep: pretraining {} base on {} source classes", arch, pre.data->num_classes());
                const auto desc = build_architecture(arch, options.image_size, pre.data->num_classes(), HeadKind::Gap);
                bases[arch] = train(desc, *pre.data, pre.split.train, pre.split.validation, pre.config).model;
            } catch (const std::exception& e) {
                base_errors[arch] = std::string("pretraining failed: ") + e.what();
                spdlog::error("sweep: {}: {}", arch, base_errors[arch]);
            }
        }
        for (auto kind : grid.optimizers) {
            for (double ratio : grid.freeze_ratios) {
                for (auto head : grid.heads) {
                    SweepRow row;
                    row.architecture = arch;
                    row.optimizer = kind;
                    row.freeze_ratio = ratio;
                    row.head = head;
                    try {
                        if (auto it = base_errors.find(arch); it != base_errors.end()) throw std::runtime_error(it->second);
                        TrainConfig cfg = options.train;
                        cfg.optimizer = OptimizerConfig::defaults(kind);
                        if (options.learning_rate) cfg.optimizer.learning_rate = *options.learning_rate;
                        cfg.freeze_ratio = ratio;
                        const auto desc = build_architecture(arch, options.image_size, data.num_classes(), head);
                        if (ratio > 0 && !options.pretrain && !warned_freeze) {
                            spdlog::warn("sweep: freezing randomly initialized layers (no pretraining source given)");
                            warned_freeze = true;
                        }
                        spdlog::info("sweep: {} {} freeze {} head {}", arch, to_string(kind), ratio, to_string(head));
                        auto model = options.pretrain ? transfer_base(*bases.at(arch), desc, cfg.seed)
                                                      : init_model(desc, cfg.seed);
                        const auto trained = train(std::move(model), data, split.train, split.validation, cfg);
                        const auto ev = evaluate(trained.model, data, split.test, cfg.batch_size);
                        row.ok = true;
                        row.accuracy = ev.metrics.top1_accuracy;
                        row.loss = ev.loss;
                        row.precision = ev.metrics.precision;
                        row.recall = ev.metrics.recall;
                        row.f1 = ev.metrics.f1;
                    } catch (const std::exception& e) {
                        row.error = e.what();
                        spdlog::error("sweep: cell {} {} {} {} failed: {}", arch, to_string(kind), ratio,
                                      to_string(head), row.error);
                    }
                    result.rows.push_back(std::move(row));
                }
            }
        }
    }
    return result;
}

void write_sweep_csv(std::ostream& out, const SweepResult& result) {
    out << kSweepCsvHeader << '\n';
    for (const auto& r : result.rows) {
        out << csv_field(r.architecture) << ',' << to_string(r.optimizer) << ',' << fmt::format("{:.2f}", r.freeze_ratio)
            << ',' << to_string(r.head) << ',' << (r.ok ? "ok" : "failed") << ',';
        if (r.ok) {
            out << fmt::format("{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}", r.accuracy, r.loss, r.precision, r.recall, r.f1);
        } else {
            out << ",,,,";
        }
        out << ',' << csv_field(r.error) << '\n';
    }
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_sweep_csv(out, result);
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string format_sweep_table(const SweepResult& result) {
    std::size_t arch_w = 12;
    for (const auto& r : result.rows) arch_w = std::max(arch_w, r.architecture.size());
    std::string out = fmt::format("{:<{}}  {:<9}  {:>6}  {:<7}  {:>8}  {:>8}  {:>9}  {:>8}  {:>8}\n", "architecture",
                                  arch_w, "optimizer", "freeze", "head", "accuracy", "loss", "precision", "recall", "f1");
    std::vector<std::string> errors;
    for (const auto& r : result.rows) {
        out += fmt::format("{:<{}}  {:<9}  {:>5.0f}%  {:<7}  ", r.architecture, arch_w, to_string(r.optimizer),
                           r.freeze_ratio * 100, to_string(r.head));
        if (r.ok) {
            out += fmt::format("{:>8.4f}  {:>8.4f}  {:>9.4f}  {:>8.4f}  {:>8.4f}\n", r.accuracy, r.loss, r.precision,
                               r.recall, r.f1);
        } else {
            out += fmt::format("{:>8}\n", "failed");
            errors.push_back(fmt::format("{} {} {:.0f}% {}: {}", r.architecture, to_string(r.optimizer),
                                         r.freeze_ratio * 100, to_string(r.head), r.error));
        }
    }
    for (const auto& e : errors) out += "failed " + e + "\n";
    return out;
}

}  // namespace flora
