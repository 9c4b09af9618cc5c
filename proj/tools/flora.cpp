#include <csignal>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "flora/checkpoint.hpp"
#include "flora/log.hpp"
#include "flora/service.hpp"
#include "flora/sweep.hpp"
#include "flora/training.hpp"

using namespace flora;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Flag validation that CLI11 cannot express; reported as a usage error.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string grouped(std::uint64_t n) {
    std::string digits = std::to_string(n);
    for (int i = static_cast<int>(digits.size()) - 3; i > 0; i -= 3) digits.insert(static_cast<std::size_t>(i), ",");
    return digits;
}

std::string join(const std::vector<std::string>& items, std::string_view sep = ", ") {
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : std::string(sep)) + s;
    return out;
}

void print_config(const std::string& verb, const json& config) {
    std::cout << "config " << verb << " " << config.dump() << "\n" << std::flush;
}

std::vector<std::size_t> all_indices(const DatasetIndex& data) {
    std::vector<std::size_t> out(data.samples.size());
    std::iota(out.begin(), out.end(), 0);
    return out;
}

DatasetIndex load_data(const std::string& spec, std::uint64_t seed) {
    if (auto synth = parse_synth_spec(spec)) {
        const auto [classes, per_class, size] = *synth;
        return synth_dataset(classes, per_class, size, seed);
    }
    if (spec.rfind("synth:", 0) == 0) throw UsageError("bad synthetic data spec '" + spec + "', expected synth:CxNxS");
    return scan_dataset(spec);
}

// Stratified split when every class is large enough, otherwise all samples train.
Split split_or_all(const DatasetIndex& data, std::uint64_t seed, bool require_test) {
    try {
        return split_dataset(data, seed);
    } catch (const std::invalid_argument& e) {
        if (require_test) throw;
        spdlog::warn("{}; training on all {} samples without validation", e.what(), data.samples.size());
        return Split{all_indices(data), {}, {}};
    }
}

OptimizerKind parse_optimizer(const std::string& name) {
    const auto& names = optimizer_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
        throw UsageError("unknown optimizer '" + name + "'; valid optimizers: " + join(names));
    }
    return optimizer_from_string(name);
}

void check_architecture(const std::string& name) {
    const auto& names = architecture_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
        throw UsageError("unknown architecture '" + name + "'; valid architectures: " + join(names));
    }
}

HeadKind parse_head(const std::string& name) {
    if (name != "gap" && name != "flatten") throw UsageError("unknown head '" + name + "'; valid heads: gap, flatten");
    return head_from_string(name);
}

struct TrainFlags {
    std::string arch = "mini_mobilenet";
    std::string data;
    std::string optimizer = "sgd";
    std::optional<double> lr;
    double freeze = 0;
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    std::string head = "gap";
    std::size_t image_size = 0;
    bool augment = false;
    std::size_t workers = 1;
    std::string pretrain;
    std::size_t pretrain_epochs = 10;
    std::string out = "model.ckpt";
    std::string history;
};

int run_train(const TrainFlags& f) {
    check_architecture(f.arch);
    const auto head = parse_head(f.head);
    TrainConfig cfg;
    cfg.epochs = f.epochs;
    cfg.batch_size = f.batch_size;
    cfg.optimizer = OptimizerConfig::defaults(parse_optimizer(f.optimizer));
    if (f.lr) cfg.optimizer.learning_rate = *f.lr;
    cfg.freeze_ratio = f.freeze;
    cfg.seed = f.seed;
    cfg.workers = f.workers;
    if (f.augment) cfg.augment = AugmentConfig::paper_defaults();
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const std::size_t size = f.image_size ? f.image_size : default_input_size(f.arch);

    print_config("train", {{"arch", f.arch},
                           {"head", f.head},
                           {"image_size", size},
                           {"data", f.data},
                           {"pretrain", f.pretrain.empty() ? json(nullptr) : json(f.pretrain)},
                           {"pretrain_epochs", f.pretrain.empty() ? json(nullptr) : json(f.pretrain_epochs)},
                           {"train", train_config_to_json(cfg)},
                           {"out", f.out},
                           {"history", f.history.empty() ? json(nullptr) : json(f.history)}});

    const auto data = load_data(f.data, f.seed);
    const auto split = split_or_all(data, f.seed, false);
    const auto desc = build_architecture(f.arch, size, data.num_classes(), head);

    TrainResult result = [&] {
        if (f.pretrain.empty()) return train(desc, data, split.train, split.validation, cfg);
        const auto source = load_data(f.pretrain, f.seed + 1);
        const auto source_split = split_or_all(source, f.seed, false);
        TrainConfig source_cfg = cfg;
        source_cfg.epochs = f.pretrain_epochs;
        source_cfg.freeze_ratio = 0;
        const auto source_desc = build_architecture(f.arch, size, source.num_classes(), head);
        return pretrain_then_finetune(source_desc, source, source_split, source_cfg, data, split, cfg).target;
    }();

    const auto& last = result.history.back();
    std::cout << fmt::format("trained {} steps; final train loss {:.4f} accuracy {:.4f}", result.steps, last.train_loss,
                             last.train_accuracy);
    if (last.val_accuracy) std::cout << fmt::format("; validation loss {:.4f} accuracy {:.4f}", *last.val_loss, *last.val_accuracy);
    std::cout << "\n";

    if (!f.history.empty()) {
        std::ofstream h(f.history);
        if (!h) throw std::runtime_error("cannot write " + f.history);
        h << history_to_json(result.history).dump(2) << "\n";
    }
    const auto ckpt = make_checkpoint(std::move(result), data.class_names, cfg);
    save_checkpoint(f.out, ckpt);
    std::cout << "checkpoint written to " << f.out << "\n";
    return kExitOk;
}

struct SweepFlags {
    std::vector<std::string> archs{"mini_mobilenet", "mini_densenet", "mini_xception"};
    std::vector<std::string> optimizers{"all"};
    std::vector<double> freezes{0};
    std::vector<std::string> heads{"gap"};
    std::string data;
    std::string out_table = "sweep.csv";
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    std::optional<double> lr;
    std::size_t image_size = 32;
    std::string pretrain;
    std::size_t pretrain_epochs = 10;
};

int run_sweep_verb(const SweepFlags& f) {
    SweepGrid grid;
    for (const auto& a : f.archs) check_architecture(a);
    grid.architectures = f.archs;
    for (const auto& o : f.optimizers) {
        if (o == "all") {
            for (const auto& n : optimizer_names()) grid.optimizers.push_back(optimizer_from_string(n));
        } else {
            grid.optimizers.push_back(parse_optimizer(o));
        }
    }
    grid.freeze_ratios = f.freezes;
    for (double r : f.freezes) {
        if (r < 0 || r >= 1) throw UsageError(fmt::format("freeze ratio {} outside [0, 1)", r));
    }
    grid.heads.clear();
    for (const auto& h : f.heads) grid.heads.push_back(parse_head(h));

    SweepOptions opts;
    opts.train.epochs = f.epochs;
    opts.train.batch_size = f.batch_size;
    opts.train.seed = f.seed;
    opts.learning_rate = f.lr;
    opts.image_size = f.image_size;

    std::vector<std::string> opt_names;
    for (auto k : grid.optimizers) opt_names.emplace_back(to_string(k));
    print_config("sweep", {{"archs", grid.architectures},
                           {"optimizers", opt_names},
                           {"freezes", grid.freeze_ratios},
                           {"heads", f.heads},
                           {"data", f.data},
                           {"image_size", f.image_size},
                           {"learning_rate", f.lr ? json(*f.lr) : json("optimizer default")},
                           {"train", train_config_to_json(opts.train)},
                           {"pretrain", f.pretrain.empty() ? json(nullptr) : json(f.pretrain)},
                           {"pretrain_epochs", f.pretrain.empty() ? json(nullptr) : json(f.pretrain_epochs)},
                           {"out_table", f.out_table}});

    const auto data = load_data(f.data, f.seed);
    const auto split = split_or_all(data, f.seed, true);
    std::optional<DatasetIndex> source;
    if (!f.pretrain.empty()) {
        source = load_data(f.pretrain, f.seed + 1);
        TrainConfig pre = opts.train;
        pre.epochs = f.pretrain_epochs;
        opts.pretrain = SweepPretrain{&*source, split_or_all(*source, f.seed, false), pre};
    }
    const auto result = run_sweep(grid, data, split, opts);
    write_sweep_csv(std::filesystem::path(f.out_table), result);
    std::cout << format_sweep_table(result);
    std::cout << "table written to " << f.out_table << "\n";
    const bool any_ok = std::any_of(result.rows.begin(), result.rows.end(), [](const SweepRow& r) { return r.ok; });
    return any_ok ? kExitOk : kExitRuntime;
}

struct EvalFlags {
    std::string ckpt;
    std::string data;
    std::uint64_t seed = 0;
    std::size_t batch_size = 32;
    std::string dump_misclassified;
    std::string out;
};

int run_eval(const EvalFlags& f) {
    print_config("eval", {{"ckpt", f.ckpt},
                          {"data", f.data},
                          {"seed", f.seed},
                          {"batch_size", f.batch_size},
                          {"dump_misclassified", f.dump_misclassified.empty() ? json(nullptr) : json(f.dump_misclassified)},
                          {"out", f.out.empty() ? json(nullptr) : json(f.out)}});
    const auto ckpt = load_checkpoint(std::filesystem::path(f.ckpt));
    const auto data = load_data(f.data, f.seed);
    if (data.class_names != ckpt.class_names) {
        throw std::runtime_error("dataset classes [" + join(data.class_names) + "] do not match the checkpoint's [" +
                                 join(ckpt.class_names) + "]");
    }
    if (data.samples.front().image && data.image(0).height != ckpt.preprocess.input_size) {
        spdlog::info("images are resized to {}x{}", ckpt.preprocess.input_size, ckpt.preprocess.input_size);
    }
    const auto ev = evaluate(ckpt.model, data, all_indices(data), f.batch_size);
    std::cout << fmt::format("samples {}  loss {:.4f}\n", data.samples.size(), ev.loss);
    std::cout << format_report(ev.metrics, ev.confusion, data.class_names);
    for (const auto& w : ev.metrics.warnings) spdlog::warn("{}", w);
    if (!f.dump_misclassified.empty()) {
        const auto rows = dump_misclassified(ev.predictions, data.class_names);
        write_misclassified(rows, f.dump_misclassified);
        std::cout << rows.size() << " misclassified samples written to " << f.dump_misclassified << "\n";
    }
    if (!f.out.empty()) {
        const auto& m = ev.metrics;
        std::vector<std::vector<std::uint64_t>> grid(ev.confusion.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            for (std::size_t j = 0; j < grid.size(); ++j) grid[i].push_back(ev.confusion.at(i, j));
        }
        const json doc{{"samples", data.samples.size()},
                       {"loss", ev.loss},
                       {"accuracy_eq1", m.accuracy_eq1},
                       {"specificity", m.specificity},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"error_rate", m.error_rate},
                       {"f1", m.f1},
                       {"top1_accuracy", m.top1_accuracy},
                       {"class_names", data.class_names},
                       {"confusion", grid}};
        std::ofstream out(f.out);
        if (!out) throw std::runtime_error("cannot write " + f.out);
        out << doc.dump(2) << "\n";
    }
    return kExitOk;
}

struct ParamcountFlags {
    std::string arch;
    std::string head = "gap";
    std::size_t classes = 16;
    double freeze = 0;
    std::size_t input_size = 0;
    std::string dump_descriptor;
};

int run_paramcount(const ParamcountFlags& f) {
    check_architecture(f.arch);
    const auto head = parse_head(f.head);
    if (f.freeze < 0 || f.freeze >= 1) throw UsageError(fmt::format("freeze ratio {} outside [0, 1)", f.freeze));
    const std::size_t size = f.input_size ? f.input_size : default_input_size(f.arch);
    print_config("paramcount", {{"arch", f.arch},
                                {"head", f.head},
                                {"classes", f.classes},
                                {"freeze", f.freeze},
                                {"input_size", size},
                                {"dump_descriptor", f.dump_descriptor.empty() ? json(nullptr) : json(f.dump_descriptor)}});
    const auto desc = build_architecture(f.arch, size, f.classes, head);
    const auto plan = apply_freeze(desc, f.freeze);
    const auto counts = count_parameters(desc, plan);
    std::cout << fmt::format("architecture   {}\n", desc.name);
    std::cout << fmt::format("input          {}x{}x{}\n", desc.input_shape.h, desc.input_shape.w, desc.input_shape.c);
    std::cout << fmt::format("head           {} + dense({})\n", to_string(head), f.classes);
    std::cout << fmt::format("layers         {}\n", count_layers(desc));
    std::cout << fmt::format("frozen layers  {} ({:.0f}%)\n", plan.frozen_count, f.freeze * 100);
    std::cout << fmt::format("total          {}\n", grouped(counts.total));
    std::cout << fmt::format("trainable      {}\n", grouped(counts.trainable));
    std::cout << fmt::format("non-trainable  {}\n", grouped(counts.non_trainable));
    if (f.arch == "xception" && head == HeadKind::Flatten) {
        const auto other = count_parameters(build_architecture(f.arch, size == 299 ? 224 : 299, f.classes, head));
        std::cout << fmt::format(
            "note           the flatten head depends on the input size; xception at {} gives {} and at {} gives {}. "
            "The published flatten-head total 22,467,128 corresponds to 224 input, not 299.\n",
            size, grouped(counts.total), size == 299 ? 224 : 299, grouped(other.total));
    }
    if (!f.dump_descriptor.empty()) {
        std::ofstream out(f.dump_descriptor);
        if (!out) throw std::runtime_error("cannot write " + f.dump_descriptor);
        out << descriptor_to_json(desc).dump(2) << "\n";
        std::cout << "descriptor written to " << f.dump_descriptor << "\n";
    }
    return kExitOk;
}

InferenceServer* g_server = nullptr;

extern "C" void handle_stop_signal(int) {
    if (g_server) g_server->stop();
}

struct ServeFlags {
    std::string ckpt;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t max_upload_mb = 32;
};

int run_serve(const ServeFlags& f) {
    print_config("serve", {{"ckpt", f.ckpt}, {"host", f.host}, {"port", f.port}, {"max_upload_mb", f.max_upload_mb}});
    auto handle = std::make_shared<const ModelHandle>(ModelHandle::load(f.ckpt));
    ServerOptions opts;
    opts.host = f.host;
    opts.port = f.port;
    opts.max_upload_bytes = f.max_upload_mb << 20;
    InferenceServer server(handle, opts);
    const int port = server.bind();
    std::cout << "listening on http://" << f.host << ":" << port << "\n" << std::flush;
    g_server = &server;
    std::signal(SIGINT, handle_stop_signal);
    std::signal(SIGTERM, handle_stop_signal);
    server.run();
    g_server = nullptr;
    return kExitOk;
}

struct BenchFlags {
    std::string ckpt;
    std::size_t runs = 100;
    std::size_t warmup = 10;
    std::uint64_t seed = 0;
    std::string out;
};

int run_bench(const BenchFlags& f) {
    if (f.runs < 1) throw UsageError("--runs must be at least 1");
    print_config("bench", {{"ckpt", f.ckpt},
                           {"runs", f.runs},
                           {"warmup", f.warmup},
                           {"seed", f.seed},
                           {"out", f.out.empty() ? json(nullptr) : json(f.out)}});
    const auto handle = ModelHandle::load(f.ckpt);
    const auto report = benchmark(handle, f.runs, f.warmup, f.seed);
    const auto host = host_info();
    std::cout << format_benchmark(report, host, handle.descriptor().name);
    if (!f.out.empty()) {
        auto doc = to_json(report);
        doc["samples_ms"] = report.samples_ms;
        doc["model"] = handle.descriptor().name;
        doc["device"] = {{"name", host.device}, {"cpu", host.cpu}, {"os", host.os}, {"threads", host.threads}};
        std::ofstream out(f.out);
        if (!out) throw std::runtime_error("cannot write " + f.out);
        out << doc.dump(2) << "\n";
    }
    return kExitOk;
}

struct SynthFlags {
    std::size_t classes = 4;
    std::size_t per_class = 8;
    std::size_t size = 32;
    std::uint64_t seed = 0;
    std::string out_dir;
};

int run_synth(const SynthFlags& f) {
    print_config("synth", {{"classes", f.classes},
                           {"per_class", f.per_class},
                           {"size", f.size},
                           {"seed", f.seed},
                           {"out_dir", f.out_dir}});
    DatasetIndex data;
    try {
        data = synth_dataset(f.classes, f.per_class, f.size, f.seed);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    write_dataset_pngs(data, f.out_dir);
    std::cout << data.samples.size() << " images in " << data.num_classes() << " classes written to " << f.out_dir
              << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    configure_logging();

    CLI::App app{"flora: flower classification with mobile-scale CNNs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "flora 1.0.0");

    const auto data_help = "dataset directory (one subdirectory per class) or synth:CxNxS";

    TrainFlags tf;
    auto* train_cmd = app.add_subcommand("train", "train one model and write a checkpoint");
    train_cmd->add_option("--arch", tf.arch, "architecture: " + join(architecture_names()))->capture_default_str();
    train_cmd->add_option("--data", tf.data, data_help)->required();
    train_cmd->add_option("--optimizer", tf.optimizer, "optimizer: " + join(optimizer_names()))->capture_default_str();
    train_cmd->add_option("--lr", tf.lr, "learning rate (default: the optimizer's default)");
    train_cmd->add_option("--freeze", tf.freeze, "fraction of base layers frozen from the input side")->capture_default_str();
    train_cmd->add_option("--epochs", tf.epochs, "training epochs")->capture_default_str();
    train_cmd->add_option("--batch-size", tf.batch_size, "batch size")->capture_default_str();
    train_cmd->add_option("--seed", tf.seed, "seed for initialization, shuffling, splitting and synthetic data")->capture_default_str();
    train_cmd->add_option("--head", tf.head, "head: gap or flatten")->capture_default_str();
    train_cmd->add_option("--image-size", tf.image_size, "input size (default: 32 for minis, 224 or 299 for full-size)");
    train_cmd->add_flag("--augment", tf.augment, "online augmentation: rotation 0.4, shifts 0.2/0.3, shear 0.2, zoom 0.2");
    train_cmd->add_option("--workers", tf.workers, "batch preparation threads")->capture_default_str();
    train_cmd->add_option("--pretrain", tf.pretrain, "source dataset to pretrain the base on before fine-tuning");
    train_cmd->add_option("--pretrain-epochs", tf.pretrain_epochs, "epochs on the pretraining source")->capture_default_str();
    train_cmd->add_option("--out", tf.out, "checkpoint path")->capture_default_str();
    train_cmd->add_option("--history", tf.history, "write per-epoch history JSON here");

    SweepFlags sf;
    auto* sweep_cmd = app.add_subcommand("sweep", "train every architecture x optimizer x freeze x head cell");
    sweep_cmd->add_option("--archs", sf.archs, "comma-separated architectures")->delimiter(',')->capture_default_str();
    sweep_cmd->add_option("--optimizers", sf.optimizers, "comma-separated optimizers or 'all'")->delimiter(',')->capture_default_str();
    sweep_cmd->add_option("--freezes", sf.freezes, "comma-separated freeze ratios")->delimiter(',')->capture_default_str();
    sweep_cmd->add_option("--heads", sf.heads, "comma-separated heads")->delimiter(',')->capture_default_str();
    sweep_cmd->add_option("--data", sf.data, data_help)->required();
    sweep_cmd->add_option("--out-table", sf.out_table, "CSV table path")->capture_default_str();
    sweep_cmd->add_option("--epochs", sf.epochs, "epochs per cell")->capture_default_str();
    sweep_cmd->add_option("--batch-size", sf.batch_size, "batch size")->capture_default_str();
    sweep_cmd->add_option("--seed", sf.seed, "seed shared by every cell")->capture_default_str();
    sweep_cmd->add_option("--lr", sf.lr, "learning rate for every optimizer (default: each optimizer's default)");
    sweep_cmd->add_option("--image-size", sf.image_size, "input size")->capture_default_str();
    sweep_cmd->add_option("--pretrain", sf.pretrain, "source dataset each base is pretrained on once");
    sweep_cmd->add_option("--pretrain-epochs", sf.pretrain_epochs, "epochs on the pretraining source")->capture_default_str();

    EvalFlags ef;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--ckpt", ef.ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--data", ef.data, data_help)->required();
    eval_cmd->add_option("--seed", ef.seed, "seed for synthetic data")->capture_default_str();
    eval_cmd->add_option("--batch-size", ef.batch_size, "batch size")->capture_default_str();
    eval_cmd->add_option("--dump-misclassified", ef.dump_misclassified, "write misclassified samples here");
    eval_cmd->add_option("--out", ef.out, "write metrics JSON here");

    ParamcountFlags pf;
    auto* pc_cmd = app.add_subcommand("paramcount", "count layers and parameters without allocating weights");
    pc_cmd->add_option("--arch", pf.arch, "architecture: " + join(architecture_names()))->required();
    pc_cmd->add_option("--head", pf.head, "head: gap or flatten")->capture_default_str();
    pc_cmd->add_option("--classes", pf.classes, "output classes")->capture_default_str();
    pc_cmd->add_option("--freeze", pf.freeze, "freeze ratio")->capture_default_str();
    pc_cmd->add_option("--input-size", pf.input_size, "input size (default: 299 for xception, 224 for other full-size, 32 for minis)");
    pc_cmd->add_option("--dump-descriptor", pf.dump_descriptor, "write the descriptor JSON here");

    ServeFlags vf;
    auto* serve_cmd = app.add_subcommand("serve", "serve a checkpoint over HTTP");
    serve_cmd->add_option("--ckpt", vf.ckpt, "checkpoint path")->required();
    serve_cmd->add_option("--host", vf.host, "bind address")->capture_default_str();
    serve_cmd->add_option("--port", vf.port, "port (0 picks a free port)")->capture_default_str();
    serve_cmd->add_option("--max-upload-mb", vf.max_upload_mb, "largest accepted request body")->capture_default_str();

    BenchFlags bf;
    auto* bench_cmd = app.add_subcommand("bench", "time forward passes of a checkpoint");
    bench_cmd->add_option("--ckpt", bf.ckpt, "checkpoint path")->required();
    bench_cmd->add_option("--runs", bf.runs, "timed runs")->capture_default_str();
    bench_cmd->add_option("--warmup", bf.warmup, "untimed warmup runs")->capture_default_str();
    bench_cmd->add_option("--seed", bf.seed, "seed of the random input")->capture_default_str();
    bench_cmd->add_option("--out", bf.out, "write the report JSON here");

    SynthFlags yf;
    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic stripe dataset as PNG files");
    synth_cmd->add_option("--classes", yf.classes, "classes")->capture_default_str();
    synth_cmd->add_option("--per-class", yf.per_class, "images per class")->capture_default_str();
    synth_cmd->add_option("--size", yf.size, "image size")->capture_default_str();
    synth_cmd->add_option("--seed", yf.seed, "seed")->capture_default_str();
    synth_cmd->add_option("--out-dir", yf.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*train_cmd) return run_train(tf);
        if (*sweep_cmd) return run_sweep_verb(sf);
        if (*eval_cmd) return run_eval(ef);
        if (*pc_cmd) return run_paramcount(pf);
        if (*serve_cmd) return run_serve(vf);
        if (*bench_cmd) return run_bench(bf);
        if (*synth_cmd) return run_synth(yf);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        for (auto* sub : app.get_subcommands()) std::cerr << sub->help("", CLI::AppFormatMode::Normal);
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
