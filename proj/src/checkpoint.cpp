#include "flora/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "flora/tensor_io.hpp"

namespace flora {

namespace {

constexpr std::uint64_t kMaxHeaderBytes = std::uint64_t{1} << 28;

template <typename U>
void put_le(std::ostream& out, U value) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
    out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
    std::array<unsigned char, sizeof(U)> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
        throw CheckpointError(CheckpointError::Code::Truncated, "checkpoint truncated in preamble");
    }
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
}

std::vector<std::string> tensor_names(const Model<float>& model) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < model.num_nodes(); ++i) {
        for (const auto& p : model.layer(i).params()) names.push_back(model.layer(i).node().name + "/" + p.name);
    }
    return names;
}

nlohmann::json counts_to_json(const ParamCount& c) {
    return {{"total", c.total}, {"trainable", c.trainable}, {"non_trainable", c.non_trainable}};
}

nlohmann::json make_header(const Checkpoint& ckpt) {
    const auto& model = ckpt.model;
    auto tensors = nlohmann::json::array();
    const auto names = tensor_names(model);
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        tensors.push_back({{"name", names[i]}, {"shape", params[i]->values.shape()}});
    }
    return {
        {"descriptor", descriptor_to_json(model.descriptor())},
        {"class_names", ckpt.class_names},
        {"preprocess", {{"input_size", ckpt.preprocess.input_size}, {"scale", ckpt.preprocess.scale}}},
        {"train_config", ckpt.train_config ? train_config_to_json(*ckpt.train_config) : nlohmann::json(nullptr)},
        {"history", history_to_json(ckpt.history)},
        {"freeze", {{"ratio", model.freeze_plan().ratio}, {"frozen_count", model.freeze_plan().frozen_count}}},
        {"param_counts", counts_to_json(model.param_count())},
        {"tensors", std::move(tensors)},
    };
}

nlohmann::json read_header_bytes(std::istream& in) {
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(magic))) {
        throw CheckpointError(CheckpointError::Code::Truncated, "checkpoint truncated before magic");
    }
    if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw CheckpointError(CheckpointError::Code::BadMagic, "not a checkpoint file (bad magic)");
    }
    const auto version = get_le<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw CheckpointError(CheckpointError::Code::BadVersion, "unsupported checkpoint version " +
                                                                     std::to_string(version) + " (expected " +
                                                                     std::to_string(kCheckpointVersion) + ")");
    }
    const auto length = get_le<std::uint64_t>(in);
    if (length == 0 || length > kMaxHeaderBytes) {
        throw CheckpointError(CheckpointError::Code::BadHeader, "implausible header length " + std::to_string(length));
    }
    std::string text(length, '\0');
    in.read(text.data(), static_cast<std::streamsize>(length));
    if (in.gcount() != static_cast<std::streamsize>(length)) {
        throw CheckpointError(CheckpointError::Code::Truncated, "checkpoint truncated inside header");
    }
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Code::BadHeader, std::string("unreadable checkpoint header: ") + e.what());
    }
}

}  // namespace

Checkpoint make_checkpoint(TrainResult&& result, std::vector<std::string> class_names, const TrainConfig& config) {
    PreprocessConfig pre;
    pre.input_size = result.model.descriptor().input_shape.h;
    return {std::move(result.model), std::move(class_names), pre, config, std::move(result.history)};
}

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    if (ckpt.class_names.size() != ckpt.model.descriptor().num_classes) {
        throw std::invalid_argument("checkpoint has " + std::to_string(ckpt.class_names.size()) +
                                    " class names for a model with " +
                                    std::to_string(ckpt.model.descriptor().num_classes) + " outputs");
    }
    const std::string header = make_header(ckpt).dump();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto* p : ckpt.model.parameters()) write_tensor(out, p->values);
    if (!out) throw CheckpointError(CheckpointError::Code::Io, "failed writing checkpoint");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError(CheckpointError::Code::Io, "cannot open " + path.string() + " for writing");
    save_checkpoint(out, ckpt);
}

nlohmann::json read_checkpoint_header(std::istream& in) { return read_header_bytes(in); }

Checkpoint load_checkpoint(std::istream& in) {
    const auto header = read_header_bytes(in);
    using Code = CheckpointError::Code;

    ArchDescriptor desc;
    std::vector<std::string> class_names;
    PreprocessConfig pre;
    std::optional<TrainConfig> config;
    std::vector<EpochStats> history;
    FreezePlan plan;
    ParamCount stored;
    nlohmann::json tensors;
    try {
        desc = descriptor_from_json(header.at("descriptor"));
        class_names = header.at("class_names").get<std::vector<std::string>>();
        pre.input_size = header.at("preprocess").at("input_size").get<std::size_t>();
        pre.scale = header.at("preprocess").at("scale").get<double>();
        if (!header.at("train_config").is_null()) config = train_config_from_json(header.at("train_config"));
        history = history_from_json(header.at("history"));
        plan.ratio = header.at("freeze").at("ratio").get<double>();
        plan.frozen_count = header.at("freeze").at("frozen_count").get<std::size_t>();
        const auto& c = header.at("param_counts");
        stored = {c.at("total").get<std::uint64_t>(), c.at("trainable").get<std::uint64_t>(),
                  c.at("non_trainable").get<std::uint64_t>()};
        tensors = header.at("tensors");
    } catch (const std::exception& e) {
        throw CheckpointError(Code::BadHeader, std::string("invalid checkpoint header: ") + e.what());
    }
    if (class_names.size() != desc.num_classes) {
        throw CheckpointError(Code::BadHeader, "header lists " + std::to_string(class_names.size()) +
                                                   " class names for " + std::to_string(desc.num_classes) + " outputs");
    }
    if (pre.input_size != desc.input_shape.h) {
        throw CheckpointError(Code::BadHeader, "preprocess input size disagrees with the descriptor");
    }

    Model<float> model(desc, 0);
    const auto names = tensor_names(model);
    const auto params = model.parameters();
    if (!tensors.is_array() || tensors.size() != params.size()) {
        throw CheckpointError(Code::CountMismatch, "header lists " + std::to_string(tensors.size()) +
                                                       " tensors but the descriptor defines " +
                                                       std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& name = names[i];
        if (tensors[i].value("name", std::string{}) != name) {
            throw CheckpointError(Code::BadHeader, "tensor " + std::to_string(i) + " is listed as '" +
                                                       tensors[i].value("name", std::string{}) + "', expected '" +
                                                       name + "'",
                                  name);
        }
        Tensor<float> t;
        try {
            t = read_tensor<float>(in);
        } catch (const TensorFormatError& e) {
            const auto code = e.code() == TensorFormatError::Code::Truncated ? Code::Truncated : Code::ShapeMismatch;
            throw CheckpointError(code, "parameter '" + name + "': " + e.what(), name);
        }
        if (t.shape() != params[i]->values.shape()) {
            throw CheckpointError(Code::ShapeMismatch,
                                  "parameter '" + name + "' has shape " + shape_str(t.shape()) + ", descriptor expects " +
                                      shape_str(params[i]->values.shape()),
                                  name);
        }
        params[i]->values = std::move(t);
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw CheckpointError(Code::TrailingData, "unexpected bytes after the last tensor record");
    }
    try {
        model.apply_freeze(plan);
    } catch (const std::exception& e) {
        throw CheckpointError(Code::BadHeader, e.what());
    }
    if (model.param_count() != stored) {
        throw CheckpointError(Code::CountMismatch,
                              "parameter counts " + std::to_string(model.param_count().total) +
                                  " rebuilt from the descriptor disagree with " + std::to_string(stored.total) +
                                  " recorded in the header");
    }
    return {std::move(model), std::move(class_names), pre, std::move(config), std::move(history)};
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Code::Io, "cannot open checkpoint " + path.string());
    return load_checkpoint(in);
}

}  // namespace flora
