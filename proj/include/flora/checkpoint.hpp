#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flora/model.hpp"
#include "flora/training.hpp"

namespace flora {

// File layout (little-endian):
//   "FLORCKPT" | version u32 | header length u64 | JSON header | one tensor record per
//   parameter, in descriptor order (node order, then parameter order within the node)
inline constexpr char kCheckpointMagic[8] = {'F', 'L', 'O', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct PreprocessConfig {
    std::size_t input_size = 32;
    double scale = 1.0 / 255.0;
};

struct Checkpoint {
    Model<float> model;
    std::vector<std::string> class_names;
    PreprocessConfig preprocess;
    std::optional<TrainConfig> train_config;
    std::vector<EpochStats> history;
};

class CheckpointError : public std::runtime_error {
public:
    enum class Code { Io, BadMagic, BadVersion, BadHeader, Truncated, ShapeMismatch, CountMismatch, TrailingData };

    CheckpointError(Code code, const std::string& what, std::string parameter = {})
        : std::runtime_error(what), code_(code), parameter_(std::move(parameter)) {}
    Code code() const { return code_; }
    /// "<node>/<param>" for errors in a tensor record, else empty.
    const std::string& parameter() const { return parameter_; }

private:
    Code code_;
    std::string parameter_;
};

Checkpoint make_checkpoint(TrainResult&& result, std::vector<std::string> class_names, const TrainConfig& config);

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Rebuilds the model from the stored descriptor, checks every record against it and the
/// stored parameter counts, and restores the freeze plan.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The JSON header alone, without reading tensor records.
nlohmann::json read_checkpoint_header(std::istream& in);

}  // namespace flora
