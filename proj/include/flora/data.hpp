#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flora/image.hpp"
#include "flora/rng.hpp"
#include "flora/tensor.hpp"

namespace flora {

struct Sample {
    std::string id;               // relative path, or "synth/<class>/<n>"
    std::filesystem::path path;   // empty for in-memory samples
    std::shared_ptr<const Image> image;
    std::size_t label = 0;
};

struct Exclusion {
    std::filesystem::path path;
    std::string reason;
};

struct DatasetIndex {
    std::vector<std::string> class_names;  // sorted, unique
    std::vector<Sample> samples;
    std::filesystem::path root;
    std::vector<Exclusion> excluded;

    std::size_t num_classes() const { return class_names.size(); }
    std::vector<std::size_t> class_counts() const;
    /// Decoded pixels of sample `i`, from memory or disk.
    Image image(std::size_t i) const;
    DatasetIndex subset(std::span<const std::size_t> indices) const;
};

/// Scans root/<class>/*.{jpg,jpeg,png}. Empty class directories are skipped with a warning;
/// undecodable files land in `excluded`. Requires at least two usable classes.
DatasetIndex scan_dataset(const std::filesystem::path& root);

/// Writes the exclusion report, one "path<TAB>reason" line per file.
void write_exclusions(const DatasetIndex& index, const std::filesystem::path& path);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/// Stratified split. Per class: shuffle by seed, train = floor(train_frac * n),
/// validation = floor(val_frac * n), test = the rest. Throws if any part would be empty.
Split split_dataset(const DatasetIndex& index, std::uint64_t seed, double train_frac = 0.8,
                    double val_frac = 0.1);

struct AugmentConfig {
    double rotation_range = 0;      // degrees
    double width_shift_range = 0;   // fraction of width
    double height_shift_range = 0;  // fraction of height
    double shear_range = 0;         // degrees
    double zoom_range = 0;          // zoom drawn from [1 - z, 1 + z]

    static AugmentConfig paper_defaults() { return {0.4, 0.2, 0.3, 0.2, 0.2}; }
    bool is_identity() const;
    void validate() const;
    bool operator==(const AugmentConfig&) const = default;
};

/// Random affine warp of an [H, W, 3] image about its center, nearest-edge fill,
/// bilinear sampling. Always consumes five draws from `rng`.
Tensor<float> augment(const Tensor<float>& image, const AugmentConfig& config, Rng& rng);

struct Batch {
    Tensor<float> images;               // [N, H, W, 3]
    Tensor<float> labels;               // [N, K] one-hot
    std::vector<std::size_t> samples;   // dataset indices, in batch order
};

struct BatchConfig {
    std::size_t batch_size = 32;
    std::size_t image_size = 32;
    std::uint64_t seed = 0;
    bool shuffle = true;
    std::optional<AugmentConfig> augment;
    std::size_t workers = 1;
};

/// Epoch-wise batch stream over a subset of an index. Order is reshuffled per epoch from
/// (seed, epoch); augmentation draws come from (seed, epoch, sample), so output does not
/// depend on the worker count.
class BatchLoader {
public:
    BatchLoader(const DatasetIndex& index, std::vector<std::size_t> indices, BatchConfig config);

    std::size_t num_samples() const { return indices_.size(); }
    std::size_t num_batches() const;
    /// Sample order used for `epoch`.
    std::vector<std::size_t> epoch_order(std::size_t epoch) const;
    /// Materializes batch `b` of `epoch`.
    Batch batch(std::size_t epoch, std::size_t b) const;
    /// All batches of one epoch in order, prepared by `config.workers` threads through a bounded queue.
    void for_each_batch(std::size_t epoch, const std::function<void(Batch&)>& fn) const;

private:
    Batch make_batch(std::span<const std::size_t> order, std::size_t epoch) const;

    const DatasetIndex* index_;
    std::vector<std::size_t> indices_;
    BatchConfig config_;
};

/// In-memory dataset of oriented stripe patterns: each class has its own angle and colour,
/// each image a random phase and pixel noise. Deterministic by seed.
DatasetIndex synth_dataset(std::size_t num_classes, std::size_t per_class, std::size_t image_size,
                           std::uint64_t seed);

/// Parses "synth:<C>x<N>x<S>" into (classes, per_class, size); nullopt for other strings.
std::optional<std::array<std::size_t, 3>> parse_synth_spec(std::string_view spec);

/// Writes a dataset as root/<class>/<n>.png.
void write_dataset_pngs(const DatasetIndex& index, const std::filesystem::path& root);

}  // namespace flora
