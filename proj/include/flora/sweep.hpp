#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flora/training.hpp"

namespace flora {

struct SweepGrid {
    std::vector<std::string> architectures;
    std::vector<OptimizerKind> optimizers;
    std::vector<double> freeze_ratios;
    std::vector<HeadKind> heads{HeadKind::Gap};
};

/// Source task used to pretrain each architecture's base once before the grid runs.
struct SweepPretrain {
    const DatasetIndex* data = nullptr;
    Split split;
    TrainConfig config;
};

struct SweepOptions {
    TrainConfig train;                    // optimizer and freeze ratio are replaced per cell
    std::optional<double> learning_rate;  // overrides each optimizer's default
    std::size_t image_size = 32;
    std::optional<SweepPretrain> pretrain;
};

struct SweepRow {
    std::string architecture;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    double freeze_ratio = 0;
    HeadKind head = HeadKind::Gap;
    bool ok = false;
    std::string error;
    double accuracy = 0;  // top-1 on the test split
    double loss = 0;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
};

/// One row per grid cell, in architecture, optimizer, freeze, head order. Every cell starts
/// from the same seed (and the same pretrained base when given); a failing cell is recorded
/// and the sweep continues.
SweepResult run_sweep(const SweepGrid& grid, const DatasetIndex& data, const Split& split, const SweepOptions& options);

inline constexpr const char* kSweepCsvHeader =
    "architecture,optimizer,freeze_ratio,head,status,accuracy,loss,precision,recall,f1,error";

void write_sweep_csv(std::ostream& out, const SweepResult& result);
void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result);

/// Aligned table with metrics at 4 decimals; failed cells show "failed" and their error.
std::string format_sweep_table(const SweepResult& result);

}  // namespace flora
