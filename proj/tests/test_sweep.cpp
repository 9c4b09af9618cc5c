#include <gtest/gtest.h>

#include <sstream>

#include "flora/log.hpp"
#include "flora/sweep.hpp"

using namespace flora;

namespace {

const bool kQuiet = [] {
    spdlog::set_level(spdlog::level::off);
    return true;
}();

std::vector<OptimizerKind> all_optimizers() {
    std::vector<OptimizerKind> out;
    for (const auto& name : optimizer_names()) out.push_back(optimizer_from_string(name));
    return out;
}

std::vector<std::string> csv_lines(const SweepResult& r) {
    std::ostringstream out;
    write_sweep_csv(out, r);
    std::istringstream in(out.str());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    return lines;
}

SweepOptions quick_options() {
    SweepOptions o;
    o.train.epochs = 1;
    o.train.batch_size = 8;
    o.train.seed = 3;
    return o;
}

}  // namespace

TEST(Sweep, OptimizerTableSchema) {
    const auto data = synth_dataset(3, 10, 32, 1);
    const auto split = split_dataset(data, 1);
    SweepGrid grid{{"mini_mobilenet"}, all_optimizers(), {0.0}};
    const auto r = run_sweep(grid, data, split, quick_options());
    ASSERT_EQ(r.rows.size(), 7u);
    for (std::size_t i = 0; i < 7; ++i) {
        const auto& row = r.rows[i];
        EXPECT_TRUE(row.ok) << row.error;
        EXPECT_EQ(to_string(row.optimizer), optimizer_names()[i]);
        for (double v : {row.accuracy, row.precision, row.recall, row.f1}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        EXPECT_GT(row.loss, 0.0);
    }
    const auto lines = csv_lines(r);
    ASSERT_EQ(lines.size(), 8u);
    EXPECT_EQ(lines[0], kSweepCsvHeader);
    EXPECT_EQ(lines[1].rfind("mini_mobilenet,sgd,0.00,gap,ok,", 0), 0u) << lines[1];
    for (std::size_t i = 1; i < lines.size(); ++i) EXPECT_EQ(std::count(lines[i].begin(), lines[i].end(), ','), 10);
    const auto table = format_sweep_table(r);
    EXPECT_NE(table.find("precision"), std::string::npos);
    EXPECT_NE(table.find("adamax"), std::string::npos);
}

TEST(Sweep, FreezeTableSchemaWithPretrainedBase) {
    const auto source = synth_dataset(4, 10, 32, 9);
    const auto data = synth_dataset(3, 10, 32, 1);
    auto options = quick_options();
    options.pretrain = SweepPretrain{&source, split_dataset(source, 9), options.train};
    SweepGrid grid{{"mini_densenet"}, {OptimizerKind::Sgd}, {0.25, 0.5, 0.75}};
    const auto r = run_sweep(grid, data, split_dataset(data, 1), options);
    ASSERT_EQ(r.rows.size(), 3u);
    EXPECT_EQ(r.rows[0].freeze_ratio, 0.25);
    EXPECT_EQ(r.rows[2].freeze_ratio, 0.75);
    for (const auto& row : r.rows) EXPECT_TRUE(row.ok) << row.error;
    EXPECT_EQ(csv_lines(r).size(), 4u);
}

TEST(Sweep, CellsAreIndependentAndSeeded) {
    const auto data = synth_dataset(3, 10, 32, 1);
    const auto split = split_dataset(data, 1);
    SweepGrid twice{{"mini_mobilenet", "mini_mobilenet"}, {OptimizerKind::Adam}, {0.0}};
    const auto r = run_sweep(twice, data, split, quick_options());
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_EQ(r.rows[0].loss, r.rows[1].loss);
    EXPECT_EQ(r.rows[0].accuracy, r.rows[1].accuracy);
}

TEST(Sweep, FailedCellIsRecordedAndSweepContinues) {
    const auto data = synth_dataset(3, 10, 32, 1);
    SweepGrid grid{{"no_such_net", "mini_mobilenet"}, {OptimizerKind::Sgd}, {0.0}, {HeadKind::Gap, HeadKind::Flatten}};
    const auto r = run_sweep(grid, data, split_dataset(data, 1), quick_options());
    ASSERT_EQ(r.rows.size(), 4u);
    EXPECT_FALSE(r.rows[0].ok);
    EXPECT_FALSE(r.rows[1].ok);
    EXPECT_FALSE(r.rows[0].error.empty());
    EXPECT_TRUE(r.rows[2].ok) << r.rows[2].error;
    EXPECT_TRUE(r.rows[3].ok) << r.rows[3].error;
    EXPECT_EQ(r.rows[3].head, HeadKind::Flatten);
    const auto lines = csv_lines(r);
    EXPECT_NE(lines[1].find(",failed,,,,,,"), std::string::npos) << lines[1];
    EXPECT_NE(format_sweep_table(r).find("failed no_such_net"), std::string::npos);
}

TEST(Sweep, EmptyGridIsAnError) {
    const auto data = synth_dataset(3, 10, 32, 1);
    const auto split = split_dataset(data, 1);
    EXPECT_THROW(run_sweep({{"mini_mobilenet"}, {}, {0.0}}, data, split, quick_options()), std::invalid_argument);
    EXPECT_THROW(run_sweep({{}, {OptimizerKind::Sgd}, {0.0}}, data, split, quick_options()), std::invalid_argument);
    EXPECT_THROW(run_sweep({{"mini_mobilenet"}, {OptimizerKind::Sgd}, {}}, data, split, quick_options()),
                 std::invalid_argument);
}
