#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace flora {

/// K x K counts, rows = actual class, columns = predicted class.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t k);

    void add(std::size_t actual, std::size_t predicted);
    std::size_t size() const { return k_; }
    std::uint64_t at(std::size_t actual, std::size_t predicted) const { return counts_.at(actual * k_ + predicted); }
    std::uint64_t total() const;
    std::uint64_t trace() const;

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

struct ClassCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

ClassCounts per_class_counts(const ConfusionMatrix& cm, std::size_t i);

/// Macro means over classes of the one-vs-rest ratios, plus plain top-1 accuracy.
/// A ratio with a zero denominator contributes 0 and adds an entry to `warnings`.
struct MacroMetrics {
    double accuracy_eq1 = 0;  // mean (TP + TN) / total
    double specificity = 0;   // mean TN / (FP + TN)
    double precision = 0;     // mean TP / (TP + FP)
    double recall = 0;        // mean TP / (TP + FN)
    double error_rate = 0;    // mean (FP + FN) / total
    double f1 = 0;            // 2PR / (P + R) of the macro precision and recall
    double top1_accuracy = 0; // trace / total
    std::vector<std::string> warnings;
};

MacroMetrics macro_metrics(const ConfusionMatrix& cm);

struct Prediction {
    std::string sample_id;
    std::size_t actual = 0;
    std::size_t predicted = 0;
    double confidence = 0;  // probability of the predicted class
};

struct Misclassification {
    std::string sample_id;
    std::string actual;
    std::string predicted;
    double confidence = 0;
};

/// Every prediction with actual != predicted, most confident first.
std::vector<Misclassification> dump_misclassified(const std::vector<Prediction>& predictions,
                                                  const std::vector<std::string>& class_names);
void write_misclassified(const std::vector<Misclassification>& rows, const std::filesystem::path& path);

/// Seven metrics at 4 decimals followed by the confusion grid with class-name headers.
std::string format_report(const MacroMetrics& m, const ConfusionMatrix& cm,
                          const std::vector<std::string>& class_names);

}  // namespace flora
