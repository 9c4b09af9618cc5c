#include "flora/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "flora/log.hpp"

namespace flora {

ConfusionMatrix::ConfusionMatrix(std::size_t k) : k_(k), counts_(k * k, 0) {
    if (k == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t actual, std::size_t predicted) {
    if (actual >= k_ || predicted >= k_) {
        throw std::out_of_range("class index (" + std::to_string(actual) + ", " + std::to_string(predicted) +
                                ") outside a " + std::to_string(k_) + "-class matrix");
    }
    ++counts_[actual * k_ + predicted];
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k_; ++i) t += counts_[i * k_ + i];
    return t;
}

ClassCounts per_class_counts(const ConfusionMatrix& cm, std::size_t i) {
    if (i >= cm.size()) throw std::out_of_range("class index out of range");
    ClassCounts c;
    c.tp = cm.at(i, i);
    for (std::size_t j = 0; j < cm.size(); ++j) {
        c.fn += cm.at(i, j);
        c.fp += cm.at(j, i);
    }
    c.fn -= c.tp;
    c.fp -= c.tp;
    c.tn = cm.total() - c.tp - c.fp - c.fn;
    return c;
}

MacroMetrics macro_metrics(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw std::invalid_argument("macro_metrics: confusion matrix is empty");
    MacroMetrics m;
    const auto n = static_cast<double>(total);
    const auto k = static_cast<double>(cm.size());
    auto ratio = [&](std::uint64_t num, std::uint64_t den, const char* what, std::size_t cls) {
        if (den == 0) {
            m.warnings.push_back(std::string(what) + " undefined for class " + std::to_string(cls) + ", counted as 0");
            return 0.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    for (std::size_t i = 0; i < cm.size(); ++i) {
        const auto c = per_class_counts(cm, i);
        m.accuracy_eq1 += static_cast<double>(c.tp + c.tn) / n;
        m.specificity += ratio(c.tn, c.fp + c.tn, "specificity", i);
        m.precision += ratio(c.tp, c.tp + c.fp, "precision", i);
        m.recall += ratio(c.tp, c.tp + c.fn, "recall", i);
        m.error_rate += static_cast<double>(c.fp + c.fn) / n;
    }
    m.accuracy_eq1 /= k;
    m.specificity /= k;
    m.precision /= k;
    m.recall /= k;
    m.error_rate /= k;
    if (m.precision + m.recall > 0) {
        m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
    } else {
        m.warnings.push_back("f1 undefined (precision + recall = 0), counted as 0");
    }
    m.top1_accuracy = static_cast<double>(cm.trace()) / n;
    for (const auto& w : m.warnings) spdlog::warn("{}", w);
    return m;
}

std::vector<Misclassification> dump_misclassified(const std::vector<Prediction>& predictions,
                                                  const std::vector<std::string>& class_names) {
    std::vector<Misclassification> out;
    for (const auto& p : predictions) {
        if (p.actual == p.predicted) continue;
        out.push_back({p.sample_id, class_names.at(p.actual), class_names.at(p.predicted), p.confidence});
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
    return out;
}

void write_misclassified(const std::vector<Misclassification>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    out << "sample_id\tactual\tpredicted\tconfidence\n";
    for (const auto& r : rows) {
        out << r.sample_id << '\t' << r.actual << '\t' << r.predicted << '\t' << std::fixed << std::setprecision(4)
            << r.confidence << '\n';
    }
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string format_report(const MacroMetrics& m, const ConfusionMatrix& cm,
                          const std::vector<std::string>& class_names) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "accuracy_eq1  " << m.accuracy_eq1 << '\n'
       << "top1_accuracy " << m.top1_accuracy << '\n'
       << "specificity   " << m.specificity << '\n'
       << "precision     " << m.precision << '\n'
       << "recall        " << m.recall << '\n'
       << "error_rate    " << m.error_rate << '\n'
       << "f1            " << m.f1 << '\n';

    std::size_t name_w = 6;
    for (const auto& n : class_names) name_w = std::max(name_w, n.size());
    std::size_t cell_w = 1;
    for (std::size_t i = 0; i < cm.size(); ++i)
        for (std::size_t j = 0; j < cm.size(); ++j) cell_w = std::max(cell_w, std::to_string(cm.at(i, j)).size());
    for (const auto& n : class_names) cell_w = std::max(cell_w, n.size());

    os << "\nconfusion (rows actual, columns predicted)\n" << std::setw(static_cast<int>(name_w)) << "";
    for (const auto& n : class_names) os << ' ' << std::setw(static_cast<int>(cell_w)) << n;
    os << '\n';
    for (std::size_t i = 0; i < cm.size(); ++i) {
        os << std::setw(static_cast<int>(name_w)) << std::left << class_names.at(i) << std::right;
        for (std::size_t j = 0; j < cm.size(); ++j) os << ' ' << std::setw(static_cast<int>(cell_w)) << cm.at(i, j);
        os << '\n';
    }
    return os.str();
}

}  // namespace flora
