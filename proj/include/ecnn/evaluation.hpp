#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ecnn/data_io.hpp"
#include "ecnn/netspec.hpp"

namespace ecnn {

struct ConfusionMatrix {
    int k = 7;
    std::vector<std::int64_t> counts;  // k*k row-major, rows = true label

    explicit ConfusionMatrix(int k = 7) : k(k), counts(static_cast<std::size_t>(k) * k, 0) {}

    std::int64_t& at(int row, int col) { return counts[static_cast<std::size_t>(row) * k + col]; }
    std::int64_t at(int row, int col) const {
        return counts[static_cast<std::size_t>(row) * k + col];
    }
    std::int64_t trace() const;
    std::int64_t total() const;
    std::int64_t row_sum(int row) const;

    bool operator==(const ConfusionMatrix&) const = default;
};

struct EvalResult {
    std::int64_t correct = 0;
    std::int64_t total = 0;
    double accuracy = 0.0;  // trace(cm)/N
    ConfusionMatrix cm;
};

// eval-mode predictions with lowest-index argmax tie-breaking; the model is
// untouched (BN uses running statistics)
EvalResult evaluate(const Model& m, const Dataset& d, const Tensor* hog = nullptr,
                    int batch = 128);

// counts[r,r] / row_sum(r); rows with no samples report NaN ("undefined")
std::vector<double> per_class_accuracy(const ConfusionMatrix& cm);

// writes <dir>/confusion.csv (8x8: header plus one row per true label) and
// <dir>/report.csv (accuracy as exact rational and percentage, the per-class
// table, and the largest off-diagonal confusion pair)
void export_report(const EvalResult& result, const std::vector<double>& per_class,
                   const std::string& out_dir);

ConfusionMatrix import_confusion_csv(const std::string& path);

void print_confusion(const ConfusionMatrix& cm, std::ostream& os);

}  // namespace ecnn
