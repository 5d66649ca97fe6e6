#include "ecnn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ecnn/errors.hpp"

namespace ecnn {

std::int64_t ConfusionMatrix::trace() const {
    std::int64_t t = 0;
    for (int i = 0; i < k; ++i) t += at(i, i);
    return t;
}

std::int64_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), static_cast<std::int64_t>(0));
}

std::int64_t ConfusionMatrix::row_sum(int row) const {
    std::int64_t t = 0;
    for (int c = 0; c < k; ++c) t += at(row, c);
    return t;
}

EvalResult evaluate(const Model& m, const Dataset& d, const Tensor* hog, int batch) {
    if (m.spec.hog_concat && !hog) throw UsageError("hybrid model needs hog features to evaluate");
    const int n = d.size();
    EvalResult r;
    r.cm = ConfusionMatrix(m.spec.num_classes);
    r.total = n;

    std::vector<int> idx(static_cast<std::size_t>(batch));
    for (int start = 0; start < n; start += batch) {
        const int end = std::min(n, start + batch);
        idx.resize(static_cast<std::size_t>(end - start));
        std::iota(idx.begin(), idx.end(), start);

        Tensor x;
        std::vector<int> labels;
        gather_batch(d, idx, x, labels);
        Tensor hog_rows;
        const Tensor* hog_ptr = nullptr;
        if (hog) {
            hog_rows = gather_rows(*hog, idx);
            hog_ptr = &hog_rows;
        }
        const Tensor scores = forward_eval(m, x, hog_ptr);
        const int k = scores.extent(1);
        for (int i = 0; i < scores.extent(0); ++i) {
            const double* row = scores.data() + static_cast<std::size_t>(i) * k;
            int arg = 0;  // lowest index wins ties
            for (int j = 1; j < k; ++j) {
                if (row[j] > row[arg]) arg = j;
            }
            r.cm.at(labels[static_cast<std::size_t>(i)], arg) += 1;
        }
    }
    r.correct = r.cm.trace();
    r.accuracy = n > 0 ? static_cast<double>(r.correct) / n : 0.0;
    return r;
}

std::vector<double> per_class_accuracy(const ConfusionMatrix& cm) {
    std::vector<double> acc(static_cast<std::size_t>(cm.k));
    for (int r = 0; r < cm.k; ++r) {
        const std::int64_t total = cm.row_sum(r);
        acc[static_cast<std::size_t>(r)] =
            total > 0 ? static_cast<double>(cm.at(r, r)) / static_cast<double>(total)
                      : std::nan("");
    }
    return acc;
}

namespace {

const char* class_name(int i, int k) {
    return k == 7 ? kClassNames[static_cast<std::size_t>(i)] : nullptr;
}

std::string label_of(int i, int k) {
    const char* name = class_name(i, k);
    return name ? std::string(name) : "class" + std::to_string(i);
}

std::string pct_1dp(double fraction) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << fraction * 100.0;
    return os.str();
}

}  // namespace

void export_report(const EvalResult& result, const std::vector<double>& per_class,
                   const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);

    const ConfusionMatrix& cm = result.cm;
    {
        std::ofstream os(out_dir + "/confusion.csv");
        if (!os) throw IoError("cannot write " + out_dir + "/confusion.csv");
        os << "label";
        for (int c = 0; c < cm.k; ++c) os << ',' << label_of(c, cm.k);
        os << '\n';
        for (int r = 0; r < cm.k; ++r) {
            os << label_of(r, cm.k);
            for (int c = 0; c < cm.k; ++c) os << ',' << cm.at(r, c);
            os << '\n';
        }
        if (!os) throw IoError("failed writing confusion.csv");
    }

    // largest off-diagonal count, scanned row-major for a deterministic pick
    int worst_r = 0, worst_c = 1;
    std::int64_t worst = -1;
    for (int r = 0; r < cm.k; ++r)
        for (int c = 0; c < cm.k; ++c) {
            if (r != c && cm.at(r, c) > worst) {
                worst = cm.at(r, c);
                worst_r = r;
                worst_c = c;
            }
        }

    {
        std::ofstream os(out_dir + "/report.csv");
        if (!os) throw IoError("cannot write " + out_dir + "/report.csv");
        os << "metric,detail,value\n";
        os << "accuracy," << result.correct << '/' << result.total << ','
           << pct_1dp(result.accuracy) << '\n';
        for (int r = 0; r < cm.k; ++r) {
            os << "per_class," << label_of(r, cm.k) << ',';
            const double v = per_class[static_cast<std::size_t>(r)];
            if (std::isnan(v)) os << "undefined";
            else os << pct_1dp(v);
            os << '\n';
        }
        os << "top_confusion," << label_of(worst_r, cm.k) << "->" << label_of(worst_c, cm.k)
           << ',' << worst << '\n';
        if (!os) throw IoError("failed writing report.csv");
    }
}

ConfusionMatrix import_confusion_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty confusion csv: " + path);
    const int k = static_cast<int>(std::count(line.begin(), line.end(), ',') );

    ConfusionMatrix cm(k);
    for (int r = 0; r < k; ++r) {
        if (!std::getline(is, line)) throw DataError("truncated confusion csv: " + path);
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');  // label column
        for (int c = 0; c < k; ++c) {
            if (!std::getline(ss, field, ',')) throw DataError("short row in " + path);
            cm.at(r, c) = std::stoll(field);
        }
    }
    return cm;
}

void print_confusion(const ConfusionMatrix& cm, std::ostream& os) {
    int width = 8;
    for (int r = 0; r < cm.k; ++r) {
        width = std::max(width, static_cast<int>(label_of(r, cm.k).size()) + 1);
    }
    os << std::setw(width) << "true\\pred";
    for (int c = 0; c < cm.k; ++c) os << std::setw(width) << label_of(c, cm.k);
    os << '\n';
    for (int r = 0; r < cm.k; ++r) {
        os << std::setw(width) << label_of(r, cm.k);
        for (int c = 0; c < cm.k; ++c) os << std::setw(width) << cm.at(r, c);
        os << '\n';
    }
}

}  // namespace ecnn
