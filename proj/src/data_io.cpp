#include "ecnn/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ecnn/errors.hpp"

namespace ecnn {

const std::array<const char*, 7> kClassNames = {"Angry", "Disgust",  "Fear",   "Happy",
                                                "Sad",   "Surprise", "Neutral"};

namespace {

constexpr int kImageSide = 48;
constexpr int kPixels = kImageSide * kImageSide;

struct RawSplit {
    std::vector<double> pixels;
    std::vector<int> labels;
};

Dataset to_dataset(RawSplit&& raw, Split split) {
    Dataset d;
    const int n = static_cast<int>(raw.labels.size());
    d.images = n > 0 ? Tensor({n, 1, kImageSide, kImageSide}, std::move(raw.pixels))
                     : Tensor({0, 1, kImageSide, kImageSide});
    d.labels = std::move(raw.labels);
    d.split = split;
    return d;
}

}  // namespace

FerSplits load_fer_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open dataset: " + path);

    RawSplit train, val, test;
    std::string line;
    std::size_t line_no = 0;

    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) continue;  // header
        if (line.empty()) continue;

        const auto err = [&](const std::string& msg) {
            return DataError(msg + " at line " + std::to_string(line_no) + " of " + path);
        };

        const std::size_t c1 = line.find(',');
        const std::size_t c2 = c1 == std::string::npos ? std::string::npos
                                                       : line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            throw err("expected 'emotion,pixels,Usage'");
        }

        int label = -1;
        {
            const char* b = line.data();
            const auto [p, ec] = std::from_chars(b, b + c1, label);
            if (ec != std::errc() || p != b + c1) throw err("bad emotion field");
        }
        if (label < 0 || label > 6) throw err("label " + std::to_string(label) + " out of [0,6]");

        std::vector<double> px;
        px.reserve(kPixels);
        {
            const char* p = line.data() + c1 + 1;
            const char* end = line.data() + c2;
            while (p < end) {
                while (p < end && *p == ' ') ++p;
                if (p >= end) break;
                int v = 0;
                const auto [np, ec] = std::from_chars(p, end, v);
                if (ec != std::errc()) throw err("bad pixel value");
                px.push_back(static_cast<double>(v));
                p = np;
            }
        }
        if (static_cast<int>(px.size()) != kPixels) {
            throw err("expected " + std::to_string(kPixels) + " pixels, got " +
                      std::to_string(px.size()));
        }

        const std::string usage = line.substr(c2 + 1);
        RawSplit* dst = nullptr;
        if (usage == "Training") dst = &train;
        else if (usage == "PublicTest") dst = &val;
        else if (usage == "PrivateTest") dst = &test;
        else throw err("unknown Usage '" + usage + "'");

        dst->pixels.insert(dst->pixels.end(), px.begin(), px.end());
        dst->labels.push_back(label);
    }

    FerSplits out;
    out.train = to_dataset(std::move(train), Split::train);
    out.val = to_dataset(std::move(val), Split::val);
    out.test = to_dataset(std::move(test), Split::test);
    return out;
}

void save_fer_csv(const FerSplits& splits, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "emotion,pixels,Usage\n";
    const auto dump = [&os](const Dataset& d, const char* usage) {
        for (int i = 0; i < d.size(); ++i) {
            os << d.labels[static_cast<std::size_t>(i)] << ',';
            const double* px = d.images.data() + static_cast<std::size_t>(i) * kPixels;
            for (int p = 0; p < kPixels; ++p) {
                if (p) os << ' ';
                os << static_cast<long long>(std::llround(px[p]));
            }
            os << ',' << usage << '\n';
        }
    };
    dump(splits.train, "Training");
    dump(splits.val, "PublicTest");
    dump(splits.test, "PrivateTest");
    if (!os) throw IoError("failed writing " + path);
}

NormState fit_normalizer(const Dataset& train) {
    const int n = train.size();
    if (n == 0) throw DataError("cannot fit normalizer on an empty dataset");
    NormState s;
    s.mean_image = Tensor({1, 1, kImageSide, kImageSide}, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* px = train.images.data() + static_cast<std::size_t>(i) * kPixels;
        for (int p = 0; p < kPixels; ++p) s.mean_image[p] += px[p];
    }
    for (int p = 0; p < kPixels; ++p) s.mean_image[p] /= n;
    return s;
}

Dataset apply_normalizer(const Dataset& d, const NormState& s) {
    Dataset out = d;
    for (int i = 0; i < d.size(); ++i) {
        double* px = out.images.data() + static_cast<std::size_t>(i) * kPixels;
        for (int p = 0; p < kPixels; ++p) px[p] -= s.mean_image[p];
    }
    return out;
}

Dataset augment_hflip(const Dataset& train) {
    if (train.split != Split::train) {
        throw UsageError("augment_hflip is only applied to the training split");
    }
    const int n = train.size();
    Dataset out;
    out.split = Split::train;
    out.images = Tensor({2 * n, 1, kImageSide, kImageSide});
    std::copy(train.images.data(), train.images.data() + train.images.size(),
              out.images.data());
    const Tensor flipped = hflip(train.images);
    std::copy(flipped.data(), flipped.data() + flipped.size(),
              out.images.data() + train.images.size());
    out.labels = train.labels;
    out.labels.insert(out.labels.end(), train.labels.begin(), train.labels.end());
    return out;
}

Dataset take_subset(const Dataset& d, int n) {
    if (n < 0 || n > d.size()) {
        throw UsageError("subset size " + std::to_string(n) + " out of range for dataset of " +
                         std::to_string(d.size()));
    }
    Dataset out;
    out.split = d.split;
    out.images = Tensor({n, 1, kImageSide, kImageSide});
    std::copy(d.images.data(), d.images.data() + static_cast<std::size_t>(n) * kPixels,
              out.images.data());
    out.labels.assign(d.labels.begin(), d.labels.begin() + n);
    return out;
}

std::vector<std::vector<int>> batch_indices(int n, int batch, std::uint64_t seed, int epoch) {
    if (batch < 1) throw UsageError("batch size must be at least 1");
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed ^ static_cast<std::uint64_t>(epoch));
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<std::vector<int>> out;
    for (int start = 0; start < n; start += batch) {
        const int end = std::min(n, start + batch);
        out.emplace_back(perm.begin() + start, perm.begin() + end);
    }
    return out;
}

void gather_batch(const Dataset& d, const std::vector<int>& idx, Tensor& x,
                  std::vector<int>& labels) {
    const int b = static_cast<int>(idx.size());
    x = Tensor({b, 1, kImageSide, kImageSide});
    labels.resize(idx.size());
    for (int i = 0; i < b; ++i) {
        const int src = idx[static_cast<std::size_t>(i)];
        std::copy(d.images.data() + static_cast<std::size_t>(src) * kPixels,
                  d.images.data() + static_cast<std::size_t>(src + 1) * kPixels,
                  x.data() + static_cast<std::size_t>(i) * kPixels);
        labels[static_cast<std::size_t>(i)] = d.labels[static_cast<std::size_t>(src)];
    }
}

Tensor gather_rows(const Tensor& rows, const std::vector<int>& idx) {
    if (rows.rank() != 2) throw ShapeError("gather_rows needs a [N,D] tensor");
    const int d = rows.extent(1);
    Tensor out({static_cast<int>(idx.size()), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy(rows.data() + static_cast<std::size_t>(idx[i]) * d,
                  rows.data() + static_cast<std::size_t>(idx[i] + 1) * d, out.data() + i * d);
    }
    return out;
}

namespace {

// class k gets an oriented grating at angle k*180/7 degrees plus noise, so a
// small network can separate the labels but not trivially
void synth_image(double* px, int label, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double angle = label * 3.14159265358979323846 / 7.0;
    const double ux = std::cos(angle), uy = std::sin(angle);
    const double wavelength = 8.0 + 2.0 * (label % 3);
    const double phase = uni(rng) * 6.28318530717958647692;
    const double amp = 45.0 + 30.0 * uni(rng);
    const double bias = 100.0 + 55.0 * uni(rng);
    std::normal_distribution<double> noise(0.0, 12.0);
    for (int y = 0; y < kImageSide; ++y) {
        for (int x = 0; x < kImageSide; ++x) {
            const double t = (ux * x + uy * y) * 2.0 * 3.14159265358979323846 / wavelength;
            double v = bias + amp * std::sin(t + phase) + noise(rng);
            v = std::clamp(v, 0.0, 255.0);
            px[y * kImageSide + x] = std::floor(v);  // integer pixels like the CSV
        }
    }
}

Dataset make_synth_split(int n, Split split, std::mt19937_64& rng) {
    Dataset d;
    d.split = split;
    d.images = Tensor({n, 1, kImageSide, kImageSide});
    d.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int label = i % 7;
        d.labels[static_cast<std::size_t>(i)] = label;
        synth_image(d.images.data() + static_cast<std::size_t>(i) * kPixels, label, rng);
    }
    return d;
}

}  // namespace

FerSplits make_synthetic_splits(int n_train, int n_val, int n_test, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    FerSplits out;
    out.train = make_synth_split(n_train, Split::train, rng);
    out.val = make_synth_split(n_val, Split::val, rng);
    out.test = make_synth_split(n_test, Split::test, rng);
    return out;
}

}  // namespace ecnn
