#pragma once

// Dataset ingestion and synthetic generation. The synthetic path reproduces a
// source/target transfer setting at desk scale: a Gaussian-mixture source and
// an affinely shifted, optionally label-noised target.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dprune/error.hpp"
#include "dprune/model.hpp"
#include "dprune/rng.hpp"

namespace dprune {

enum class Split { train, val, test };

struct Dataset {
    std::vector<Sample> samples;        // ids contiguous from 0, in index order
    Task task = Task::classification;
    int num_classes = 0;                // classification only
    std::vector<Split> split;           // indexed by sample id; empty until split

    std::size_t size() const { return samples.size(); }

    std::vector<std::int64_t> ids_of(Split s) const {
        std::vector<std::int64_t> ids;
        for (std::size_t i = 0; i < split.size(); ++i) {
            if (split[i] == s) ids.push_back(static_cast<std::int64_t>(i));
        }
        return ids;
    }

    int feature_dim() const {
        return samples.empty() ? 0 : static_cast<int>(samples.front().features.size());
    }
};

struct ShiftSpec {
    std::vector<double> mean_shift;                      // length = n_features
    double scale_shift = 1.0;                            // positive
    double label_noise = 0.0;                            // in [0, 0.5)
    std::optional<std::vector<double>> class_prior_target;  // per-class, sums to 1

    void validate(int n_features, int n_classes) const {
        if (static_cast<int>(mean_shift.size()) != n_features) {
            throw PreconditionError("ShiftSpec: mean_shift length " +
                                    std::to_string(mean_shift.size()) + " != n_features " +
                                    std::to_string(n_features));
        }
        if (scale_shift <= 0.0) throw PreconditionError("ShiftSpec: scale_shift must be positive");
        if (label_noise < 0.0 || label_noise >= 0.5) {
            throw PreconditionError("ShiftSpec: label_noise must be in [0, 0.5)");
        }
        if (class_prior_target) {
            if (static_cast<int>(class_prior_target->size()) != n_classes) {
                throw PreconditionError("ShiftSpec: class_prior_target size mismatch");
            }
            double sum = 0.0;
            for (double p : *class_prior_target) sum += p;
            if (std::abs(sum - 1.0) > 1e-9) {
                throw PreconditionError("ShiftSpec: class_prior_target must sum to 1");
            }
        }
    }
};

// Per-class spherical Gaussians, classes assigned round-robin so counts are
// balanced up to rounding. Pure function of (seed, configuration).
inline Dataset generate_gaussian_mixture(std::uint64_t seed, int n_samples, int n_features,
                                         int n_classes,
                                         const std::vector<std::vector<double>>& class_means,
                                         double class_cov_scale) {
    if (n_samples <= 0 || n_features <= 0 || n_classes < 2) {
        throw PreconditionError("generate_gaussian_mixture: degenerate dimensions");
    }
    if (class_cov_scale <= 0.0) {
        throw PreconditionError("generate_gaussian_mixture: class_cov_scale must be positive");
    }
    if (static_cast<int>(class_means.size()) != n_classes) {
        throw PreconditionError("generate_gaussian_mixture: class_means needs one row per class");
    }
    for (const auto& m : class_means) {
        if (static_cast<int>(m.size()) != n_features) {
            throw PreconditionError("generate_gaussian_mixture: class mean width != n_features");
        }
    }

    Rng rng(seed);
    Dataset ds;
    ds.task = Task::classification;
    ds.num_classes = n_classes;
    ds.samples.reserve(n_samples);
    for (int i = 0; i < n_samples; ++i) {
        const int c = i % n_classes;
        Sample s;
        s.id = i;
        s.target = static_cast<double>(c);
        s.features.resize(n_features);
        for (int f = 0; f < n_features; ++f) {
            s.features[f] = rng.normal(class_means[c][f], class_cov_scale);
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// Affine feature transform x -> scale * x + mean_shift, independent label flips
// with probability label_noise, optional rejection sampling to a target class
// prior. Ids are reassigned contiguously from 0.
inline Dataset apply_shift(const Dataset& dataset, const ShiftSpec& shift, std::uint64_t seed) {
    shift.validate(dataset.feature_dim(), dataset.num_classes);
    if (dataset.task != Task::classification && shift.label_noise > 0.0) {
        throw UnsupportedTaskError("apply_shift: label noise is defined for classification only");
    }

    Rng rng(seed);
    Dataset out;
    out.task = dataset.task;
    out.num_classes = dataset.num_classes;

    std::vector<double> accept_prob;
    if (shift.class_prior_target) {
        // empirical class counts
        std::vector<double> counts(dataset.num_classes, 0.0);
        for (const Sample& s : dataset.samples) counts[s.label()] += 1.0;
        const double n = static_cast<double>(dataset.size());
        double max_w = 0.0;
        std::vector<double> w(dataset.num_classes, 0.0);
        for (int c = 0; c < dataset.num_classes; ++c) {
            const double emp = counts[c] / n;
            w[c] = emp > 0.0 ? (*shift.class_prior_target)[c] / emp : 0.0;
            max_w = std::max(max_w, w[c]);
        }
        accept_prob.resize(dataset.num_classes);
        for (int c = 0; c < dataset.num_classes; ++c) {
            accept_prob[c] = max_w > 0.0 ? w[c] / max_w : 0.0;
        }
    }

    for (const Sample& s : dataset.samples) {
        if (!accept_prob.empty() && rng.uniform() >= accept_prob[s.label()]) continue;
        Sample t;
        t.id = static_cast<std::int64_t>(out.samples.size());
        t.features.resize(s.features.size());
        for (std::size_t f = 0; f < s.features.size(); ++f) {
            t.features[f] = shift.scale_shift * s.features[f] + shift.mean_shift[f];
        }
        t.target = s.target;
        if (shift.label_noise > 0.0 && rng.uniform() < shift.label_noise) {
            // flip to a different class, uniform over the others
            const int offset = 1 + static_cast<int>(rng.below(dataset.num_classes - 1));
            t.target = static_cast<double>((s.label() + offset) % dataset.num_classes);
        }
        out.samples.push_back(std::move(t));
    }
    return out;
}

// Seeded shuffle then contiguous assignment. Fractions must be positive and
// sum to 1; every split must be non-empty after rounding.
inline Dataset split_dataset(Dataset dataset, double train_frac, double val_frac,
                             double test_frac, std::uint64_t seed) {
    if (train_frac <= 0.0 || val_frac <= 0.0 || test_frac <= 0.0) {
        throw PreconditionError("split_dataset: fractions must be positive");
    }
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw PreconditionError("split_dataset: fractions must sum to 1");
    }
    const std::size_t n = dataset.size();
    const auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n) + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(n) + 1e-9));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
        throw PreconditionError("split_dataset: a split is empty after rounding");
    }

    std::vector<std::int64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::int64_t>(i);
    Rng rng(seed);
    rng.shuffle(ids);

    dataset.split.assign(n, Split::test);
    for (std::size_t i = 0; i < n_train; ++i) dataset.split[ids[i]] = Split::train;
    for (std::size_t i = n_train; i < n_train + n_val; ++i) dataset.split[ids[i]] = Split::val;
    return dataset;
}

// ---------------------------------------------------------------------------
// CSV ingestion (RFC-4180-style, header row, numeric cells, no quoting)
// ---------------------------------------------------------------------------

struct CsvSchema {
    std::string label_column = "label";
    Task task = Task::classification;
    char delimiter = ',';
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, delim)) cells.push_back(cell);
    if (!line.empty() && line.back() == delim) cells.emplace_back();
    return cells;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("load_csv: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw ParseError("load_csv: " + path + " is empty (no header)");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_line(line, schema.delimiter);

    int label_col = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == schema.label_column) label_col = static_cast<int>(i);
    }
    if (label_col < 0) {
        throw ParseError("load_csv: " + path + " has no column named '" + schema.label_column + "'");
    }

    Dataset ds;
    ds.task = schema.task;
    std::set<double> seen_labels;
    int row = 0;  // 1-based data row index
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++row;
        const auto cells = detail::split_line(line, schema.delimiter);
        if (cells.size() != header.size()) {
            throw ParseError("load_csv: row " + std::to_string(row) + " has " +
                             std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(header.size()));
        }
        Sample s;
        s.id = row - 1;
        s.features.reserve(header.size() - 1);
        for (std::size_t c = 0; c < cells.size(); ++c) {
            double value = 0.0;
            try {
                std::size_t used = 0;
                value = std::stod(cells[c], &used);
                if (used != cells[c].size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw ParseError("load_csv: row " + std::to_string(row) + ", column '" +
                                 header[c] + "': '" + cells[c] + "' is not numeric");
            }
            if (static_cast<int>(c) == label_col) {
                s.target = value;
            } else {
                s.features.push_back(value);
            }
        }
        if (schema.task == Task::classification) seen_labels.insert(s.target);
        ds.samples.push_back(std::move(s));
    }

    if (schema.task == Task::classification) {
        double max_label = 0.0;
        for (double l : seen_labels) {
            if (l < 0.0 || l != std::floor(l)) {
                std::string listing;
                for (double v : seen_labels) {
                    if (!listing.empty()) listing += ", ";
                    listing += detail::format_double(v);
                }
                throw ParseError("load_csv: unknown label value " + detail::format_double(l) +
                                 "; labels seen: [" + listing + "]");
            }
            max_label = std::max(max_label, l);
        }
        ds.num_classes = static_cast<int>(max_label) + 1;
    }
    return ds;
}

// Floats serialized with 17 significant digits for lossless round-trip.
inline void write_csv(const std::string& path, const Dataset& dataset, const CsvSchema& schema) {
    std::ofstream out(path);
    if (!out) throw IoError("write_csv: cannot open " + path + " for writing");
    const int d = dataset.feature_dim();
    for (int f = 0; f < d; ++f) out << "f" << f << schema.delimiter;
    out << schema.label_column << "\n";
    for (const Sample& s : dataset.samples) {
        for (int f = 0; f < d; ++f) out << detail::format_double(s.features[f]) << schema.delimiter;
        out << detail::format_double(s.target) << "\n";
    }
    if (!out) throw IoError("write_csv: write failed for " + path);
}

}  // namespace dprune
