#pragma once

#include <string>
#include <vector>

#include "pidtune/linalg.hpp"

namespace pidtune::gp {

/// Supervised pairs for dynamics learning: rows are samples, input columns
/// are the regressor state, target columns are the one-step differences.
struct TrainingSet {
    Matrix inputs;   // N x D_in
    Matrix targets;  // N x D_out

    Index size() const { return inputs.rows(); }
    Index input_dim() const { return inputs.cols(); }
    Index output_dim() const { return targets.cols(); }

    void validate() const {
        require(inputs.rows() == targets.rows(), "TrainingSet: row count mismatch");
        require(inputs.rows() >= 2, "TrainingSet: need at least two samples");
        require(inputs.allFinite() && targets.allFinite(),
                "TrainingSet: non-finite entries");
    }
};

struct ColumnStats {
    Vector mean;
    Vector std;  // zero-variance columns keep std = 1 (left unscaled)
};

inline ColumnStats column_stats(const Matrix& m, std::vector<std::string>* warnings = nullptr) {
    ColumnStats s;
    s.mean = m.colwise().mean();
    s.std.resize(m.cols());
    for (Index j = 0; j < m.cols(); ++j) {
        const double var =
            (m.col(j).array() - s.mean(j)).square().sum() / std::max<Index>(1, m.rows() - 1);
        const double sd = std::sqrt(var);
        if (sd < 1e-12 * (1.0 + std::abs(s.mean(j)))) {
            s.std(j) = 1.0;
            if (warnings)
                warnings->push_back("column " + std::to_string(j) +
                                    " has zero variance; left unscaled");
        } else {
            s.std(j) = sd;
        }
    }
    return s;
}

/// Z-scoring of inputs and targets with stored statistics. normalize and
/// denormalize round-trip exactly up to floating point.
struct Normalizer {
    ColumnStats in;
    ColumnStats out;

    static Normalizer fit(const TrainingSet& data, std::vector<std::string>* warnings = nullptr) {
        data.validate();
        return {column_stats(data.inputs, warnings), column_stats(data.targets, warnings)};
    }

    static Matrix apply(const Matrix& m, const ColumnStats& s) {
        return (m.rowwise() - s.mean.transpose()).array().rowwise() /
               s.std.transpose().array();
    }
    static Matrix invert(const Matrix& m, const ColumnStats& s) {
        return (m.array().rowwise() * s.std.transpose().array()).matrix().rowwise() +
               s.mean.transpose();
    }

    TrainingSet normalize(const TrainingSet& data) const {
        return {apply(data.inputs, in), apply(data.targets, out)};
    }
    TrainingSet denormalize(const TrainingSet& data) const {
        return {invert(data.inputs, in), invert(data.targets, out)};
    }
};

}  // namespace pidtune::gp
