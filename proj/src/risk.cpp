#include "riskgrad/risk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "riskgrad/errors.hpp"

namespace riskgrad {

namespace {

constexpr double kWeightTolerance = 1e-12;
// CDF comparisons tolerate accumulated round-off in the partial sums.
constexpr double kCdfSlack = 1e-12;

struct Atom {
    double value;
    double weight;
};

/// Sorted distinct atoms with aggregated weights.
std::vector<Atom> atoms(const SampleBatch& batch) {
    std::vector<Atom> raw(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        raw[i] = {batch.values()[i], batch.weight(i)};
    }
    std::sort(raw.begin(), raw.end(), [](const Atom& a, const Atom& b) { return a.value < b.value; });
    std::vector<Atom> merged;
    for (const auto& a : raw) {
        if (!merged.empty() && merged.back().value == a.value) {
            merged.back().weight += a.weight;
        } else {
            merged.push_back(a);
        }
    }
    return merged;
}

}  // namespace

SampleBatch::SampleBatch(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) {
        throw EmptyBatch("sample batch is empty");
    }
}

SampleBatch::SampleBatch(std::vector<double> values, std::vector<double> weights)
    : values_(std::move(values)), weights_(std::move(weights)) {
    if (values_.empty()) {
        throw EmptyBatch("sample batch is empty");
    }
    if (weights_->size() != values_.size()) {
        throw InvalidModel("weights and values differ in length");
    }
    double total = 0.0;
    for (double w : *weights_) {
        if (!(w >= 0.0)) {
            throw InvalidModel("sample weights must be nonnegative");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > kWeightTolerance) {
        throw InvalidModel("sample weights sum to " + std::to_string(total) + ", not 1");
    }
}

double SampleBatch::weight(std::size_t i) const {
    return weights_ ? (*weights_)[i] : 1.0 / static_cast<double>(values_.size());
}

double SampleBatch::mean() const {
    if (!weights_) {
        return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
    }
    double m = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        m += values_[i] * (*weights_)[i];
    }
    return m;
}

void check_confidence(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0) || 1.0 - alpha < 1e-12) {
        throw RangeError("confidence level must lie strictly inside (0, 1), got " + std::to_string(alpha));
    }
}

double var_alpha(const SampleBatch& batch, double alpha) {
    check_confidence(alpha);
    const auto sorted = atoms(batch);
    double cdf = 0.0;
    for (const auto& a : sorted) {
        cdf += a.weight;
        if (cdf >= alpha - kCdfSlack) {
            return a.value;
        }
    }
    return sorted.back().value;
}

double cvar_alpha(const SampleBatch& batch, double alpha) {
    check_confidence(alpha);
    const auto sorted = atoms(batch);
    // Walk down from the worst atom, taking mass until 1 - alpha has been collected.
    const double tail = 1.0 - alpha;
    double remaining = tail;
    double acc = 0.0;
    for (auto it = sorted.rbegin(); it != sorted.rend() && remaining > 0.0; ++it) {
        const double take = std::min(it->weight, remaining);
        acc += take * it->value;
        remaining -= take;
    }
    if (remaining > 0.0) {
        // Round-off left a sliver; it belongs to the smallest atom.
        acc += remaining * sorted.front().value;
    }
    return acc / tail;
}

double h_alpha(const SampleBatch& batch, double nu, double alpha) {
    check_confidence(alpha);
    double excess = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        excess += batch.weight(i) * std::max(batch.values()[i] - nu, 0.0);
    }
    return nu + excess / (1.0 - alpha);
}

}  // namespace riskgrad
