#pragma once

#include <optional>
#include <vector>

namespace riskgrad {

/// Realizations of a cost random variable Z, optionally with exact probabilities.
class SampleBatch {
public:
    /// Equally weighted samples.
    explicit SampleBatch(std::vector<double> values);
    /// Weighted atoms; weights must be nonnegative and sum to one within 1e-12.
    SampleBatch(std::vector<double> values, std::vector<double> weights);

    const std::vector<double>& values() const { return values_; }
    const std::optional<std::vector<double>>& weights() const { return weights_; }
    std::size_t size() const { return values_.size(); }
    double weight(std::size_t i) const;
    double mean() const;

private:
    std::vector<double> values_;
    std::optional<std::vector<double>> weights_;
};

/// min { z : F_Z(z) >= alpha }; always a sample point.
double var_alpha(const SampleBatch& batch, double alpha);

/// Mean of the worst (1 - alpha) tail, splitting the boundary atom fractionally.
double cvar_alpha(const SampleBatch& batch, double alpha);

/// nu + E[(Z - nu)^+] / (1 - alpha).
double h_alpha(const SampleBatch& batch, double nu, double alpha);

/// Throws RangeError unless 0 < alpha < 1 with 1 - alpha above round-off.
void check_confidence(double alpha);

}  // namespace riskgrad
