#pragma once

#include <cstddef>

#include "json.hpp"

namespace riskgrad {

/// zeta(k) = coefficient / (k + offset)^exponent, k >= 1.
struct PowerStep {
    double coefficient = 1.0;
    double exponent = 1.0;
    double offset = 0.0;

    double operator()(std::size_t k) const;
};

/**
 * Step sizes of the coupled recursions, slowest first:
 * zeta1 (lambda), zeta2 (theta), zeta3 (nu), zeta4 (critic), plus the SPSA
 * perturbation width. Exponents in (1/2, 1] keep each sequence non-summable
 * and square-summable.
 */
struct StepSchedule {
    PowerStep zeta1{0.5, 1.0, 0.0};
    PowerStep zeta2{1.0, 0.85, 0.0};
    PowerStep zeta3{1.0, 0.7, 0.0};
    PowerStep zeta4{1.0, 0.55, 0.0};
    PowerStep spsa{1.0, 0.3, 0.0};

    /**
     * Throws ConfigInvalid unless every zeta exponent lies in (1/2, 1], the
     * exponents strictly decrease from zeta1 to zeta4 (so each sequence is o()
     * of the next), the SPSA width decays and sum (zeta2/Delta)^2 converges,
     * i.e. 2 (p2 - pDelta) > 1. Coefficients are not compared: the parameters
     * carry different units, so which step is larger at a given k depends on
     * the cost scale. Use ordered_at / ordered_from for that.
     */
    void validate() const;

    /// zeta1(k) < zeta2(k) < zeta3(k) < zeta4(k).
    bool ordered_at(std::size_t k) const;
    /// First k from which the strict ordering holds for good (given valid exponents).
    std::size_t ordered_from() const;

    nlohmann::json to_json() const;
    static StepSchedule from_json(const nlohmann::json& doc);
};

}  // namespace riskgrad
