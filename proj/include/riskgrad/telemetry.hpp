#pragma once

#include <cstddef>
#include <ostream>

namespace riskgrad {

/// One line of optimizer telemetry.
struct TelemetryRow {
    std::size_t round = 0;
    std::size_t k = 0;
    double nu = 0.0;
    double lambda = 0.0;
    double lambda_max = 0.0;
    double g_nu = 0.0;
    double g_theta_norm = 0.0;
    double g_lambda = 0.0;
    double mean_g = 0.0;
    double cvar_g = 0.0;
    double mean_j = 0.0;
    double cvar_j = 0.0;
    // Actor-critic only.
    double td_abs = 0.0;
    double critic_residual = 0.0;
};

/**
 * CSV telemetry writer. Numbers are printed in shortest round-trip form so a
 * fixed seed reproduces the file byte for byte.
 */
class TelemetryCsv {
public:
    TelemetryCsv(std::ostream& out, bool actor_critic);
    void write(const TelemetryRow& row);

private:
    std::ostream& out_;
    bool actor_critic_;
};

}  // namespace riskgrad
