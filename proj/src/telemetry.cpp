#include "riskgrad/telemetry.hpp"

#include <fmt/format.h>

namespace riskgrad {

TelemetryCsv::TelemetryCsv(std::ostream& out, bool actor_critic) : out_(out), actor_critic_(actor_critic) {
    out_ << "round,k,nu,lambda,lambda_max,g_nu,g_theta_norm,g_lambda,mean_g,cvar_g,mean_j,cvar_j";
    if (actor_critic_) {
        out_ << ",td_abs,critic_residual";
    }
    out_ << '\n';
}

void TelemetryCsv::write(const TelemetryRow& r) {
    out_ << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}", r.round, r.k, r.nu, r.lambda, r.lambda_max, r.g_nu,
                        r.g_theta_norm, r.g_lambda, r.mean_g, r.cvar_g, r.mean_j, r.cvar_j);
    if (actor_critic_) {
        out_ << fmt::format(",{},{}", r.td_abs, r.critic_residual);
    }
    out_ << '\n';
}

}  // namespace riskgrad
