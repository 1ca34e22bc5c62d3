#include "riskgrad/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "riskgrad/errors.hpp"

namespace riskgrad {

double PowerStep::operator()(std::size_t k) const {
    return coefficient / std::pow(static_cast<double>(k == 0 ? 1 : k) + offset, exponent);
}

void StepSchedule::validate() const {
    const PowerStep* zetas[] = {&zeta1, &zeta2, &zeta3, &zeta4};
    for (const auto* z : zetas) {
        if (!(z->offset >= 0.0)) {
            throw ConfigInvalid("step-size offsets must be nonnegative");
        }
        if (!(z->coefficient > 0.0)) {
            throw ConfigInvalid("step-size coefficients must be positive");
        }
        if (!(z->exponent > 0.5 && z->exponent <= 1.0)) {
            throw ConfigInvalid("step-size exponents must lie in (0.5, 1]");
        }
    }
    for (int i = 0; i < 3; ++i) {
        if (!(zetas[i]->exponent > zetas[i + 1]->exponent)) {
            throw ConfigInvalid("step-size exponents must strictly decrease from zeta1 to zeta4");
        }
    }
    if (!(spsa.coefficient > 0.0 && spsa.exponent > 0.0)) {
        throw ConfigInvalid("SPSA perturbation must decay to zero");
    }
    if (!(2.0 * (zeta2.exponent - spsa.exponent) > 1.0)) {
        throw ConfigInvalid("sum of (zeta2 / Delta)^2 must converge");
    }
}

bool StepSchedule::ordered_at(std::size_t k) const {
    return zeta1(k) < zeta2(k) && zeta2(k) < zeta3(k) && zeta3(k) < zeta4(k);
}

std::size_t StepSchedule::ordered_from() const {
    // With decreasing exponents each ratio zeta_{i+1}/zeta_i eventually grows without bound;
    // bisect for the point where the pair becomes ordered.
    constexpr std::size_t kLimit = std::size_t{1} << 40;
    const PowerStep* zetas[] = {&zeta1, &zeta2, &zeta3, &zeta4};
    std::size_t first = 1;
    for (int i = 0; i < 3; ++i) {
        const auto ordered = [&](std::size_t k) { return (*zetas[i])(k) < (*zetas[i + 1])(k); };
        if (!ordered(kLimit)) {
            return std::numeric_limits<std::size_t>::max();
        }
        std::size_t lo = 0;  // last known unordered (0 = none)
        std::size_t hi = 1;
        while (!ordered(hi)) {
            lo = hi;
            hi *= 2;
        }
        while (hi - lo > 1 && lo > 0) {
            const std::size_t mid = lo + (hi - lo) / 2;
            (ordered(mid) ? hi : lo) = mid;
        }
        first = std::max(first, hi);
    }
    return first;
}

nlohmann::json StepSchedule::to_json() const {
    auto one = [](const PowerStep& p) {
        return nlohmann::json{{"c", p.coefficient}, {"p", p.exponent}, {"k0", p.offset}};
    };
    return {{"zeta1", one(zeta1)}, {"zeta2", one(zeta2)}, {"zeta3", one(zeta3)}, {"zeta4", one(zeta4)},
            {"spsa", one(spsa)}};
}

StepSchedule StepSchedule::from_json(const nlohmann::json& doc) {
    StepSchedule s;
    auto read = [&](const char* key, PowerStep& out) {
        if (doc.contains(key)) {
            const auto& node = doc.at(key);
            out.coefficient = node.value("c", out.coefficient);
            out.exponent = node.value("p", out.exponent);
            out.offset = node.value("k0", out.offset);
        }
    };
    read("zeta1", s.zeta1);
    read("zeta2", s.zeta2);
    read("zeta3", s.zeta3);
    read("zeta4", s.zeta4);
    read("spsa", s.spsa);
    return s;
}

}  // namespace riskgrad
