#include "riskgrad/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "riskgrad/errors.hpp"

namespace riskgrad {

std::string to_string(FeatureKind kind) {
    switch (kind) {
    case FeatureKind::tabular: return "tabular";
    case FeatureKind::tabular_aug: return "tabular_aug";
    case FeatureKind::rbf: return "rbf";
    case FeatureKind::fourier: return "fourier";
    case FeatureKind::tabular_rbf: return "tabular_rbf";
    }
    return "unknown";
}

FeatureKind feature_kind_from_string(const std::string& name) {
    if (name == "tabular") return FeatureKind::tabular;
    if (name == "tabular_aug") return FeatureKind::tabular_aug;
    if (name == "rbf") return FeatureKind::rbf;
    if (name == "fourier") return FeatureKind::fourier;
    if (name == "tabular_rbf") return FeatureKind::tabular_rbf;
    throw InvalidModel("unknown feature kind '" + name + "'");
}

double Interval::clamp(double value) const { return std::clamp(value, lo, hi); }

FeatureMap FeatureMap::tabular(std::size_t n_states) {
    if (n_states == 0) {
        throw InvalidModel("tabular features need at least one state");
    }
    FeatureMap map;
    map.kind_ = FeatureKind::tabular;
    map.n_states_ = n_states;
    map.dimension_ = n_states;
    return map;
}

FeatureMap FeatureMap::tabular_augmented(std::size_t n_states, std::vector<double> s_grid) {
    if (n_states == 0 || s_grid.empty()) {
        throw InvalidModel("tabular_aug features need states and a nonempty s grid");
    }
    std::sort(s_grid.begin(), s_grid.end());
    FeatureMap map;
    map.kind_ = FeatureKind::tabular_aug;
    map.n_states_ = n_states;
    map.uses_s_ = true;
    map.s_grid_ = std::move(s_grid);
    map.dimension_ = n_states * map.s_grid_.size();
    return map;
}

FeatureMap FeatureMap::rbf(std::vector<std::vector<double>> coords, std::vector<Interval> ranges,
                           std::vector<std::size_t> centers_per_dim, bool uses_s) {
    FeatureMap map;
    map.kind_ = FeatureKind::rbf;
    map.n_states_ = coords.size();
    map.uses_s_ = uses_s;
    map.coords_ = std::move(coords);
    map.ranges_ = std::move(ranges);
    map.centers_per_dim_ = std::move(centers_per_dim);
    map.build_grid();
    return map;
}

FeatureMap FeatureMap::fourier(std::vector<std::vector<double>> coords, std::vector<Interval> ranges,
                               std::size_t order, bool uses_s) {
    FeatureMap map;
    map.kind_ = FeatureKind::fourier;
    map.n_states_ = coords.size();
    map.uses_s_ = uses_s;
    map.coords_ = std::move(coords);
    map.ranges_ = std::move(ranges);
    map.order_ = order;
    map.build_grid();
    return map;
}

FeatureMap FeatureMap::tabular_rbf(std::size_t n_states, Interval s_range, std::size_t s_centers) {
    if (n_states == 0 || s_centers == 0) {
        throw InvalidModel("tabular_rbf features need states and at least one s center");
    }
    FeatureMap map;
    map.kind_ = FeatureKind::tabular_rbf;
    map.n_states_ = n_states;
    map.uses_s_ = true;
    map.ranges_ = {s_range};
    map.centers_per_dim_ = {s_centers};
    map.build_grid();
    map.dimension_ = n_states * s_centers;
    return map;
}

void FeatureMap::build_grid() {
    const std::size_t n_coord = coords_.empty() ? 0 : coords_.front().size();
    for (const auto& row : coords_) {
        if (row.size() != n_coord) {
            throw InvalidModel("feature coordinate rows have inconsistent length");
        }
        for (double v : row) {
            if (!std::isfinite(v)) {
                throw InvalidModel("feature coordinates must be finite");
            }
        }
    }
    const std::size_t n_dim = kind_ == FeatureKind::tabular_rbf ? 1 : n_coord + (uses_s_ ? 1 : 0);
    if (n_dim == 0 || ranges_.size() != n_dim) {
        throw InvalidModel("feature map needs one range per input coordinate");
    }
    for (const auto& r : ranges_) {
        if (!(r.hi >= r.lo)) {
            throw InvalidModel("feature range must satisfy lo <= hi");
        }
    }

    std::vector<std::vector<double>> axes(n_dim);
    widths_.assign(n_dim, 1.0);
    if (kind_ == FeatureKind::fourier) {
        for (auto& axis : axes) {
            for (std::size_t c = 0; c <= order_; ++c) {
                axis.push_back(static_cast<double>(c));
            }
        }
    } else {
        if (centers_per_dim_.size() != n_dim) {
            throw InvalidModel("rbf grid needs a center count per input coordinate");
        }
        for (std::size_t d = 0; d < n_dim; ++d) {
            const std::size_t m = centers_per_dim_[d];
            if (m == 0) {
                throw InvalidModel("rbf grid needs at least one center per coordinate");
            }
            const double span = ranges_[d].hi - ranges_[d].lo;
            if (m == 1) {
                axes[d].push_back(0.5 * (ranges_[d].lo + ranges_[d].hi));
                widths_[d] = span > 0.0 ? span : 1.0;
            } else {
                const double step = span / static_cast<double>(m - 1);
                for (std::size_t i = 0; i < m; ++i) {
                    axes[d].push_back(ranges_[d].lo + step * static_cast<double>(i));
                }
                widths_[d] = step > 0.0 ? step : 1.0;
            }
        }
    }

    // Cartesian product, last coordinate fastest.
    rows_.assign(1, {});
    for (const auto& axis : axes) {
        std::vector<std::vector<double>> next;
        next.reserve(rows_.size() * axis.size());
        for (const auto& prefix : rows_) {
            for (double v : axis) {
                auto row = prefix;
                row.push_back(v);
                next.push_back(std::move(row));
            }
        }
        rows_ = std::move(next);
    }
    dimension_ = rows_.size();
}

std::vector<double> FeatureMap::inputs(StateId x, double s) const {
    std::vector<double> z;
    if (kind_ == FeatureKind::tabular_rbf) {
        z.push_back(ranges_[0].clamp(s));
        return z;
    }
    z = coords_.at(x);
    if (uses_s_) {
        z.push_back(s);
    }
    for (std::size_t d = 0; d < z.size(); ++d) {
        z[d] = ranges_[d].clamp(z[d]);
    }
    return z;
}

void FeatureMap::evaluate(StateId x, double s, std::span<double> out) const {
    if (out.size() != dimension_) {
        throw DimensionMismatch("feature buffer has size " + std::to_string(out.size()) + ", expected " +
                                std::to_string(dimension_));
    }
    if (x >= n_states_) {
        throw InvalidModel("state id " + std::to_string(x) + " outside feature map");
    }
    std::fill(out.begin(), out.end(), 0.0);
    switch (kind_) {
    case FeatureKind::tabular:
        out[x] = 1.0;
        return;
    case FeatureKind::tabular_aug: {
        auto it = std::lower_bound(s_grid_.begin(), s_grid_.end(), s);
        std::size_t cell = 0;
        if (it == s_grid_.end()) {
            cell = s_grid_.size() - 1;
        } else if (it == s_grid_.begin()) {
            cell = 0;
        } else {
            const auto hi = static_cast<std::size_t>(it - s_grid_.begin());
            cell = (s - s_grid_[hi - 1] <= s_grid_[hi] - s) ? hi - 1 : hi;
        }
        out[x * s_grid_.size() + cell] = 1.0;
        return;
    }
    case FeatureKind::tabular_rbf: {
        const double z = ranges_[0].clamp(s);
        const std::size_t m = rows_.size();
        for (std::size_t j = 0; j < m; ++j) {
            const double u = (z - rows_[j][0]) / widths_[0];
            out[x * m + j] = std::exp(-0.5 * u * u);
        }
        return;
    }
    case FeatureKind::rbf: {
        const auto z = inputs(x, s);
        for (std::size_t j = 0; j < rows_.size(); ++j) {
            double sq = 0.0;
            for (std::size_t d = 0; d < z.size(); ++d) {
                const double u = (z[d] - rows_[j][d]) / widths_[d];
                sq += u * u;
            }
            out[j] = std::exp(-0.5 * sq);
        }
        return;
    }
    case FeatureKind::fourier: {
        auto z = inputs(x, s);
        for (std::size_t d = 0; d < z.size(); ++d) {
            const double span = ranges_[d].hi - ranges_[d].lo;
            z[d] = span > 0.0 ? (z[d] - ranges_[d].lo) / span : 0.0;
        }
        for (std::size_t j = 0; j < rows_.size(); ++j) {
            double dot = 0.0;
            for (std::size_t d = 0; d < z.size(); ++d) {
                dot += rows_[j][d] * z[d];
            }
            out[j] = std::cos(std::numbers::pi * dot);
        }
        return;
    }
    }
}

std::vector<double> FeatureMap::operator()(StateId x, double s) const {
    std::vector<double> out(dimension_);
    evaluate(x, s, out);
    return out;
}

nlohmann::json FeatureMap::to_json() const {
    nlohmann::json doc;
    doc["kind"] = to_string(kind_);
    doc["dimension"] = dimension_;
    doc["n_states"] = n_states_;
    doc["uses_s"] = uses_s_;
    if (!coords_.empty()) doc["coords"] = coords_;
    if (!ranges_.empty()) {
        auto& arr = doc["ranges"] = nlohmann::json::array();
        for (const auto& r : ranges_) arr.push_back({r.lo, r.hi});
    }
    if (!centers_per_dim_.empty()) doc["centers"] = centers_per_dim_;
    if (kind_ == FeatureKind::fourier) doc["order"] = order_;
    if (!s_grid_.empty()) doc["s_grid"] = s_grid_;
    return doc;
}

FeatureMap FeatureMap::from_json(const nlohmann::json& doc) {
    const auto kind = feature_kind_from_string(doc.at("kind").get<std::string>());
    auto ranges = [&] {
        std::vector<Interval> out;
        for (const auto& r : doc.at("ranges")) out.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
        return out;
    };
    switch (kind) {
    case FeatureKind::tabular: return tabular(doc.at("n_states").get<std::size_t>());
    case FeatureKind::tabular_aug:
        return tabular_augmented(doc.at("n_states").get<std::size_t>(), doc.at("s_grid").get<std::vector<double>>());
    case FeatureKind::rbf:
        return rbf(doc.at("coords").get<std::vector<std::vector<double>>>(), ranges(),
                   doc.at("centers").get<std::vector<std::size_t>>(), doc.value("uses_s", false));
    case FeatureKind::fourier:
        return fourier(doc.at("coords").get<std::vector<std::vector<double>>>(), ranges(),
                       doc.at("order").get<std::size_t>(), doc.value("uses_s", false));
    case FeatureKind::tabular_rbf: {
        const auto r = ranges();
        return tabular_rbf(doc.at("n_states").get<std::size_t>(), r.at(0),
                           doc.at("centers").get<std::vector<std::size_t>>().at(0));
    }
    }
    throw InvalidModel("unreachable feature kind");
}

PolicyParams PolicyParams::zeros(std::size_t n_actions, std::size_t block_size, double box_bound) {
    if (n_actions == 0 || block_size == 0) {
        throw InvalidModel("policy needs at least one action and a nonempty feature block");
    }
    if (!(box_bound > 0.0)) {
        throw InvalidModel("policy box bound must be positive");
    }
    PolicyParams p;
    p.theta.assign(n_actions * block_size, 0.0);
    p.n_actions = n_actions;
    p.block_size = block_size;
    p.box_bound = box_bound;
    return p;
}

std::span<const double> PolicyParams::block(ActionId a) const {
    return std::span<const double>(theta).subspan(a * block_size, block_size);
}

std::span<double> PolicyParams::block(ActionId a) {
    return std::span<double>(theta).subspan(a * block_size, block_size);
}

void PolicyParams::project() {
    for (double& t : theta) {
        t = std::clamp(t, -box_bound, box_bound);
    }
}

namespace {

void check_dims(const PolicyParams& params, std::span<const double> features) {
    if (features.size() != params.block_size || params.theta.size() != params.n_actions * params.block_size) {
        throw DimensionMismatch("features have dimension " + std::to_string(features.size()) +
                                " but policy blocks have size " + std::to_string(params.block_size));
    }
}

}  // namespace

std::vector<double> action_probabilities(const PolicyParams& params, std::span<const double> features) {
    check_dims(params, features);
    std::vector<double> scores(params.n_actions);
    for (ActionId a = 0; a < params.n_actions; ++a) {
        const auto w = params.block(a);
        double dot = 0.0;
        for (std::size_t i = 0; i < features.size(); ++i) {
            dot += w[i] * features[i];
        }
        scores[a] = dot;
    }
    const double top = *std::max_element(scores.begin(), scores.end());
    double total = 0.0;
    for (double& v : scores) {
        v = std::exp(v - top);
        total += v;
    }
    for (double& v : scores) {
        v /= total;
    }
    return scores;
}

std::vector<double> grad_log_policy(const PolicyParams& params, std::span<const double> features, ActionId action) {
    if (action >= params.n_actions) {
        throw DimensionMismatch("action id out of range");
    }
    const auto probs = action_probabilities(params, features);
    std::vector<double> grad(params.theta.size());
    for (ActionId b = 0; b < params.n_actions; ++b) {
        const double coef = (b == action ? 1.0 : 0.0) - probs[b];
        for (std::size_t i = 0; i < features.size(); ++i) {
            grad[b * params.block_size + i] = coef * features[i];
        }
    }
    return grad;
}

Policy::Policy(std::shared_ptr<const FeatureMap> features, PolicyParams params)
    : features_(std::move(features)), params_(std::move(params)) {
    if (!features_) {
        throw InvalidModel("policy needs a feature map");
    }
    if (params_.block_size != features_->dimension() ||
        params_.theta.size() != params_.n_actions * params_.block_size) {
        throw DimensionMismatch("policy parameters do not match the feature dimension");
    }
}

Policy::Policy(std::shared_ptr<const FeatureMap> features, std::size_t n_actions, double box_bound)
    : Policy(features, PolicyParams::zeros(n_actions, features ? features->dimension() : 0, box_bound)) {}

std::vector<double> Policy::probabilities(StateId x, double s) const {
    return action_probabilities(params_, (*features_)(x, s));
}

std::vector<double> Policy::grad_log(StateId x, double s, ActionId a) const {
    return grad_log_policy(params_, (*features_)(x, s), a);
}

void Policy::accumulate_grad_log(StateId x, double s, ActionId a, double weight,
                                 std::span<double> accumulator) const {
    const auto phi = (*features_)(x, s);
    const auto probs = action_probabilities(params_, phi);
    for (ActionId b = 0; b < params_.n_actions; ++b) {
        const double coef = weight * ((b == a ? 1.0 : 0.0) - probs[b]);
        if (coef == 0.0) continue;
        for (std::size_t i = 0; i < phi.size(); ++i) {
            accumulator[b * params_.block_size + i] += coef * phi[i];
        }
    }
}

ActionId Policy::sample(StateId x, double s, RandomSource& rng) const {
    return rng.categorical(probabilities(x, s));
}

nlohmann::json Policy::checkpoint() const {
    return {{"kind", to_string(features_->kind())},
            {"dimension", features_->dimension()},
            {"n_actions", params_.n_actions},
            {"theta", params_.theta},
            {"box_bound", params_.box_bound}};
}

void Policy::restore(const nlohmann::json& doc) {
    if (doc.at("dimension").get<std::size_t>() != features_->dimension()) {
        throw DimensionMismatch("checkpoint dimension does not match feature map");
    }
    auto theta = doc.at("theta").get<std::vector<double>>();
    const std::size_t n_actions = doc.value("n_actions", theta.size() / features_->dimension());
    if (theta.size() != n_actions * features_->dimension()) {
        throw DimensionMismatch("checkpoint theta has the wrong length");
    }
    params_.theta = std::move(theta);
    params_.n_actions = n_actions;
    params_.block_size = features_->dimension();
    params_.box_bound = doc.at("box_bound").get<double>();
}

}  // namespace riskgrad
