#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "riskgrad/random.hpp"

namespace riskgrad {

using StateId = std::size_t;
using ActionId = std::size_t;

enum class FeatureKind {
    tabular,      ///< one-hot over base states, s ignored
    tabular_aug,  ///< one-hot over (base state, nearest s-grid cell)
    rbf,          ///< Gaussian bumps on a uniform grid over (state coords, s)
    fourier,      ///< cosine basis of a given order over scaled (state coords, s)
    tabular_rbf,  ///< one-hot over base states crossed with a 1-d RBF grid in s
};

std::string to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& name);

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
    double clamp(double value) const;
};

/**
 * Feature map phi(x, s) over plain or augmented states.
 *
 * Smooth kinds take a per-state coordinate table; when `uses_s` is set the
 * running budget s is appended as the last coordinate. Every input coordinate
 * is clamped to its declared range before evaluation.
 */
class FeatureMap {
public:
    static FeatureMap tabular(std::size_t n_states);
    static FeatureMap tabular_augmented(std::size_t n_states, std::vector<double> s_grid);
    /// RBF grid; centers uniform over each range, bandwidth equal to the grid spacing.
    static FeatureMap rbf(std::vector<std::vector<double>> coords, std::vector<Interval> ranges,
                          std::vector<std::size_t> centers_per_dim, bool uses_s);
    static FeatureMap fourier(std::vector<std::vector<double>> coords, std::vector<Interval> ranges,
                              std::size_t order, bool uses_s);
    static FeatureMap tabular_rbf(std::size_t n_states, Interval s_range, std::size_t s_centers);

    FeatureKind kind() const { return kind_; }
    std::size_t dimension() const { return dimension_; }
    std::size_t n_states() const { return n_states_; }
    bool uses_s() const { return uses_s_; }

    void evaluate(StateId x, double s, std::span<double> out) const;
    std::vector<double> operator()(StateId x, double s = 0.0) const;

    nlohmann::json to_json() const;
    static FeatureMap from_json(const nlohmann::json& doc);

private:
    FeatureMap() = default;
    std::vector<double> inputs(StateId x, double s) const;
    void build_grid();

    FeatureKind kind_ = FeatureKind::tabular;
    std::size_t n_states_ = 0;
    std::size_t dimension_ = 0;
    bool uses_s_ = false;
    std::vector<std::vector<double>> coords_;
    std::vector<Interval> ranges_;
    std::vector<std::size_t> centers_per_dim_;
    std::size_t order_ = 0;
    std::vector<double> s_grid_;
    // Flattened grid of centers (rbf) or frequency vectors (fourier), one row per feature.
    std::vector<std::vector<double>> rows_;
    std::vector<double> widths_;
};

/// theta, one block of `block_size` weights per action, confined to [-b, b]^kappa.
struct PolicyParams {
    std::vector<double> theta;
    std::size_t n_actions = 0;
    std::size_t block_size = 0;
    double box_bound = 20.0;

    static PolicyParams zeros(std::size_t n_actions, std::size_t block_size, double box_bound);

    std::span<const double> block(ActionId a) const;
    std::span<double> block(ActionId a);
    /// Euclidean projection onto the box (coordinate clamp).
    void project();
};

/// Softmax over per-action scores theta_a . features.
std::vector<double> action_probabilities(const PolicyParams& params, std::span<const double> features);

/// Block a' of the result equals (1{a' = action} - mu(a'|x)) * features.
std::vector<double> grad_log_policy(const PolicyParams& params, std::span<const double> features,
                                    ActionId action);

/// Boltzmann policy mu(a | x, s; theta) = softmax over theta_a . phi(x, s).
class Policy {
public:
    Policy(std::shared_ptr<const FeatureMap> features, PolicyParams params);
    Policy(std::shared_ptr<const FeatureMap> features, std::size_t n_actions, double box_bound);

    const FeatureMap& features() const { return *features_; }
    std::shared_ptr<const FeatureMap> feature_ptr() const { return features_; }
    const PolicyParams& params() const { return params_; }
    PolicyParams& params() { return params_; }
    std::size_t n_actions() const { return params_.n_actions; }

    std::vector<double> probabilities(StateId x, double s = 0.0) const;
    std::vector<double> grad_log(StateId x, double s, ActionId a) const;
    /// Adds grad log mu(a|x,s) scaled by `weight` into `accumulator`.
    void accumulate_grad_log(StateId x, double s, ActionId a, double weight, std::span<double> accumulator) const;
    ActionId sample(StateId x, double s, RandomSource& rng) const;

    /// Checkpoint: {"kind", "dimension", "theta", "box_bound", "n_actions"}.
    nlohmann::json checkpoint() const;
    void restore(const nlohmann::json& doc);

private:
    std::shared_ptr<const FeatureMap> features_;
    PolicyParams params_;
};

}  // namespace riskgrad
