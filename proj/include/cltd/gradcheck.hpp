#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cltd/tensor.hpp"

namespace cltd {

/// Central-difference gradient of `f` at `point`.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& point,
                               double eps = 1e-5) {
    Tensor grad(point.shape());
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(probe);
        probe[i] = orig - eps;
        const double down = f(probe);
        probe[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw numerical_error("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

/// |a-b| / max(|a|, |b|, floor)
inline double relative_error(double a, double b, double floor = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-8) {
    analytic.require_same_shape(numeric, "max_relative_error");
    double m = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) m = std::max(m, relative_error(analytic[i], numeric[i], floor));
    return m;
}

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
};

/// Compares `param.grad` (already filled by an analytic backward pass) against
/// central differences of `loss`, perturbing `param.value` in place. Checks at
/// most `max_coords` coordinates, chosen deterministically from `seed`.
/// `rel_floor` is the denominator floor of the relative error.
inline GradCheckResult check_parameter(Parameter& param, const std::function<double()>& loss, double eps = 1e-5,
                                       std::size_t max_coords = 64, std::uint64_t seed = 0, double rel_floor = 1e-8) {
    std::vector<std::size_t> coords(param.value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > max_coords) {
        std::mt19937_64 rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(max_coords);
    }
    GradCheckResult r{param.name, 0.0, coords.size()};
    for (std::size_t i : coords) {
        const double orig = param.value[i];
        param.value[i] = orig + eps;
        const double up = loss();
        param.value[i] = orig - eps;
        const double down = loss();
        param.value[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw numerical_error("gradcheck: non-finite loss perturbing " + param.name);
        r.max_rel_error = std::max(r.max_rel_error, relative_error(param.grad[i], (up - down) / (2.0 * eps), rel_floor));
    }
    return r;
}

}  // namespace cltd
