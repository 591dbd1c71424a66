#pragma once

// Central finite-difference checks of the analytic loss gradients.

#include "pkd/feature.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pkd {

inline constexpr double kGradcheckStep = 1e-3;
inline constexpr double kGradcheckTolerance = 1e-4;

// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|, 1e-12)
double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric);

// (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.
std::vector<double> central_differences(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> x, double step = kGradcheckStep);

struct GradcheckRow {
    std::string name;
    double max_rel_error = 0.0;
    bool pass = false;
};

// Checks pkd, mse, mse with adapter (student and adapter parameters) and
// norm-kl on a seeded random level of the given shape. corrupt perturbs the
// analytic gradients as a negative control.
std::vector<GradcheckRow> gradcheck_losses(const Shape4& shape, std::uint64_t seed, double temperature,
                                           const std::vector<std::string>& kinds, bool corrupt = false);

} // namespace pkd
