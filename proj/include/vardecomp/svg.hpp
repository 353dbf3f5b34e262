#pragma once

#include <string>

#include "vardecomp/simulation.hpp"

namespace vardecomp {

// Grouped bar chart of the sampling-distribution means for the case-mix,
// between-hospital and between-surgeon components: black bars for the 95%
// sampling quantile intervals, blue bars for the Monte Carlo CI of the mean,
// red dots (with 3-decimal labels) for the truth where available.
std::string components_bar_svg(const ReplicationResult& result, const std::string& title);

// Kernel density curves of the sampling distributions of the three
// components for one method.
std::string density_svg(const ReplicationResult& result, DecompositionMethod method,
                        const std::string& title);

// Side-by-side bars comparing the three-way decomposition (case-mix,
// between-hospital, residual) with the same quantities assembled from the
// four-way path (residual = between_surgeon + residual).
std::string threeway_comparison_svg(const ReplicationResult& result, const std::string& title);

}  // namespace vardecomp
