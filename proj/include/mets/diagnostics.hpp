#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mets/sampler.hpp"

namespace mets {

struct RhatEss
{
    double rhat = 1.0;
    double ess = 0.0;
};

/// Split-R-hat on the raw values and rank-normalized bulk ESS.
/// Requires >= 2 chains of equal length >= 4; constant input gives R-hat 1
/// and ESS equal to the total draw count.
RhatEss rhat_ess(const std::vector<std::vector<double>>& chains);

/// Same, for a scalar function of each retained draw.
RhatEss rhat_ess(const PosteriorDraws& draws, const std::function<double(const Draw&)>& selector);

/// R-hat and ESS for the standard scalar panel (beta, Sigma_Y diagonal, mu_b,
/// tau, phi, log joint). Names use covariate names when given.
std::vector<ScalarDiagnostic> diagnostic_panel(const PosteriorDraws& draws,
                                               const std::vector<std::string>& covariate_names = {});

/// Effective sample size of one chain (Geyer initial monotone sequence).
double effective_sample_size(const std::vector<double>& chain);

}  // namespace mets
