#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mets/sampler.hpp"

namespace mets {

struct GewekeShape
{
    int subjects = 5;
    int visits = 3;
    int P = 3;
    int K = 2;
    bool tcar = false;
};

struct GewekeSettings
{
    /// Draws from each of the two simulators.
    int iterations = 100000;
    /// Independent successive-conditional chains, each started from a forward
    /// draw; the standard error comes from the spread of their means.
    int chains = 200;
    std::uint64_t seed = 1;
    KernelOptions kernel;
};

struct GewekeStatistic
{
    std::string name;
    double forward_mean = 0.0;
    double gibbs_mean = 0.0;
    double z = 0.0;
};

struct GewekeReport
{
    std::vector<GewekeStatistic> statistics;
    /// Chains stopped early by a numerical failure (never happens with correct kernels).
    int failed_chains = 0;

    double max_abs_z() const;
};

/// Joint-distribution test: compares moments from forward (prior, then data)
/// simulation with moments from alternating Gibbs sweeps and data redraws.
GewekeReport geweke_test(const GewekeShape& shape, const GewekeSettings& settings);

}  // namespace mets
