#pragma once

#include <optional>
#include <string>
#include <vector>

#include "latentmark/grid.hpp"
#include "latentmark/schedule.hpp"

namespace latentmark {

// Isotropic gaussian mixture over clean latents. Labels make a subset of
// components addressable as the "conditional" model for guidance.
struct MixtureComponent {
    double weight = 1.0;
    LatentGrid mean;
    double sigma2 = 1.0;
    std::string label;
};

class MixturePrior {
public:
    explicit MixturePrior(std::vector<MixtureComponent> components);

    const std::vector<MixtureComponent>& components() const { return components_; }
    int channels() const;
    int height() const;
    int width() const;

    // indices of components carrying this label; throws ConditionError if none
    std::vector<int> conditional_set(const std::string& label) const;

    // mixture mean of the clean latents (used as a stand-in natural image)
    LatentGrid prior_mean() const;

    LatentGrid sample(Rng& rng) const;

private:
    std::vector<MixtureComponent> components_;
};

// Exact denoiser for the mixture prior: the diffused marginal stays a
// mixture, so the score and hence eps_hat have closed forms.
LatentGrid analytic_epsilon(const LatentGrid& x, int t, const MixturePrior& prior,
                            const std::optional<std::string>& condition,
                            const NoiseScheduleD& sched);

// eps_u + scale * (eps_c - eps_u)
LatentGrid guided_epsilon(const LatentGrid& x, int t, const MixturePrior& prior,
                          const std::string& condition, double scale,
                          const NoiseScheduleD& sched);

// (d eps_hat / d x)^T a; the jacobian is symmetric so this is also the JVP
LatentGrid epsilon_vjp(const LatentGrid& x, int t, const MixturePrior& prior,
                       const std::optional<std::string>& condition,
                       const NoiseScheduleD& sched, const LatentGrid& a);

LatentGrid guided_epsilon_vjp(const LatentGrid& x, int t, const MixturePrior& prior,
                              const std::string& condition, double scale,
                              const NoiseScheduleD& sched, const LatentGrid& a);

}  // namespace latentmark
