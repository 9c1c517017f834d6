#pragma once

#include "latentmark/grid.hpp"

namespace latentmark {

struct LossWeights {
    double msg = 0.1;
    double init = 100.0;
    double low = 1000.0;
    double high = 100.0;
};

struct LossBreakdown {
    double msg = 0.0;
    double init = 0.0;
    double low = 0.0;
    double high = 0.0;
    double total = 0.0;
};

// squared difference of grid means
double l_init(const LatentGrid& x_tw, const LatentGrid& x_t);
LatentGrid l_init_grad_xw(const LatentGrid& x_tw, const LatentGrid& x_t);

// squared drift of mean and variance from the initial watermarks, both grids
double l_low(const LatentGrid& w_s, const LatentGrid& w_d, const LatentGrid& ws_init,
             const LatentGrid& wd_init);
LatentGrid l_low_grad(const LatentGrid& w, const LatentGrid& w_init);

// kurtosis + skewness penalties in standardized moments, both grids
double l_high(const LatentGrid& w_s, const LatentGrid& w_d);
LatentGrid l_high_grad(const LatentGrid& w);

LossBreakdown total_loss(double msg, double init, double low, double high,
                         const LossWeights& weights);

// standardized central moment (1/n) sum z^p with biased-std z-scores;
// exposed for the moment-gradient tests
double standardized_moment(const LatentGrid& g, int p);

}  // namespace latentmark
