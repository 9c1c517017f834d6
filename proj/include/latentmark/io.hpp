#pragma once

#include <string>

#include "latentmark/codec.hpp"
#include "latentmark/grid.hpp"
#include "latentmark/watermark.hpp"

namespace latentmark {

// Binary artifact formats, native little-endian doubles.
//   grid:      "LMGRID\0\0" | u32 version | u32 dtype bytes | u32 c,h,w |
//              values in channel-major row order
//   watermark: "LMWMRK\0\0" | u32 version | u32 c,h,w | f64 init_variance,
//              f64 sigma_td | u64 seed | w_s values | w_d values
//   carriers:  "LMCARR\0\0" | u32 version | u32 k, dim | u64 seed |
//              mean[dim] | whiten[dim*dim] | carriers[k*dim], matrices in
//              Eigen's column-major order

void write_grid(const std::string& path, const LatentGrid& g);
LatentGrid read_grid(const std::string& path);

void write_watermarks(const std::string& path, const WatermarkPair& pair, std::uint64_t seed);
struct StoredWatermarks {
    WatermarkPair pair;
    std::uint64_t seed = 0;
};
StoredWatermarks read_watermarks(const std::string& path);

void write_carriers(const std::string& path, const CarrierSet& cs);
CarrierSet read_carriers(const std::string& path);

}  // namespace latentmark
