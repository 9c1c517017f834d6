#include "latentmark/io.hpp"

#include <cstring>
#include <fstream>

namespace latentmark {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get_bytes(std::istream& is, void* p, std::size_t n, const std::string& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) throw IoError("truncated or unreadable file: " + path);
}

template <typename T>
void put(std::ostream& os, T v) {
    put_bytes(os, &v, sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
    T v;
    get_bytes(is, &v, sizeof(T), path);
    return v;
}

void put_magic(std::ostream& os, const char* magic) {
    char buf[8] = {};
    std::memcpy(buf, magic, std::strlen(magic));
    put_bytes(os, buf, 8);
}

void check_magic(std::istream& is, const char* magic, const std::string& path) {
    char buf[8] = {};
    get_bytes(is, buf, 8, path);
    char want[8] = {};
    std::memcpy(want, magic, std::strlen(magic));
    if (std::memcmp(buf, want, 8) != 0) throw IoError("bad magic in " + path);
    const auto version = get<std::uint32_t>(is, path);
    if (version != kVersion) throw IoError("unsupported version in " + path);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path);
    return is;
}

void put_grid_values(std::ostream& os, const LatentGrid& g) {
    put_bytes(os, g.array().data(), sizeof(double) * static_cast<std::size_t>(g.size()));
}

LatentGrid get_grid_values(std::istream& is, int c, int h, int w, const std::string& path) {
    if (c < 1 || h < 1 || w < 1 || c > 1 << 16 || h > 1 << 16 || w > 1 << 16)
        throw IoError("implausible grid shape in " + path);
    LatentGrid g(c, h, w);
    get_bytes(is, g.array().data(), sizeof(double) * static_cast<std::size_t>(g.size()), path);
    return g;
}

}  // namespace

void write_grid(const std::string& path, const LatentGrid& g) {
    auto os = open_out(path);
    put_magic(os, "LMGRID");
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, sizeof(double));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g.channels()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g.height()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g.width()));
    put_grid_values(os, g);
    if (!os) throw IoError("write failed: " + path);
}

LatentGrid read_grid(const std::string& path) {
    auto is = open_in(path);
    check_magic(is, "LMGRID", path);
    const auto dtype = get<std::uint32_t>(is, path);
    if (dtype != sizeof(double)) throw IoError("unsupported dtype width in " + path);
    const auto c = get<std::uint32_t>(is, path);
    const auto h = get<std::uint32_t>(is, path);
    const auto w = get<std::uint32_t>(is, path);
    return get_grid_values(is, static_cast<int>(c), static_cast<int>(h), static_cast<int>(w),
                           path);
}

void write_watermarks(const std::string& path, const WatermarkPair& pair, std::uint64_t seed) {
    pair.w_s.require_same_shape(pair.w_d, "write_watermarks");
    auto os = open_out(path);
    put_magic(os, "LMWMRK");
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(pair.w_s.channels()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(pair.w_s.height()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(pair.w_s.width()));
    put<double>(os, pair.init_variance);
    put<double>(os, pair.sigma_td);
    put<std::uint64_t>(os, seed);
    put_grid_values(os, pair.w_s);
    put_grid_values(os, pair.w_d);
    if (!os) throw IoError("write failed: " + path);
}

StoredWatermarks read_watermarks(const std::string& path) {
    auto is = open_in(path);
    check_magic(is, "LMWMRK", path);
    const auto c = get<std::uint32_t>(is, path);
    const auto h = get<std::uint32_t>(is, path);
    const auto w = get<std::uint32_t>(is, path);
    StoredWatermarks sw;
    sw.pair.init_variance = get<double>(is, path);
    sw.pair.sigma_td = get<double>(is, path);
    sw.seed = get<std::uint64_t>(is, path);
    sw.pair.w_s = get_grid_values(is, static_cast<int>(c), static_cast<int>(h),
                                  static_cast<int>(w), path);
    sw.pair.w_d = get_grid_values(is, static_cast<int>(c), static_cast<int>(h),
                                  static_cast<int>(w), path);
    return sw;
}

void write_carriers(const std::string& path, const CarrierSet& cs) {
    auto os = open_out(path);
    put_magic(os, "LMCARR");
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(cs.k));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(cs.dim));
    put<std::uint64_t>(os, cs.seed);
    put_bytes(os, cs.mean.data(), sizeof(double) * static_cast<std::size_t>(cs.dim));
    put_bytes(os, cs.whiten.data(),
              sizeof(double) * static_cast<std::size_t>(cs.dim) * static_cast<std::size_t>(cs.dim));
    put_bytes(os, cs.carriers.data(),
              sizeof(double) * static_cast<std::size_t>(cs.k) * static_cast<std::size_t>(cs.dim));
    if (!os) throw IoError("write failed: " + path);
}

CarrierSet read_carriers(const std::string& path) {
    auto is = open_in(path);
    check_magic(is, "LMCARR", path);
    CarrierSet cs;
    cs.k = static_cast<int>(get<std::uint32_t>(is, path));
    cs.dim = static_cast<int>(get<std::uint32_t>(is, path));
    if (cs.k < 1 || cs.dim < 1 || cs.k > cs.dim || cs.dim > 1 << 16)
        throw IoError("implausible carrier header in " + path);
    cs.seed = get<std::uint64_t>(is, path);
    cs.mean.resize(cs.dim);
    get_bytes(is, cs.mean.data(), sizeof(double) * static_cast<std::size_t>(cs.dim), path);
    cs.whiten.resize(cs.dim, cs.dim);
    get_bytes(is, cs.whiten.data(),
              sizeof(double) * static_cast<std::size_t>(cs.dim) * static_cast<std::size_t>(cs.dim),
              path);
    cs.carriers.resize(cs.k, cs.dim);
    get_bytes(is, cs.carriers.data(),
              sizeof(double) * static_cast<std::size_t>(cs.k) * static_cast<std::size_t>(cs.dim),
              path);
    return cs;
}

}  // namespace latentmark
