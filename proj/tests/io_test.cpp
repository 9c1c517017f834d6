#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "latentmark/io.hpp"

using namespace latentmark;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("latentmark_io_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const char* name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("grids survive a round trip bit for bit") {
    TempDir tmp;
    Rng rng(601);
    const LatentGrid g = LatentGrid::gaussian(2, 5, 7, rng);
    write_grid(tmp.file("a.grid"), g);
    const LatentGrid back = read_grid(tmp.file("a.grid"));
    CHECK(back.channels() == 2);
    CHECK(back.height() == 5);
    CHECK(back.width() == 7);
    CHECK((back.array() - g.array()).abs().maxCoeff() == 0.0);
}

TEST_CASE("watermark pairs survive a round trip") {
    TempDir tmp;
    WatermarkPair pair = init_watermarks(1, 6, 6, 0.01, 603);
    pair.sigma_td = 0.125;
    write_watermarks(tmp.file("w.lmk"), pair, 42);
    const StoredWatermarks back = read_watermarks(tmp.file("w.lmk"));
    CHECK(back.seed == 42);
    CHECK(back.pair.init_variance == pair.init_variance);
    CHECK(back.pair.sigma_td == 0.125);
    CHECK((back.pair.w_s.array() - pair.w_s.array()).abs().maxCoeff() == 0.0);
    CHECK((back.pair.w_d.array() - pair.w_d.array()).abs().maxCoeff() == 0.0);
}

TEST_CASE("carrier sets survive a round trip") {
    TempDir tmp;
    Rng rng(605);
    Eigen::MatrixXd corpus(64, 10);
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 10; ++j) corpus(i, j) = rng.gaussian();
    CarrierSet cs = whiten_carriers(corpus, 3, 607);
    write_carriers(tmp.file("c.lmc"), cs);
    const CarrierSet back = read_carriers(tmp.file("c.lmc"));
    CHECK(back.k == 3);
    CHECK(back.dim == 10);
    CHECK(back.seed == cs.seed);
    CHECK((back.mean - cs.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.whiten - cs.whiten).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.carriers - cs.carriers).cwiseAbs().maxCoeff() == 0.0);

    // a stored set decodes exactly like the original
    Eigen::VectorXd e(10);
    for (int j = 0; j < 10; ++j) e[j] = rng.gaussian();
    CHECK(decode(e, back).bits == decode(e, cs).bits);
}

TEST_CASE("missing files raise io errors") {
    TempDir tmp;
    CHECK_THROWS_AS(read_grid(tmp.file("absent.grid")), IoError);
    CHECK_THROWS_AS(read_watermarks(tmp.file("absent.lmk")), IoError);
    CHECK_THROWS_AS(read_carriers(tmp.file("absent.lmc")), IoError);
}

TEST_CASE("foreign magic is refused") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("junk.grid"), std::ios::binary);
        out << "NOTAGRID and then some bytes to chew on";
    }
    CHECK_THROWS_AS(read_grid(tmp.file("junk.grid")), IoError);
    CHECK_THROWS_AS(read_watermarks(tmp.file("junk.grid")), IoError);
    CHECK_THROWS_AS(read_carriers(tmp.file("junk.grid")), IoError);
}

TEST_CASE("files cut short are refused") {
    TempDir tmp;
    Rng rng(609);
    const LatentGrid g = LatentGrid::gaussian(1, 8, 8, rng);
    write_grid(tmp.file("full.grid"), g);

    const auto full = fs::file_size(tmp.file("full.grid"));
    std::ifstream in(tmp.file("full.grid"), std::ios::binary);
    std::vector<char> head(static_cast<std::size_t>(full) / 2);
    in.read(head.data(), static_cast<std::streamsize>(head.size()));
    {
        std::ofstream out(tmp.file("cut.grid"), std::ios::binary);
        out.write(head.data(), static_cast<std::streamsize>(head.size()));
    }
    CHECK_THROWS_AS(read_grid(tmp.file("cut.grid")), IoError);
}

TEST_CASE("unwritable destinations raise io errors") {
    Rng rng(611);
    const LatentGrid g = LatentGrid::gaussian(1, 4, 4, rng);
    CHECK_THROWS_AS(write_grid("/nonexistent_dir_zz/a.grid", g), IoError);
    const WatermarkPair pair = init_watermarks(1, 4, 4, 0.01, 613);
    CHECK_THROWS_AS(write_watermarks("/nonexistent_dir_zz/w.lmk", pair, 1), IoError);
}
