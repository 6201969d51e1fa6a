#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <string>

#include "doctest.h"
#include "moeisr/errors.hpp"
#include "moeisr/image.hpp"
#include "moeisr/resample.hpp"
#include "moeisr/sampling.hpp"
#include "support.hpp"

using namespace moeisr;

namespace {

std::vector<unsigned char> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

// Keys cubic with a = -0.5, written out piecewise.
double keys(double x) {
    x = std::abs(x);
    if (x < 1) return 1.5 * x * x * x - 2.5 * x * x + 1;
    if (x < 2) return -0.5 * x * x * x + 2.5 * x * x - 4 * x + 2;
    return 0;
}

// Direct 2-D sum over the 4×4 neighbourhood of each output centre.
float bicubic_oracle(const Image& img, std::size_t oy, std::size_t ox, std::size_t c, std::size_t out_h,
                     std::size_t out_w) {
    const double sy = (oy + 0.5) * double(img.height()) / double(out_h) - 0.5;
    const double sx = (ox + 0.5) * double(img.width()) / double(out_w) - 0.5;
    const long by = long(std::floor(sy)), bx = long(std::floor(sx));
    double acc = 0;
    for (long m = by - 1; m <= by + 2; ++m) {
        for (long n = bx - 1; n <= bx + 2; ++n) {
            const long cy = std::clamp<long>(m, 0, long(img.height()) - 1);
            const long cx = std::clamp<long>(n, 0, long(img.width()) - 1);
            acc += keys(sy - double(m)) * keys(sx - double(n)) * img.at(cy, cx, c);
        }
    }
    return float(std::clamp(acc, 0.0, 1.0));
}

}  // namespace

TEST_CASE("ppm round trip is exact for 8-bit values") {
    Image img(3, 5);
    for (std::size_t i = 0; i < img.size(); ++i) img.pixels()[i] = float(i * 7 % 256) / 255.0f;
    const auto encoded = encode_ppm(img);
    CHECK(parse_ppm(encoded) == img);

    testing::TempDir dir;
    write_ppm(dir / "a.ppm", img);
    CHECK(read_ppm(dir / "a.ppm") == img);
    CHECK(load_image(dir / "a.ppm") == img);
}

TEST_CASE("ppm header with comments") {
    std::string text = "P6\n# made by hand\n2 1\n255\n";
    text += std::string{char(255), 0, 0, 0, char(128), char(255)};
    const Image img = parse_ppm(bytes_of(text));
    CHECK(img.height() == 1);
    CHECK(img.width() == 2);
    CHECK(img.at(0, 0, 0) == 1.0f);
    CHECK(img.at(0, 1, 1) == doctest::Approx(128.0 / 255.0));
}

TEST_CASE("ppm errors carry offsets") {
    try {
        parse_ppm(bytes_of("P3\n1 1\n255\n0 0 0\n"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.offset() == 0);
        CHECK(std::string(e.what()).find("unsupported magic") != std::string::npos);
    }
    try {
        parse_ppm(bytes_of("P6\n2 2\n255\n\x01\x02"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        CHECK(e.offset() > 0);
    }
    CHECK_THROWS_AS(parse_ppm(bytes_of("P6\n2 2\n65535\n")), ParseError);
    CHECK_THROWS_AS(parse_ppm(bytes_of("P6\n0 2\n255\n")), ParseError);
    CHECK_THROWS_AS(read_ppm("/nonexistent/x.ppm"), IoError);
    CHECK_THROWS_AS(load_image("picture.png"), IoError);
}

TEST_CASE("list_images sorts by name and skips other files") {
    testing::TempDir dir;
    write_ppm(dir / "b.ppm", Image(1, 1));
    write_ppm(dir / "a.pnm", Image(1, 1));
    std::ofstream(dir / "notes.txt") << "x";
    const auto files = list_images(dir.path());
    REQUIRE(files.size() == 2);
    CHECK(files[0].filename() == "a.pnm");
    CHECK(files[1].filename() == "b.ppm");
    CHECK_THROWS_AS(list_images(dir / "missing"), IoError);
}

TEST_CASE("psnr") {
    Image a(4, 4, 0.5f), b(4, 4, 0.6f);
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(psnr(a, a) == kPsnrCap);
    CHECK_THROWS_AS(psnr(a, Image(4, 5)), UsageError);
}

TEST_CASE("cubic kernel") {
    CHECK(cubic_kernel(0) == 1.0);
    CHECK(cubic_kernel(1) == 0.0);
    CHECK(cubic_kernel(2) == 0.0);
    CHECK(cubic_kernel(0.5) == doctest::Approx(0.5625));
    CHECK(cubic_kernel(1.5) == doctest::Approx(-0.0625));
    for (double x = -2.5; x <= 2.5; x += 0.125) CHECK(cubic_kernel(x) == doctest::Approx(keys(x)));
    // Taps of any resampling form a partition of unity.
    for (const auto& t : resample_taps(13, 5)) {
        CHECK(t.weight[0] + t.weight[1] + t.weight[2] + t.weight[3] == doctest::Approx(1.0));
    }
}

TEST_CASE("bicubic resize matches the direct 2-D sum") {
    const Image img = testing::random_image(9, 11, 3);
    for (auto [oh, ow] : {std::pair<std::size_t, std::size_t>{4, 5}, {18, 7}, {9, 11}, {1, 1}, {23, 30}}) {
        const Image out = bicubic_resize(img, oh, ow);
        REQUIRE(out.height() == oh);
        REQUIRE(out.width() == ow);
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                for (std::size_t c = 0; c < 3; ++c) {
                    CHECK(out.at(y, x, c) == doctest::Approx(bicubic_oracle(img, y, x, c, oh, ow)).epsilon(1e-5));
                }
            }
        }
    }
}

TEST_CASE("bicubic resize invariants") {
    const Image img = testing::random_image(6, 7, 4);
    const Image same = bicubic_resize(img, 6, 7);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(same.pixels()[i] == doctest::Approx(img.pixels()[i]).epsilon(1e-6));
    const Image flat = bicubic_resize(Image(5, 5, 0.3f), 12, 3);
    for (float v : flat.pixels()) CHECK(v == doctest::Approx(0.3f).epsilon(1e-6));
    CHECK_THROWS_AS(bicubic_resize(img, 0, 3), UsageError);
}

TEST_CASE("training pair sampling") {
    const Image hr = testing::random_image(40, 40, 5);
    SamplingOptions opt;
    opt.patch_size = 8;
    opt.sample_count = 50;
    opt.scale_min = 1;
    opt.scale_max = 4;

    Rng r1(9), r2(9);
    const TrainingPair a = sample_training_pair(hr, r1, opt), b = sample_training_pair(hr, r2, opt);
    CHECK(a == b);
    CHECK(a.scale >= 1.0);
    CHECK(a.scale <= 4.0);
    CHECK(a.window_h == window_extent(8, a.scale));
    CHECK(a.lr_patch.height() == 8);
    CHECK(a.query_coords.size() == 50);

    // Queries are distinct window pixel centres and carry the cell size.
    std::set<std::pair<long, long>> seen;
    for (std::size_t i = 0; i < a.query_coords.size(); ++i) {
        const double fy = (a.query_coords[i][0] + 1) * double(a.window_h) / 2 - 0.5;
        const double fx = (a.query_coords[i][1] + 1) * double(a.window_w) / 2 - 0.5;
        CHECK(std::abs(fy - std::round(fy)) < 1e-9);
        CHECK(std::abs(fx - std::round(fx)) < 1e-9);
        seen.insert({std::lround(fy), std::lround(fx)});
        CHECK(a.query_cells[i][0] == doctest::Approx(2.0 / double(a.window_h)));
    }
    CHECK(seen.size() == 50);

    // At scale 1 the LR patch is the crop itself and targets are its pixels.
    opt.scale_max = 1;
    Rng r3(2);
    const TrainingPair one = sample_training_pair(hr, r3, opt);
    for (std::size_t i = 0; i < one.query_coords.size(); ++i) {
        const auto y = std::size_t(std::lround((one.query_coords[i][0] + 1) * 4 - 0.5));
        const auto x = std::size_t(std::lround((one.query_coords[i][1] + 1) * 4 - 0.5));
        for (std::size_t c = 0; c < 3; ++c) CHECK(one.target_rgb[i][c] == one.lr_patch.at(y, x, c));
    }

    SamplingOptions big = opt;
    big.patch_size = 48;
    big.scale_max = 4;
    CHECK_THROWS_AS(sample_training_pair(hr, r1, big), UsageError);
}

TEST_CASE("sampling with replacement when the window is small") {
    const Image hr = testing::random_image(8, 8, 6);
    SamplingOptions opt;
    opt.patch_size = 4;
    opt.sample_count = 100;
    opt.scale_min = opt.scale_max = 2;
    Rng rng(1);
    const TrainingPair p = sample_training_pair(hr, rng, opt);
    CHECK(p.query_coords.size() == 100);
    CHECK(p.window_h == 8);
}
