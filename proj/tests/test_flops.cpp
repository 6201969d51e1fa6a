#include "doctest.h"
#include "moeisr/errors.hpp"
#include "moeisr/expert_map.hpp"
#include "moeisr/flops.hpp"
#include "moeisr/models.hpp"
#include "support.hpp"

using namespace moeisr;

namespace {

// 2 FLOPs per weight per application: convs apply every weight once per
// LR site, expert layers once per query routed to them.
std::uint64_t brute_total(const ModelParams<float>& p, std::size_t lr_h, std::size_t lr_w,
                          const std::vector<std::size_t>& decisions, bool with_mapper, std::size_t forced = SIZE_MAX) {
    std::uint64_t total = 0;
    auto conv = [&](const ConvLayer<float>& c) { total += 2 * c.weight.numel() * lr_h * lr_w; };
    conv(p.head);
    for (const auto& b : p.blocks) {
        conv(b[0]);
        conv(b[1]);
    }
    conv(p.tail);
    if (with_mapper) {
        for (const auto& m : p.mapper) conv(m);
    }
    for (std::size_t d : decisions) {
        for (const auto& l : p.experts[forced == SIZE_MAX ? d : forced]) total += 2 * l.weight.numel();
    }
    return total;
}

}  // namespace

TEST_CASE("per-query expert costs at the default width") {
    ModelSpec spec;
    CHECK(flops_expert(spec.expert(0), 1) == 298496);
    CHECK(flops_expert(spec.expert(1), 1) == 429568);
    CHECK(flops_expert(spec.expert(2), 1) == 560640);
    CHECK(flops_expert(spec.expert(3), 1) == 691712);
    CHECK(flops_linear(10, 20, 3) == 1200);
}

TEST_CASE("pipeline totals equal per-pixel accumulation") {
    const ModelSpec spec = testing::tiny_spec();
    const auto p = ModelParams<float>::init(spec, 1);
    Rng rng(4);
    for (auto [lh, lw, oh, ow] : {std::array<std::size_t, 4>{3, 4, 6, 8}, {5, 5, 17, 13}, {1, 1, 1, 1}}) {
        std::vector<std::size_t> d(oh * ow);
        for (auto& v : d) v = rng.below(spec.experts());
        const FlopsReport r = flops_pipeline(spec, lh, lw, oh, ow, d);
        CHECK(r.pipeline_total == brute_total(p, lh, lw, d, true));
        CHECK(r.baseline_total == brute_total(p, lh, lw, d, false, spec.experts() - 1));
        std::uint64_t queries = 0;
        for (auto n : r.per_expert_queries) queries += n;
        CHECK(queries == oh * ow);
        CHECK(r.unfold_flops == 0);
    }
}

TEST_CASE("uniform split ratio") {
    ModelSpec spec;
    std::vector<std::size_t> d(64 * 64);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = i % 4;
    const auto r = flops_pipeline(spec, 32, 32, 64, 64, d);
    CHECK(std::abs(r.ratio - 495104.0 / 691712.0) < 1e-9);
    std::vector<std::size_t> deepest(64 * 64, 3);
    CHECK(flops_pipeline(spec, 32, 32, 64, 64, deepest).ratio == 1.0);
}

TEST_CASE("decoder share grows with the output scale") {
    ModelSpec spec;
    const std::vector<std::size_t> at2(64 * 64, 3), at12(384 * 384, 3);
    CHECK(flops_pipeline(spec, 32, 32, 384, 384, at12).decoder_share() >
          flops_pipeline(spec, 32, 32, 64, 64, at2).decoder_share());
}

TEST_CASE("report validation and text") {
    const ModelSpec spec = testing::tiny_spec();
    const std::vector<std::size_t> d{0, 1, 2};
    CHECK_THROWS_AS(flops_pipeline(spec, 2, 2, 2, 2, d), UsageError);
    const std::vector<std::size_t> bad{0, 1, 2, 7};
    CHECK_THROWS_AS(flops_pipeline(spec, 2, 2, 2, 2, bad), UsageError);
    const std::vector<std::size_t> ok{0, 1, 2, 3};
    const auto text = flops_pipeline(spec, 2, 2, 2, 2, ok).to_text();
    CHECK(text.find("ratio: ") != std::string::npos);
    CHECK(text.find("expert4_queries: 1") != std::string::npos);
}

TEST_CASE("expert map colours") {
    const std::vector<std::size_t> d{0, 1, 2, 3, 3, 0};
    const Image map = expert_map_image(d, 2, 3);
    CHECK(map.at(0, 0, 0) == 1.0f);
    CHECK(map.at(0, 0, 1) == 1.0f);
    CHECK(map.at(0, 0, 2) == 0.0f);
    CHECK(map.at(1, 0, 0) == 1.0f);
    CHECK(map.at(1, 0, 1) == 0.0f);
    CHECK(decode_expert_map(map) == d);

    testing::TempDir dir;
    export_expert_map(d, 2, 3, dir / "m.ppm");
    CHECK(decode_expert_map(read_ppm(dir / "m.ppm")) == d);
    const std::vector<std::size_t> five{4};
    CHECK_THROWS_AS(expert_map_image(five, 1, 1), UsageError);
    CHECK_THROWS_AS(expert_map_image(d, 3, 3), UsageError);
}
