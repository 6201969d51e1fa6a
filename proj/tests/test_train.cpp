#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>

#include "doctest.h"
#include "moeisr/checkpoint.hpp"
#include "moeisr/errors.hpp"
#include "moeisr/routing.hpp"
#include "moeisr/train.hpp"
#include "support.hpp"

using namespace moeisr;

namespace {

TrainConfig tiny_config() {
    TrainConfig c;
    c.model = testing::tiny_spec();
    c.steps = 4;
    c.seed = 3;
    c.sampling.patch_size = 8;
    c.sampling.sample_count = 32;
    c.sampling.scale_min = 1;
    c.sampling.scale_max = 3;
    c.log_every = 1;
    return c;
}

}  // namespace

TEST_CASE("config validation") {
    TrainConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.loss.beta = -1;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = tiny_config();
    c.balance_weights = {1, 1, 0, 1};
    CHECK_THROWS_AS(c.validate(), UsageError);
    c.balance_weights = {1, 1};
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = tiny_config();
    c.tau = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = tiny_config();
    c.steps = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("first step loss is finite and positive; log format") {
    const std::vector<Image> images{testing::random_image(32, 32, 1)};
    std::ostringstream log;
    train(images, tiny_config(), &log);
    std::istringstream in(log.str());
    std::string word, l1w, lbw;
    std::size_t step = 0;
    double loss = 0, l1 = 0, lb = 0;
    std::string loss_word;
    in >> word >> step >> loss_word >> loss >> l1w >> l1 >> lbw >> lb;
    CHECK(word == "step");
    CHECK(step == 1);
    CHECK(loss_word == "loss");
    CHECK(l1w == "l1");
    CHECK(lbw == "lb");
    CHECK(std::isfinite(loss));
    CHECK(loss > 0);
    CHECK(loss == doctest::Approx(3000 * l1 + lb).epsilon(1e-5));
}

TEST_CASE("training is deterministic and seed dependent") {
    const std::vector<Image> images{testing::random_image(32, 32, 1), testing::random_image(30, 34, 2)};
    const auto a = encode_checkpoint(train(images, tiny_config()));
    const auto b = encode_checkpoint(train(images, tiny_config()));
    CHECK(a == b);
    TrainConfig other = tiny_config();
    other.seed = 4;
    CHECK(encode_checkpoint(train(images, other)) != a);
}

TEST_CASE("training reduces the loss on one image") {
    const std::vector<Image> images{testing::synthetic_image(32)};
    TrainConfig c = tiny_config();
    c.steps = 60;
    c.adam.lr = 2e-3;
    c.sampling.scale_min = c.sampling.scale_max = 2;
    c.sampling.patch_size = 16;
    c.sampling.sample_count = 256;
    const auto before = evaluate(ModelParams<float>::init(c.model, c.seed), images, 2).psnr;
    const auto after = evaluate(train(images, c), images, 2).psnr;
    CHECK(after > before);
}

TEST_CASE("evaluate at arbitrary scales") {
    const std::vector<Image> images{testing::random_image(24, 20, 5), testing::random_image(16, 16, 6)};
    const auto p = ModelParams<float>::init(testing::tiny_spec(), 2);
    for (double s : {1.0, 2.0, 3.3, 8.0}) {
        const auto r = evaluate(p, images, s, 1);
        CHECK(std::isfinite(r.psnr));
        CHECK(r.image_psnr.size() == 2);
        double total = 0;
        for (double v : r.shares) total += v;
        CHECK(std::abs(total - 1.0) < 1e-12);
        CHECK(r.flops_ratio > 0);
        CHECK(r.flops_ratio <= 1.0);
    }
    CHECK(downscaled_extent(24, 8.0) == 3);
    CHECK(downscaled_extent(5, 30.0) == 1);
    CHECK_THROWS_AS(downscaled_extent(5, 0.5), UsageError);

    // Thread count does not change the numbers.
    const auto one = evaluate(p, images, 2.0, 1), two = evaluate(p, images, 2.0, 2);
    CHECK(one.psnr == two.psnr);
    CHECK(one.shares == two.shares);
    CHECK(format_eval(one).rfind("eval scale 2 psnr ", 0) == 0);
}

TEST_CASE("checkpoint round trip keeps eval bit identical") {
    const std::vector<Image> images{testing::random_image(32, 32, 7)};
    const auto p = train(images, tiny_config());
    testing::TempDir dir;
    save_checkpoint(dir / "m.ckpt", p);
    const auto q = load_checkpoint(dir / "m.ckpt");
    CHECK(evaluate(p, images, 2.0).psnr == evaluate(q, images, 2.0).psnr);
}

TEST_CASE("dataset loading and file training") {
    testing::TempDir dir;
    std::filesystem::create_directories(dir / "empty");
    CHECK_THROWS_AS(load_dataset(dir / "empty"), IoError);
    CHECK_THROWS_AS(load_dataset(dir / "missing"), IoError);
    std::filesystem::create_directories(dir / "data");
    write_ppm(dir / "data" / "a.ppm", testing::random_image(32, 32, 1));
    TrainConfig c = tiny_config();
    c.checkpoint_every = 2;
    const auto p = train_to_file(dir / "data", c, dir / "out.ckpt");
    CHECK(encode_checkpoint(load_checkpoint(dir / "out.ckpt")) == encode_checkpoint(p));
}

TEST_CASE("thread count resolution") {
    CHECK(resolve_threads(3) == 3);
    setenv("MOEISR_THREADS", "2", 1);
    CHECK(resolve_threads(0) == 2);
    setenv("MOEISR_THREADS", "junk", 1);
    CHECK(resolve_threads(0) >= 1);
    unsetenv("MOEISR_THREADS");
}

TEST_CASE("double precision step matches float step closely") {
    const std::vector<Image> images{testing::random_image(32, 32, 1)};
    TrainConfig c = tiny_config();
    Rng r1(1);
    const auto batch = sample_batch(images, r1, c);
    auto pf = ModelParams<float>::init(c.model, 1);
    auto pd = pf.cast<double>();
    AdamState sf, sd;
    const auto a = train_step(pf, sf, std::span<const TrainingPair>(batch), c, 0);
    const auto b = train_step(pd, sd, std::span<const TrainingPair>(batch), c, 0);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-4));
}

TEST_CASE("queries bound to one site share its routing sample") {
    const auto p = ModelParams<double>::init(testing::tiny_spec(), 4);
    SamplingOptions so;
    so.patch_size = 4;
    so.sample_count = 64;
    so.scale_min = so.scale_max = 2;
    Rng rng(2);
    const auto pair = sample_training_pair(testing::random_image(8, 8, 3), rng, so);
    const auto noise = gumbel_noise<double>(16, 4, 9, 0);
    const auto f = forward_pair(p, pair, 1.0, noise);
    std::map<std::size_t, std::vector<double>> seen;
    for (std::size_t q = 0; q < pair.query_coords.size(); ++q) {
        const auto b = nearest_latent({pair.query_coords[q][0], pair.query_coords[q][1]}, 4, 4);
        const std::vector<double> w(f.weights.data().begin() + q * 4, f.weights.data().begin() + q * 4 + 4);
        const auto [it, fresh] = seen.emplace(b.site(4), w);
        if (!fresh) CHECK(it->second == w);
    }
    CHECK(seen.size() == 16);
    CHECK_THROWS_AS(forward_pair(p, pair, 1.0, gumbel_noise<double>(64, 4, 9, 0)), DimensionError);
}
