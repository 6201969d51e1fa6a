#include "moeisr/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <ostream>
#include <sstream>
#include <thread>

#include "moeisr/checkpoint.hpp"
#include "moeisr/errors.hpp"
#include "moeisr/flops.hpp"
#include "moeisr/random.hpp"
#include "moeisr/resample.hpp"

namespace moeisr {

namespace {

// Stream ids under the master seed.
constexpr std::uint64_t kSamplerStream = 0x73616d70;
constexpr std::uint64_t kNoiseStream = 0x6e6f6973;

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    if (!(loss.alpha >= 0) || !(loss.beta >= 0)) throw UsageError("alpha and beta must be >= 0");
    if (!(tau > 0)) throw UsageError("tau must be > 0");
    if (!balance_weights.empty()) {
        if (balance_weights.size() != model.experts()) {
            throw UsageError("weights: expected " + std::to_string(model.experts()) + " values, got " +
                             std::to_string(balance_weights.size()));
        }
        for (double w : balance_weights) {
            if (!(w > 0)) throw UsageError("weights must be > 0");
        }
    }
    if (!(adam.lr > 0)) throw UsageError("lr must be > 0");
    if (steps == 0 || batch == 0) throw UsageError("steps and batch must be >= 1");
    if (!(sampling.scale_min >= 1) || sampling.scale_max < sampling.scale_min) {
        throw UsageError("scale range must satisfy 1 <= scale_min <= scale_max");
    }
    if (sampling.patch_size == 0 || sampling.sample_count == 0) throw UsageError("patch and sample count must be >= 1");
    if (!(eval_scale >= 1)) throw UsageError("eval_scale must be >= 1");
}

TrainingObjective TrainConfig::objective() const {
    TrainingObjective o;
    o.loss = loss;
    o.tau = tau;
    o.balance_weights = balance_weights;
    o.gumbel_noise = gumbel_noise;
    return o;
}

template <typename T>
StepStats train_step(ModelParams<T>& params, AdamState& state, std::span<const TrainingPair> batch,
                     const TrainConfig& config, std::uint64_t step) {
    const auto terms = training_loss(params, batch, config.objective(), derive_seed(config.seed, kNoiseStream), step);
    const auto grads = ad::backward(terms.total);
    adam_step(params, grads, state, config.adam);
    return {double(terms.total.item()), double(terms.l1.item()), double(terms.balance.item())};
}

std::vector<TrainingPair> sample_batch(std::span<const Image> images, Rng& rng, const TrainConfig& config) {
    if (images.empty()) throw UsageError("sample_batch: no images");
    std::vector<TrainingPair> batch;
    batch.reserve(config.batch);
    for (std::size_t b = 0; b < config.batch; ++b) {
        const Image& img = images[images.size() == 1 ? 0 : rng.below(images.size())];
        batch.push_back(sample_training_pair(img, rng, config.sampling));
    }
    return batch;
}

ModelParams<float> train(std::span<const Image> images, const TrainConfig& config, std::ostream* log,
                         const CheckpointHook& hook) {
    config.validate();
    if (images.empty()) throw UsageError("train: no images");
    auto params = ModelParams<float>::init(config.model, config.seed);
    AdamState state;
    Rng sampler(derive_seed(config.seed, kSamplerStream));

    for (std::size_t step = 0; step < config.steps; ++step) {
        const auto batch = sample_batch(images, sampler, config);
        const StepStats s = train_step(params, state, std::span<const TrainingPair>(batch), config, step);
        if (!std::isfinite(s.loss)) throw std::runtime_error("train: loss became non-finite at step " + std::to_string(step));
        const std::size_t done = step + 1;
        if (log && config.log_every > 0 && (step == 0 || done % config.log_every == 0 || done == config.steps)) {
            *log << "step " << done << " loss " << s.loss << " l1 " << s.l1 << " lb " << s.balance << '\n';
        }
        if (log && config.eval_every > 0 && done % config.eval_every == 0) {
            *log << format_eval(evaluate(params, images, config.eval_scale)) << '\n';
        }
        if (hook && config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done != config.steps) {
            hook(params, done);
        }
    }
    if (hook) hook(params, config.steps);
    return params;
}

std::vector<Image> load_dataset(const std::filesystem::path& dir) {
    std::vector<Image> images;
    for (const auto& p : list_images(dir)) images.push_back(load_image(p));
    if (images.empty()) throw IoError("no images in " + dir.string());
    return images;
}

ModelParams<float> train_to_file(const std::filesystem::path& dataset, const TrainConfig& config,
                                 const std::filesystem::path& checkpoint, std::ostream* log) {
    config.validate();
    const auto images = load_dataset(dataset);
    return train(images, config, log,
                 [&](const ModelParams<float>& p, std::size_t) { save_checkpoint(checkpoint, p); });
}

std::size_t downscaled_extent(std::size_t n, double scale) {
    if (!(scale >= 1)) throw UsageError("scale must be >= 1");
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(double(n) / scale)));
}

std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("MOEISR_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

EvalResult evaluate(const ModelParams<float>& params, std::span<const Image> images, double scale,
                    std::size_t threads) {
    if (images.empty()) throw UsageError("evaluate: no images");
    const std::size_t j_count = params.experts.size();
    struct PerImage {
        double psnr = 0;
        double ratio = 0;
        std::vector<std::size_t> counts;
    };
    std::vector<PerImage> results(images.size());

    auto run = [&](std::size_t i) {
        const Image& hr = images[i];
        const Image lr =
            bicubic_resize(hr, downscaled_extent(hr.height(), scale), downscaled_extent(hr.width(), scale));
        const Reconstruction r = reconstruct(params, lr, hr.height(), hr.width());
        results[i].psnr = psnr(r.image, hr);
        results[i].ratio =
            flops_pipeline(params.spec, lr.height(), lr.width(), hr.height(), hr.width(), r.query_experts).ratio;
        results[i].counts = expert_counts(r.query_experts, j_count);
    };

    const std::size_t workers = std::min(resolve_threads(threads), images.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < images.size(); ++i) run(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = next++; i < images.size(); i = next++) run(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    // Reduce in image order so the result does not depend on scheduling.
    EvalResult out;
    out.scale = scale;
    out.flops_ratio = 0;
    std::vector<std::size_t> counts(j_count, 0);
    std::size_t total = 0;
    for (const auto& r : results) {
        out.image_psnr.push_back(r.psnr);
        out.psnr += r.psnr;
        out.flops_ratio += r.ratio;
        for (std::size_t j = 0; j < j_count; ++j) {
            counts[j] += r.counts[j];
            total += r.counts[j];
        }
    }
    out.psnr /= double(images.size());
    out.flops_ratio /= double(images.size());
    for (std::size_t j = 0; j < j_count; ++j) out.shares.push_back(double(counts[j]) / double(total));
    return out;
}

std::string format_eval(const EvalResult& r) {
    std::ostringstream os;
    os << "eval scale " << r.scale << " psnr " << r.psnr << " shares ";
    for (std::size_t j = 0; j < r.shares.size(); ++j) os << (j ? "," : "") << r.shares[j];
    return os.str();
}

template StepStats train_step(ModelParams<float>&, AdamState&, std::span<const TrainingPair>, const TrainConfig&,
                              std::uint64_t);
template StepStats train_step(ModelParams<double>&, AdamState&, std::span<const TrainingPair>, const TrainConfig&,
                              std::uint64_t);

}  // namespace moeisr
