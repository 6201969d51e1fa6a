#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "moeisr/image.hpp"
#include "moeisr/losses.hpp"
#include "moeisr/models.hpp"
#include "moeisr/optim.hpp"
#include "moeisr/pipeline.hpp"
#include "moeisr/sampling.hpp"

namespace moeisr {

struct TrainConfig {
    ModelSpec model;
    LossWeights loss;
    double tau = 1.0;
    std::vector<double> balance_weights;  // empty = all ones
    AdamHyper adam;
    std::size_t steps = 2000;
    std::size_t batch = 1;
    std::uint64_t seed = 0;
    SamplingOptions sampling;
    bool gumbel_noise = true;
    std::size_t log_every = 100;
    // 0 disables periodic evaluation / checkpoint writes.
    std::size_t eval_every = 0;
    double eval_scale = 2.0;
    std::size_t checkpoint_every = 0;

    /// Throws UsageError on a negative weight, non-positive tau or w_j,
    /// a weight count that does not match J, or zero steps/batch.
    void validate() const;
    TrainingObjective objective() const;
};

struct StepStats {
    double loss = 0;
    double l1 = 0;
    double balance = 0;
};

/// One optimisation step on `batch`: forward, backward, Adam.
template <typename T>
StepStats train_step(ModelParams<T>& params, AdamState& state, std::span<const TrainingPair> batch,
                     const TrainConfig& config, std::uint64_t step);

/// Training pairs for `step`, drawn from `rng` (image choice then crop).
std::vector<TrainingPair> sample_batch(std::span<const Image> images, Rng& rng, const TrainConfig& config);

using CheckpointHook = std::function<void(const ModelParams<float>&, std::size_t step)>;

/// Full loop from a fresh initialisation. Writes `step` lines (and `eval`
/// lines when eval_every > 0) to `log`.
ModelParams<float> train(std::span<const Image> images, const TrainConfig& config, std::ostream* log = nullptr,
                         const CheckpointHook& hook = {});

/// Images of a directory; throws IoError "no images" when there are none.
std::vector<Image> load_dataset(const std::filesystem::path& dir);

/// Trains on a dataset directory and writes the final checkpoint (plus
/// periodic ones when checkpoint_every > 0).
ModelParams<float> train_to_file(const std::filesystem::path& dataset, const TrainConfig& config,
                                 const std::filesystem::path& checkpoint, std::ostream* log = nullptr);

struct EvalResult {
    double scale = 1.0;
    double psnr = 0;                  // mean over images
    double flops_ratio = 1.0;         // mean decoder ratio vs the deepest expert
    std::vector<double> shares;       // per expert, over all output pixels
    std::vector<double> image_psnr;
};

/// Bicubic-downscale each image by `scale`, reconstruct at its original
/// size with hard routing and score it. Images are processed in parallel.
EvalResult evaluate(const ModelParams<float>& params, std::span<const Image> images, double scale,
                    std::size_t threads = 0);

/// `eval scale <s> psnr <v> shares <p1,..,pJ>`
std::string format_eval(const EvalResult& r);

/// LR extent for a downscale: max(1, round(n / scale)).
std::size_t downscaled_extent(std::size_t n, double scale);

/// Worker count: `requested` if nonzero, else MOEISR_THREADS, else the
/// hardware concurrency.
std::size_t resolve_threads(std::size_t requested);

}  // namespace moeisr
