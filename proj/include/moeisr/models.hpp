#pragma once

// Learned components: the convolutional encoder, the expert mapper and the
// bank of MLP decoders ("experts") of increasing depth.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moeisr/image.hpp"
#include "moeisr/tensor.hpp"

namespace moeisr {

struct EncoderSpec {
    std::size_t feat_dim = 64;
    std::size_t n_res_blocks = 4;

    bool operator==(const EncoderSpec&) const = default;
};

struct MapperSpec {
    std::size_t n_layers = 5;
    std::size_t hidden_channels = 64;

    bool operator==(const MapperSpec&) const = default;
};

/// One MLP decoder. `depth` counts linear layers.
struct ExpertSpec {
    std::size_t depth = 5;
    std::size_t hidden = 256;
    std::size_t in_dim = 580;
    std::size_t out_dim = 3;

    /// in·h + h + (depth-2)(h² + h) + h·out + out
    std::size_t parameter_count() const;
};

enum class Variant { b, s };

/// Expert width for a named variant: 256 for -b, 128 for -s.
std::size_t variant_hidden(Variant v);
Variant parse_variant(std::string_view name);

struct ModelSpec {
    EncoderSpec encoder;
    MapperSpec mapper;
    std::size_t expert_hidden = 256;
    std::vector<std::size_t> expert_depths{2, 3, 4, 5};

    std::size_t experts() const { return expert_depths.size(); }
    std::size_t decoder_in_dim() const;
    /// j is 0-based.
    ExpertSpec expert(std::size_t j) const;
    /// Throws UsageError unless depths are >= 2 and strictly ascending.
    void validate() const;

    bool operator==(const ModelSpec&) const = default;
};

template <typename T>
struct ConvLayer {
    ad::Tensor<T> weight;  // C_out×C_in×3×3
    ad::Tensor<T> bias;    // C_out
};

template <typename T>
struct LinearLayer {
    ad::Tensor<T> weight;  // in×out
    ad::Tensor<T> bias;    // out
};

template <typename T>
struct NamedTensor {
    std::string name;
    ad::Tensor<T> tensor;
};

/// Every learned tensor of the model. Copies share storage with the
/// original (tensor handles are reference-counted); use `cast` or
/// `deep_copy` for an independent set.
template <typename T>
struct ModelParams {
    ModelSpec spec;
    std::uint64_t seed = 0;

    ConvLayer<T> head;
    std::vector<std::array<ConvLayer<T>, 2>> blocks;
    ConvLayer<T> tail;
    std::vector<ConvLayer<T>> mapper;
    std::vector<std::vector<LinearLayer<T>>> experts;

    /// Fan-in uniform init: every weight and bias ~ U[-1/√fan_in, 1/√fan_in].
    static ModelParams init(const ModelSpec& spec, std::uint64_t seed);
    static ModelParams zeros(const ModelSpec& spec);

    /// Stable order: encoder, mapper, experts; layer by layer, weight
    /// before bias.
    std::vector<NamedTensor<T>> named() const;
    std::size_t parameter_count() const;

    template <typename U>
    ModelParams<U> cast() const;
    ModelParams deep_copy() const { return cast<T>(); }
    /// Copy whose tensors do not track gradients (for inference).
    ModelParams frozen() const;

    template <typename F>
    void for_each_tensor(F&& f) {
        auto conv = [&f](ConvLayer<T>& c) {
            f(c.weight);
            f(c.bias);
        };
        conv(head);
        for (auto& b : blocks) {
            conv(b[0]);
            conv(b[1]);
        }
        conv(tail);
        for (auto& m : mapper) conv(m);
        for (auto& e : experts) {
            for (auto& l : e) {
                f(l.weight);
                f(l.bias);
            }
        }
    }
};

template <typename T>
ad::Tensor<T> image_to_tensor(const Image& img);

/// LR image (3×H×W tensor) -> latent D×H×W. Head conv, residual blocks
/// (conv, relu, conv, skip), tail conv; all 3×3 with size-preserving padding.
template <typename T>
ad::Tensor<T> encode(const ModelParams<T>& params, const ad::Tensor<T>& image);

/// Latent D×H×W -> raw expert scores J×H×W.
template <typename T>
ad::Tensor<T> map_experts(const ModelParams<T>& params, const ad::Tensor<T>& latent);

/// Rows of decoder inputs Q×in_dim -> Q×3 through expert j (0-based).
template <typename T>
ad::Tensor<T> expert_forward(const ModelParams<T>& params, std::size_t j, const ad::Tensor<T>& features);

/// Single query.
template <typename T>
std::array<T, 3> expert_forward(const ModelParams<T>& params, std::size_t j, std::span<const T> feature);

}  // namespace moeisr
