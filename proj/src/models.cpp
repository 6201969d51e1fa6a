#include "moeisr/models.hpp"

#include <cmath>

#include "moeisr/coords.hpp"
#include "moeisr/errors.hpp"
#include "moeisr/random.hpp"

namespace moeisr {

std::size_t ExpertSpec::parameter_count() const {
    const std::size_t h = hidden;
    return in_dim * h + h + (depth - 2) * (h * h + h) + h * out_dim + out_dim;
}

std::size_t variant_hidden(Variant v) { return v == Variant::b ? 256 : 128; }

Variant parse_variant(std::string_view name) {
    if (name == "b" || name == "-b") return Variant::b;
    if (name == "s" || name == "-s") return Variant::s;
    throw UsageError("unknown variant '" + std::string(name) + "' (expected b or s)");
}

std::size_t ModelSpec::decoder_in_dim() const { return decoder_input_dim(encoder.feat_dim); }

ExpertSpec ModelSpec::expert(std::size_t j) const {
    return ExpertSpec{expert_depths.at(j), expert_hidden, decoder_in_dim(), 3};
}

void ModelSpec::validate() const {
    if (encoder.feat_dim == 0) throw UsageError("feat_dim must be >= 1");
    if (mapper.n_layers == 0) throw UsageError("mapper needs at least one layer");
    if (mapper.n_layers > 1 && mapper.hidden_channels == 0) throw UsageError("mapper hidden channels must be >= 1");
    if (expert_hidden == 0) throw UsageError("expert hidden width must be >= 1");
    if (expert_depths.empty()) throw UsageError("at least one expert required");
    for (std::size_t j = 0; j < expert_depths.size(); ++j) {
        if (expert_depths[j] < 2) throw UsageError("expert depth must be >= 2");
        if (j > 0 && expert_depths[j] <= expert_depths[j - 1]) {
            throw UsageError("expert depths must be strictly ascending");
        }
    }
}

namespace {

template <typename T>
struct Initializer {
    Rng* rng;  // null -> zeros

    ad::Tensor<T> uniform(ad::Shape shape, std::size_t fan_in) {
        auto t = ad::Tensor<T>::zeros(std::move(shape), true);
        if (rng) {
            const double bound = 1.0 / std::sqrt(double(fan_in));
            for (T& v : t.mutable_data()) v = T(rng->uniform(-bound, bound));
        }
        return t;
    }

    ConvLayer<T> conv(std::size_t c_in, std::size_t c_out) {
        const std::size_t fan_in = c_in * 9;
        ConvLayer<T> layer;
        layer.weight = uniform({c_out, c_in, 3, 3}, fan_in);
        layer.bias = uniform({c_out}, fan_in);
        return layer;
    }

    LinearLayer<T> linear(std::size_t in, std::size_t out) {
        LinearLayer<T> layer;
        layer.weight = uniform({in, out}, in);
        layer.bias = uniform({out}, in);
        return layer;
    }
};

template <typename T>
ModelParams<T> build(const ModelSpec& spec, std::uint64_t seed, Rng* rng) {
    spec.validate();
    ModelParams<T> p;
    p.spec = spec;
    p.seed = seed;
    Initializer<T> init{rng};
    const std::size_t d = spec.encoder.feat_dim;
    p.head = init.conv(3, d);
    for (std::size_t b = 0; b < spec.encoder.n_res_blocks; ++b) {
        auto c1 = init.conv(d, d);
        auto c2 = init.conv(d, d);
        p.blocks.push_back({c1, c2});
    }
    p.tail = init.conv(d, d);
    const std::size_t j_count = spec.experts();
    for (std::size_t l = 0; l < spec.mapper.n_layers; ++l) {
        const std::size_t in = l == 0 ? d : spec.mapper.hidden_channels;
        const std::size_t out = l + 1 == spec.mapper.n_layers ? j_count : spec.mapper.hidden_channels;
        p.mapper.push_back(init.conv(in, out));
    }
    for (std::size_t j = 0; j < j_count; ++j) {
        const ExpertSpec e = spec.expert(j);
        std::vector<LinearLayer<T>> layers;
        for (std::size_t l = 0; l < e.depth; ++l) {
            const std::size_t in = l == 0 ? e.in_dim : e.hidden;
            const std::size_t out = l + 1 == e.depth ? e.out_dim : e.hidden;
            layers.push_back(init.linear(in, out));
        }
        p.experts.push_back(std::move(layers));
    }
    return p;
}

template <typename T>
ad::Tensor<T> conv3x3(const ConvLayer<T>& layer, const ad::Tensor<T>& x) {
    return ad::conv2d(x, layer.weight, layer.bias, 1);
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    return build<T>(spec, seed, &rng);
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelSpec& spec) {
    return build<T>(spec, 0, nullptr);
}

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::named() const {
    std::vector<NamedTensor<T>> out;
    auto conv = [&out](const std::string& prefix, const ConvLayer<T>& c) {
        out.push_back({prefix + ".weight", c.weight});
        out.push_back({prefix + ".bias", c.bias});
    };
    conv("encoder.head", head);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        conv("encoder.block" + std::to_string(b) + ".conv1", blocks[b][0]);
        conv("encoder.block" + std::to_string(b) + ".conv2", blocks[b][1]);
    }
    conv("encoder.tail", tail);
    for (std::size_t l = 0; l < mapper.size(); ++l) conv("mapper.conv" + std::to_string(l), mapper[l]);
    for (std::size_t j = 0; j < experts.size(); ++j) {
        for (std::size_t l = 0; l < experts[j].size(); ++l) {
            const std::string prefix = "expert" + std::to_string(j + 1) + ".fc" + std::to_string(l);
            out.push_back({prefix + ".weight", experts[j][l].weight});
            out.push_back({prefix + ".bias", experts[j][l].bias});
        }
    }
    return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : named()) n += p.tensor.numel();
    return n;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
    ModelParams<U> out = ModelParams<U>::zeros(spec);
    out.seed = seed;
    const auto src = named();
    const auto dst = out.named();
    for (std::size_t i = 0; i < src.size(); ++i) {
        auto d = dst[i].tensor;
        const auto s = src[i].tensor.data();
        auto dv = d.mutable_data();
        for (std::size_t k = 0; k < s.size(); ++k) dv[k] = U(s[k]);
    }
    return out;
}

template <typename T>
ModelParams<T> ModelParams<T>::frozen() const {
    ModelParams<T> out = *this;
    out.for_each_tensor([](ad::Tensor<T>& t) { t = t.detach(); });
    return out;
}

template <typename T>
ad::Tensor<T> image_to_tensor(const Image& img) {
    const std::size_t h = img.height(), w = img.width();
    std::vector<T> data(3 * h * w);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) data[(c * h + y) * w + x] = T(img.at(y, x, c));
    return ad::Tensor<T>::from_data({3, h, w}, std::move(data));
}

template <typename T>
ad::Tensor<T> encode(const ModelParams<T>& params, const ad::Tensor<T>& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("encode: expected a 3×H×W image, got " + ad::shape_str(image.shape()));
    }
    ad::Tensor<T> x = conv3x3(params.head, image);
    for (const auto& block : params.blocks) {
        ad::Tensor<T> r = conv3x3(block[1], ad::relu(conv3x3(block[0], x)));
        x = ad::add(x, r);
    }
    return conv3x3(params.tail, x);
}

template <typename T>
ad::Tensor<T> map_experts(const ModelParams<T>& params, const ad::Tensor<T>& latent) {
    ad::Tensor<T> x = latent;
    for (std::size_t l = 0; l < params.mapper.size(); ++l) {
        x = conv3x3(params.mapper[l], x);
        if (l + 1 < params.mapper.size()) x = ad::relu(x);
    }
    return x;
}

template <typename T>
ad::Tensor<T> expert_forward(const ModelParams<T>& params, std::size_t j, const ad::Tensor<T>& features) {
    if (j >= params.experts.size()) throw UsageError("expert index " + std::to_string(j) + " out of range");
    const auto& layers = params.experts[j];
    if (features.rank() != 2 || features.dim(1) != layers.front().weight.dim(0)) {
        throw DimensionError("expert_forward: features " + ad::shape_str(features.shape()) +
                             " do not match expert input width " +
                             std::to_string(layers.front().weight.dim(0)));
    }
    ad::Tensor<T> x = features;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        x = ad::add_row_bias(ad::matmul(x, layers[l].weight), layers[l].bias);
        if (l + 1 < layers.size()) x = ad::relu(x);
    }
    return x;
}

template <typename T>
std::array<T, 3> expert_forward(const ModelParams<T>& params, std::size_t j, std::span<const T> feature) {
    auto row = ad::Tensor<T>::from_data({1, feature.size()}, std::vector<T>(feature.begin(), feature.end()));
    const auto out = expert_forward(params, j, row);
    return {out.at(0), out.at(1), out.at(2)};
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

#define MOEISR_INSTANTIATE(T)                                                                             \
    template ad::Tensor<T> image_to_tensor<T>(const Image&);                                               \
    template ad::Tensor<T> encode(const ModelParams<T>&, const ad::Tensor<T>&);                            \
    template ad::Tensor<T> map_experts(const ModelParams<T>&, const ad::Tensor<T>&);                       \
    template ad::Tensor<T> expert_forward(const ModelParams<T>&, std::size_t, const ad::Tensor<T>&);       \
    template std::array<T, 3> expert_forward(const ModelParams<T>&, std::size_t, std::span<const T>);

MOEISR_INSTANTIATE(float)
MOEISR_INSTANTIATE(double)

#undef MOEISR_INSTANTIATE

}  // namespace moeisr
