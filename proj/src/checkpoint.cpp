#include "moeisr/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "moeisr/errors.hpp"

namespace moeisr {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'E', 'I', 'S', 'R', 'C', 'K'};

class Writer {
   public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    std::vector<unsigned char> take() { return std::move(out_); }

   private:
    std::vector<unsigned char> out_;
};

class Reader {
   public:
    explicit Reader(std::span<const unsigned char> in) : in_(in) {}

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(in_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(in_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::span<const unsigned char> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == in_.size(); }

   private:
    void need(std::size_t n, const char* what) {
        if (in_.size() - pos_ < n) throw ParseError(std::string("checkpoint: truncated ") + what, pos_);
    }

    std::span<const unsigned char> in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_checkpoint(const ModelParams<float>& params) {
    const ModelSpec& s = params.spec;
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    w.u32(std::uint32_t(s.encoder.feat_dim));
    w.u32(std::uint32_t(s.encoder.n_res_blocks));
    w.u32(std::uint32_t(s.mapper.n_layers));
    w.u32(std::uint32_t(s.mapper.hidden_channels));
    w.u32(std::uint32_t(s.expert_hidden));
    w.u32(std::uint32_t(s.experts()));
    for (std::size_t d : s.expert_depths) w.u32(std::uint32_t(d));
    w.u64(params.seed);
    const auto named = params.named();
    w.u32(std::uint32_t(named.size()));
    for (const auto& n : named) {
        w.u32(std::uint32_t(n.name.size()));
        w.bytes(n.name.data(), n.name.size());
        w.u32(std::uint32_t(n.tensor.rank()));
        for (std::size_t e : n.tensor.shape()) w.u32(std::uint32_t(e));
        for (float v : n.tensor.data()) w.u32(std::bit_cast<std::uint32_t>(v));
    }
    return w.take();
}

ModelParams<float> decode_checkpoint(std::span<const unsigned char> bytes) {
    Reader r(bytes);
    const auto magic = r.take(sizeof kMagic, "magic");
    if (!std::equal(magic.begin(), magic.end(), kMagic)) throw ParseError("checkpoint: bad magic", 0);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw ParseError("checkpoint: unsupported version " + std::to_string(version), r.pos() - 4);
    }
    ModelSpec spec;
    spec.encoder.feat_dim = r.u32();
    spec.encoder.n_res_blocks = r.u32();
    spec.mapper.n_layers = r.u32();
    spec.mapper.hidden_channels = r.u32();
    spec.expert_hidden = r.u32();
    const std::uint32_t j_count = r.u32();
    if (j_count == 0 || j_count > 64) throw ParseError("checkpoint: implausible expert count", r.pos() - 4);
    spec.expert_depths.clear();
    for (std::uint32_t j = 0; j < j_count; ++j) spec.expert_depths.push_back(r.u32());
    const std::uint64_t seed = r.u64();
    try {
        spec.validate();
    } catch (const UsageError& e) {
        throw ParseError(std::string("checkpoint: invalid model spec: ") + e.what(), r.pos());
    }

    ModelParams<float> params = ModelParams<float>::zeros(spec);
    params.seed = seed;
    const auto named = params.named();
    const std::uint32_t count = r.u32();
    if (count != named.size()) {
        throw ParseError("checkpoint: " + std::to_string(count) + " tensors, spec needs " +
                             std::to_string(named.size()),
                         r.pos() - 4);
    }
    for (const auto& n : named) {
        const std::size_t at = r.pos();
        const std::uint32_t len = r.u32();
        const auto name = r.take(len, "tensor name");
        if (std::string(name.begin(), name.end()) != n.name) {
            throw ParseError("checkpoint: expected tensor '" + n.name + "'", at);
        }
        const std::uint32_t rank = r.u32();
        ad::Shape shape(rank);
        for (auto& e : shape) e = r.u32();
        if (shape != n.tensor.shape()) {
            throw ParseError("checkpoint: tensor '" + n.name + "' has shape " + ad::shape_str(shape) +
                                 ", expected " + ad::shape_str(n.tensor.shape()),
                             at);
        }
        auto dst = ad::Tensor<float>(n.tensor).mutable_data();
        for (float& v : dst) v = std::bit_cast<float>(r.u32());
    }
    if (!r.done()) throw ParseError("checkpoint: trailing bytes", r.pos());
    return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
    const auto bytes = encode_checkpoint(params);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("write failed for checkpoint " + path.string());
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what(), e.offset());
    }
}

}  // namespace moeisr
