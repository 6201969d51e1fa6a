#include "moeisr/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "moeisr/errors.hpp"

namespace moeisr {

Image::Image(std::size_t height, std::size_t width, float fill)
    : height_(height), width_(width), pixels_(height * width * kChannels, fill) {
    if (height == 0 || width == 0) throw UsageError("image extents must be positive");
}

Image::Image(std::size_t height, std::size_t width, std::vector<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
    if (height == 0 || width == 0) throw UsageError("image extents must be positive");
    if (pixels_.size() != height * width * kChannels) {
        throw DimensionError("image buffer holds " + std::to_string(pixels_.size()) +
                             " values, expected " + std::to_string(height * width * kChannels));
    }
}

Image Image::crop(std::size_t top, std::size_t left, std::size_t height, std::size_t width) const {
    if (top + height > height_ || left + width > width_) {
        throw UsageError("crop window exceeds image bounds");
    }
    Image out(height, width);
    for (std::size_t y = 0; y < height; ++y) {
        const float* src = pixels_.data() + ((top + y) * width_ + left) * kChannels;
        std::copy_n(src, width * kChannels, out.pixels_.data() + y * width * kChannels);
    }
    return out;
}

void Image::clamp() {
    for (float& v : pixels_) v = std::clamp(v, 0.0f, 1.0f);
}

namespace {

class PpmReader {
   public:
    explicit PpmReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

    std::size_t pos() const { return pos_; }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const unsigned char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(c)) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t read_uint(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > (1u << 24)) throw ParseError(std::string("ppm: ") + what + " too large", start);
            ++pos_;
        }
        if (pos_ == start) {
            throw ParseError(std::string("ppm: expected ") + what +
                                 (pos_ >= bytes_.size() ? " (truncated header)" : ""),
                             pos_);
        }
        return value;
    }

    void expect_single_space() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
            throw ParseError("ppm: expected whitespace after maxval", pos_);
        }
        ++pos_;
    }

   private:
    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

Image parse_ppm(std::span<const unsigned char> bytes) {
    if (bytes.size() < 2) throw ParseError("ppm: truncated magic", bytes.size());
    if (bytes[0] != 'P' || bytes[1] != '6') throw ParseError("ppm: unsupported magic", 0);
    PpmReader reader(bytes.subspan(2));
    const std::size_t width = reader.read_uint("width");
    const std::size_t height = reader.read_uint("height");
    const std::size_t maxval = reader.read_uint("maxval");
    if (width == 0 || height == 0) throw ParseError("ppm: zero extent", 2 + reader.pos());
    if (maxval != 255) throw ParseError("ppm: unsupported maxval " + std::to_string(maxval), 2 + reader.pos());
    reader.expect_single_space();
    const std::size_t offset = 2 + reader.pos();
    const std::size_t need = width * height * Image::kChannels;
    if (bytes.size() - offset < need) {
        throw ParseError("ppm: truncated pixel data, expected " + std::to_string(need) + " bytes",
                         bytes.size());
    }
    std::vector<float> pixels(need);
    for (std::size_t i = 0; i < need; ++i) pixels[i] = float(bytes[offset + i]) / 255.0f;
    return Image(height, width, std::move(pixels));
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return parse_ppm(bytes);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what(), e.offset());
    }
}

std::vector<unsigned char> encode_ppm(const Image& image) {
    const std::string header = "P6\n" + std::to_string(image.width()) + " " +
                               std::to_string(image.height()) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(header.size() + image.size());
    for (float v : image.pixels()) {
        out.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
    return out;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
    const auto bytes = encode_ppm(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Image load_image(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ppm" || ext == ".pnm") return read_ppm(path);
    throw IoError("unsupported image format: " + path.string());
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        auto ext = entry.path().extension().string();
        if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pnm")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
    return files;
}

double psnr(const Image& pred, const Image& gt) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
        throw UsageError("psnr: image sizes differ (" + std::to_string(pred.height()) + "x" +
                         std::to_string(pred.width()) + " vs " + std::to_string(gt.height()) + "x" +
                         std::to_string(gt.width()) + ")");
    }
    double acc = 0.0;
    const auto a = pred.pixels();
    const auto b = gt.pixels();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        acc += d * d;
    }
    const double mse = acc / double(a.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace moeisr
