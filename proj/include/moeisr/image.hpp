#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace moeisr {

/// H×W×3 RGB image, row-major interleaved, intensities nominally in [0,1].
class Image {
   public:
    static constexpr std::size_t kChannels = 3;

    Image() = default;
    Image(std::size_t height, std::size_t width, float fill = 0.0f);
    Image(std::size_t height, std::size_t width, std::vector<float> pixels);

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t size() const { return pixels_.size(); }
    bool empty() const { return pixels_.empty(); }

    float& at(std::size_t y, std::size_t x, std::size_t c) {
        return pixels_[(y * width_ + x) * kChannels + c];
    }
    float at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels_[(y * width_ + x) * kChannels + c];
    }

    std::span<const float> pixels() const { return pixels_; }
    std::span<float> pixels() { return pixels_; }

    Image crop(std::size_t top, std::size_t left, std::size_t height, std::size_t width) const;
    void clamp();

    bool operator==(const Image&) const = default;

   private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<float> pixels_;
};

/// Binary PPM (P6, maxval 255). Throws ParseError with the failing byte
/// offset on malformed input and IoError when the file cannot be read.
Image read_ppm(const std::filesystem::path& path);
Image parse_ppm(std::span<const unsigned char> bytes);
/// Values are clamped to [0,1] and rounded to the nearest of 256 levels.
void write_ppm(const std::filesystem::path& path, const Image& image);
std::vector<unsigned char> encode_ppm(const Image& image);

/// Dispatches on extension; only .ppm is supported.
Image load_image(const std::filesystem::path& path);

/// Regular files in `dir`, sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Cap returned when the images are identical.
inline constexpr double kPsnrCap = 100.0;

/// 10·log10(1/MSE) over every RGB value; kPsnrCap when MSE is zero.
double psnr(const Image& pred, const Image& gt);

}  // namespace moeisr
