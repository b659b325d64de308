#include "rego/image_io.hpp"

#include <sodium.h>

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rego/errors.hpp"

namespace rego {
namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Tensor from_mat(const cv::Mat& mat, int channels) {
  cv::Mat src;
  if (channels == 3) {
    if (mat.channels() == 1) cv::cvtColor(mat, src, cv::COLOR_GRAY2RGB);
    else if (mat.channels() == 4) cv::cvtColor(mat, src, cv::COLOR_BGRA2RGB);
    else cv::cvtColor(mat, src, cv::COLOR_BGR2RGB);
  } else {
    if (mat.channels() == 3) cv::cvtColor(mat, src, cv::COLOR_BGR2GRAY);
    else if (mat.channels() == 4) cv::cvtColor(mat, src, cv::COLOR_BGRA2GRAY);
    else src = mat;
  }
  if (src.depth() != CV_8U) src.convertTo(src, CV_8U);
  Tensor out({src.rows, src.cols, channels});
  for (int y = 0; y < src.rows; ++y) {
    const std::uint8_t* row = src.ptr<std::uint8_t>(y);
    for (int x = 0; x < src.cols * channels; ++x) out[static_cast<std::size_t>(y) * src.cols * channels + x] = row[x] / 255.0;
  }
  return out;
}

cv::Mat to_mat(const Tensor& image) {
  require_rank3(image, "image encode");
  const int c = image.channels();
  if (c != 1 && c != 3) throw ShapeError("image encode: expected 1 or 3 channels, got " + image.shape_string());
  cv::Mat rgb(image.height(), image.width(), c == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < image.height(); ++y) {
    std::uint8_t* row = rgb.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width() * c; ++x) row[x] = to_byte(image[static_cast<std::size_t>(y) * image.width() * c + x]);
  }
  if (c == 3) cv::cvtColor(rgb, rgb, cv::COLOR_RGB2BGR);
  return rgb;
}

Tensor load(const std::filesystem::path& path, int channels) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw IoError("cannot decode image: " + path.string());
  return from_mat(mat, channels);
}

void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw IoError("libsodium initialization failed");
}

}  // namespace

Tensor load_rgb(const std::filesystem::path& path) { return load(path, 3); }
Tensor load_gray(const std::filesystem::path& path) { return load(path, 1); }

void save_png(const std::filesystem::path& path, const Tensor& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), to_mat(image))) throw IoError("cannot write PNG: " + path.string());
}

std::vector<std::uint8_t> encode_png(const Tensor& image) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", to_mat(image), buf)) throw IoError("PNG encoding failed");
  return buf;
}

Tensor decode_image(const std::vector<std::uint8_t>& bytes, int channels) {
  if (channels != 1 && channels != 3) throw ConfigError("decode_image: channels must be 1 or 3");
  if (bytes.empty()) throw IoError("empty image payload");
  cv::Mat mat = cv::imdecode(bytes, cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw IoError("undecodable image payload");
  return from_mat(mat, channels);
}

Tensor quantize_8bit(const Tensor& image) {
  Tensor out(image.dims());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = to_byte(image[i]) / 255.0;
  return out;
}

Tensor resize(const Tensor& image, int height, int width) {
  require_rank3(image, "resize");
  if (height < 1 || width < 1) throw ConfigError("resize: non-positive target size");
  if (image.height() == height && image.width() == width) return image;
  const int c = image.channels();
  cv::Mat src(image.height(), image.width(), CV_64FC(c), const_cast<double*>(image.data()));
  cv::Mat dst;
  const bool shrink = height <= image.height() && width <= image.width();
  cv::resize(src, dst, cv::Size(width, height), 0, 0, shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
  Tensor out({height, width, c});
  for (int y = 0; y < height; ++y) std::copy_n(dst.ptr<double>(y), width * c, &out.at(y, 0, 0));
  return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  ensure_sodium();
  const std::size_t len = sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  std::string out(len, '\0');
  sodium_bin2base64(out.data(), len, bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
  out.resize(len - 1);  // drop terminator
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  ensure_sodium();
  // accept data URLs from browsers
  if (auto comma = text.find(','); text.rfind("data:", 0) == 0 && comma != std::string_view::npos) {
    text.remove_prefix(comma + 1);
  }
  std::vector<std::uint8_t> out(text.size() / 4 * 3 + 3);
  std::size_t len = 0;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), " \r\n\t", &len, nullptr,
                        sodium_base64_VARIANT_ORIGINAL) != 0) {
    throw IoError("malformed base64 payload");
  }
  out.resize(len);
  return out;
}

bool is_image_file(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace rego
