#include "rego/toy_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "rego/errors.hpp"
#include "rego/image_io.hpp"

namespace rego {

namespace {

using Rgb = std::array<double, 3>;

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

}  // namespace

Tensor make_toy_scene(int height, int width, std::uint64_t seed) {
  if (height < 4 || width < 4) throw ConfigError("toy scenes need at least 4x4 pixels");
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pi = std::numbers::pi;

  const Rgb sky_top{0.15 + 0.3 * u(rng), 0.3 + 0.3 * u(rng), 0.6 + 0.35 * u(rng)};
  const Rgb sky_low{0.7 + 0.3 * u(rng), 0.6 + 0.3 * u(rng), 0.5 + 0.4 * u(rng)};
  const Rgb ridge_far{0.3 + 0.2 * u(rng), 0.35 + 0.2 * u(rng), 0.45 + 0.2 * u(rng)};
  const Rgb ridge_near{0.1 + 0.2 * u(rng), 0.3 + 0.3 * u(rng), 0.1 + 0.2 * u(rng)};
  const Rgb ground{0.25 + 0.3 * u(rng), 0.35 + 0.3 * u(rng), 0.1 + 0.15 * u(rng)};

  const double sun_x = width * u(rng);
  const double sun_y = height * (0.1 + 0.25 * u(rng));
  const double sun_r = height * (0.06 + 0.08 * u(rng));

  struct Wave {
    double amp, freq, phase;
  };
  auto ridge = [&](double base, double amp) {
    std::array<Wave, 3> waves{};
    for (int i = 0; i < 3; ++i) waves[i] = {amp * (0.3 + 0.7 * u(rng)) / (i + 1), (1.0 + 2.0 * u(rng)) * (i + 1), 2 * pi * u(rng)};
    return [=](double x) {
      double y = base;
      for (const auto& w : waves) y += w.amp * std::sin(2 * pi * w.freq * x / width + w.phase);
      return y;
    };
  };
  const auto far = ridge(height * (0.45 + 0.1 * u(rng)), height * 0.12);
  const auto near = ridge(height * (0.65 + 0.1 * u(rng)), height * 0.08);
  const double ground_line = height * (0.82 + 0.08 * u(rng));
  const double stripe = 2 * pi * (3.0 + 6.0 * u(rng)) / width;

  Tensor img({height, width, 3});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      Rgb c = mix(sky_top, sky_low, static_cast<double>(y) / (height - 1));
      const double d = std::hypot(x - sun_x, y - sun_y);
      if (d < sun_r) c = mix(c, Rgb{1.0, 0.95, 0.7}, 0.9);
      if (y > far(x)) c = mix(ridge_far, sky_low, 0.2);
      if (y > near(x)) c = mix(ridge_near, ridge_far, 0.15 * (0.5 + 0.5 * std::sin(stripe * x)));
      if (y > ground_line) c = mix(ground, ridge_near, 0.3 * (0.5 + 0.5 * std::sin(stripe * 2 * x + y)));
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = std::clamp(c[ch], 0.0, 1.0);
    }
  }
  return quantize_8bit(img);
}

std::vector<ImageSample> make_toy_set(int count, int height, int width, std::uint64_t seed) {
  if (count < 1) throw ConfigError("toy set size must be >= 1");
  std::vector<ImageSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "toy_%03d", i);
    out.push_back({id, make_toy_scene(height, width, seed * 1000003ULL + static_cast<std::uint64_t>(i))});
  }
  return out;
}

void write_toy_images(const std::filesystem::path& dir, int count, int height, int width, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (const auto& s : make_toy_set(count, height, width, seed)) save_png(dir / (s.id + ".png"), s.pixels);
}

}  // namespace rego
