#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pvnow/datapipe.hpp"

namespace pvnow {

struct RegimeParams {
  std::size_t blobs = 0;           ///< blobs on the periodic cloud plane (3H x 3H pixels)
  double radius_min = 2, radius_max = 5;    ///< blob sigma, pixels
  double opacity_min = 0.6, opacity_max = 1.0;
  double wind_min = 0.3, wind_max = 0.8;    ///< pixels per minute
};

struct SimConfig {
  std::uint64_t seed = 1;
  std::size_t days = 10;
  std::size_t resolution = 32;
  double latitude = 35.03;
  double longitude = 135.78;
  double capacity_w = 2500;
  std::string start_date = "2024-05-01";
  int window_start_min = -100;  ///< capture window relative to solar noon
  int window_end_min = 100;
  std::vector<Weather> regimes;  ///< per day; empty = default rotation
  RegimeParams clear{0};
  RegimeParams partly{40, 2.5, 5.0, 0.7, 1.0, 3.0, 4.0};
  RegimeParams overcast{260, 3.0, 6.0, 0.8, 1.0, 0.5, 1.0};
  double beta = 0.85;          ///< occlusion attenuation
  double noise_w = 5;          ///< std of raw power noise, watts
  double gain = 2.0;           ///< frame value per (radiance * second)
  double sun_radiance = 300;
  double sun_radius_deg = 3;
  bool sun_disk = true;
  int raw_cadence_s = 1;

  Weather regime(std::size_t day) const;
  RegimeParams params(Weather w) const;
  void validate() const;
};

struct TruthMinute {
  Timestamp t = 0;
  SolarPosition sun;
  double cloud_fraction = 0;
  double sky_intensity = 0;  ///< same units as datapipe's sky_intensity(hdr_merge(...))
  double power_w = 0;        ///< noise-free
};

struct SimTruth {
  std::string date;
  Weather regime = Weather::partly;
  Weather label = Weather::partly;
  double cloud_fraction = 0;  ///< day mean
  std::vector<TruthMinute> minutes;
};

struct DayRender {
  std::vector<FrameSet> frames;
  PowerSeries power;
  SimTruth truth;
};

/// Cloud field and radiance model of one simulated day.
class SkyScene {
 public:
  SkyScene(const SimConfig& config, std::size_t day);

  Timestamp noon() const { return noon_; }
  /// Cloud opacity in [0,1] at pixel coordinates (x, y) and time t.
  double opacity(double x, double y, Timestamp t) const;
  /// Mean opacity over the sun disk.
  double occlusion(Timestamp t) const;
  /// Noise-free panel power.
  double clear_power(Timestamp t) const;
  double power(Timestamp t) const;
  /// Pixel radiance map (H*H, row-major).
  std::vector<double> radiance(Timestamp t) const;
  FrameSet frames(Timestamp t) const;
  /// Fraction of the sky solid angle with opacity >= 0.5.
  double cloud_fraction(Timestamp t) const;
  /// Cloud drift, pixels per minute.
  std::array<double, 2> wind() const { return {wind_x_, wind_y_}; }
  /// (x, y) pixel position of the sun.
  std::array<double, 2> sun_pixel(Timestamp t) const;

 private:
  struct Blob {
    double x, y, sigma, opacity;
  };
  const SimConfig& cfg_;
  std::size_t h_;
  Timestamp noon_, origin_;
  double wind_x_ = 0, wind_y_ = 0;
  std::vector<Blob> blobs_;
  std::vector<double> omega_;
};

DayRender render_day(const SimConfig& config, std::size_t day);

/// metadata.json, power.csv, images/*.pgm and truth.json under `out`.
void emit_dataset(const SimConfig& config, const std::filesystem::path& out);

}  // namespace pvnow
