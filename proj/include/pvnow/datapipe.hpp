#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvnow {

// ---------------------------------------------------------------- errors

/// Malformed or inconsistent input data (maps to CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- time

using Timestamp = std::int64_t;  ///< UTC seconds since the epoch

/// "2024-06-21T03:00:00Z"
std::string format_iso(Timestamp t);
Timestamp parse_iso(const std::string& s);
/// "20240621T030000Z" (image file names)
std::string format_compact(Timestamp t);
Timestamp parse_compact(const std::string& s);
/// "2024-06-21"
std::string format_date(Timestamp t);
Timestamp parse_date(const std::string& s);

// ---------------------------------------------------------------- transforms

/// g(x) = x for x < 1, log(x) otherwise. Negative input is an error.
double log_transform(double watts);
/// exp(y) for y >= 0; y below 0 maps to 0 W.
double inverse_log_transform(double y);
/// Powers are clamped to >= 1 W before the log transform.
double clamp_power(double watts);

/// alpha = 1 / g(max training power).
double fit_alpha(const std::vector<double>& train_watts);
/// q = clip(alpha * g(max(x, 1)), 0, 1).
double normalize_power(double watts, double alpha);
/// Inverse of normalize_power on [1 W, 1/alpha-equivalent max].
double denormalize_power(double q, double alpha);

// ---------------------------------------------------------------- series

struct PowerSample {
  Timestamp t = 0;
  double watts = 0;
};
using PowerSeries = std::vector<PowerSample>;

/// One entry per minute boundary t (multiple of 60 s): mean of raw samples with
/// t - 60 < time <= t. Minutes without raw samples are omitted.
PowerSeries minute_average(const PowerSeries& raw);

// ---------------------------------------------------------------- images

inline constexpr std::array<int, 4> kExposuresMs{11, 88, 176, 264};
inline constexpr int kInstants = 5;
inline constexpr int kFrameCadenceS = 15;
inline constexpr int kStackChannels = kInstants * 4;

/// The four exposures captured at one instant, 8-bit, row-major H*H each.
struct FrameSet {
  Timestamp t = 0;
  std::array<std::vector<std::uint8_t>, 4> exposures;
};

/// Fills `out` (20*H*H floats in [0,1]) with instants t-60 .. t (15 s apart) as the
/// slow axis and exposures (short to long) as the fast axis.
void stack_frames(const std::array<const FrameSet*, kInstants>& instants, std::size_t h, float* out);

/// Mean intensity in [0,1] of the longest exposure.
double longest_exposure_mean(const FrameSet& f);

inline constexpr double kDarknessThreshold = 0.02;

// ---------------------------------------------------------------- sky geometry

/// Per-pixel solid angle of an equiangular fisheye whose inscribed circle (radius H/2)
/// spans zenith 0..90 degrees; pixels outside the circle are 0. Row-major H*H.
std::vector<double> solid_angles(std::size_t h, int supersample = 8);

/// Hat-weighted linear HDR merge of the four exposures of one instant; values v in
/// [0,1], exposure times in seconds; result in full-scale units per second.
std::vector<double> hdr_merge(const std::array<const double*, 4>& exposures, std::size_t pixels,
                              const std::array<double, 4>& exposure_s);
std::vector<double> hdr_merge(const FrameSet& f);

/// s = (1/2pi) * sum(b_i * omega_i).
double sky_intensity(const std::vector<double>& radiance, const std::vector<double>& omega);

// ---------------------------------------------------------------- sun

struct SolarPosition {
  double azimuth = 0;    ///< radians, [0, 2pi), clockwise from north
  double elevation = 0;  ///< radians
};

SolarPosition solar_position(Timestamp t, double latitude_deg, double longitude_deg);
/// UTC time of local solar noon on the day containing t (longitude + equation of time).
Timestamp solar_noon(Timestamp day, double longitude_deg);

/// (elevation/pi, azimuth/2pi), the units used in the losses.
std::array<double, 2> normalized_sun(const SolarPosition& p);
/// b - a in normalized units; azimuth difference wrapped to (-pi, pi] first.
std::array<double, 2> sun_delta(const SolarPosition& a, const SolarPosition& b);

// ---------------------------------------------------------------- dataset

enum class Weather { clear, partly, overcast };
std::string to_string(Weather w);
Weather parse_weather(const std::string& s);
/// < 10 % clear, <= 90 % partly, otherwise overcast.
Weather weather_from_cloud_fraction(double fraction);

struct Metadata {
  double latitude = 35.03;
  double longitude = 135.78;
  double capacity_w = 2500;
  std::size_t resolution = 32;
  std::map<std::string, Weather> weather;  ///< date "YYYY-MM-DD" -> label
};

/// A retained minute: power, image stack, sun position and sky intensity.
struct MinuteRecord {
  Timestamp t = 0;
  double watts = 0;
  SolarPosition sun;
  double sky = 0;
  std::array<std::size_t, kInstants> frames{};  ///< indices into DayRecord::frames
};

struct DayRecord {
  std::string date;
  Weather weather = Weather::partly;
  std::vector<FrameSet> frames;
  std::vector<MinuteRecord> minutes;  ///< increasing t, invalid minutes removed
  std::size_t dropped_dark = 0, dropped_zero = 0, dropped_no_images = 0;

  /// 20*H*H stack of minute m.
  void stack(std::size_t m, std::size_t h, float* out) const;
};

struct Dataset {
  Metadata meta;
  std::vector<DayRecord> days;
};

struct FilterStats {
  std::size_t kept = 0, zero_power = 0, dark = 0;
};

/// Removes minutes with zero power or a dark longest exposure (at the stack's last
/// instant). Returns what was dropped.
FilterStats filter_invalid(DayRecord& day, double darkness = kDarknessThreshold);

// ---------------------------------------------------------------- on-disk formats

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& width,
                                   std::size_t& height);

void write_power_csv(const std::filesystem::path& path, const PowerSeries& series);
PowerSeries read_power_csv(const std::filesystem::path& path);

void write_metadata(const std::filesystem::path& path, const Metadata& meta);
Metadata read_metadata(const std::filesystem::path& path);

/// Reads metadata.json, power.csv and images/*.pgm, averages power per minute,
/// stacks frames, computes sun position and sky intensity, and filters invalid
/// minutes. Image discovery order does not matter (frames are sorted by time).
Dataset load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------- samples

/// A supervised example. Steps are minute indices into its day, oldest first.
struct Sample {
  std::size_t day = 0;
  Timestamp t0 = 0;
  std::size_t horizon = 1;
  std::vector<std::size_t> steps;  ///< t0 - (K-1)x .. t0
  std::size_t target = 0;          ///< t0 + x
  std::vector<double> history_w;   ///< x-minute trailing mean power per step
  double target_w = 0;
  std::array<double, 2> delta_sun{};  ///< normalized (elevation, azimuth) change t0 -> t0+x
  double delta_sky = 0;
  Weather weather = Weather::partly;

  double p_t0() const { return history_w.back(); }
};

/// x-minute trailing mean power at each minute of the day (nullopt unless the x
/// minutes ending there are all retained and consecutive).
std::vector<std::optional<double>> trailing_average(const DayRecord& day, std::size_t x);

/// All windows of K points x minutes apart with a target x minutes after t0, skipping
/// any window that touches a removed minute.
std::vector<Sample> make_samples(const Dataset& data, std::size_t day, std::size_t horizon,
                                 std::size_t k = 6);

struct DaySplit {
  std::vector<std::size_t> train, validation, test;
};

/// Seeded whole-day shuffle: floor(20%) test (>= 1), floor(10%) of the rest validation
/// (>= 1), remainder train. Requires >= 5 days.
DaySplit split_days(std::size_t days, std::uint64_t seed);

}  // namespace pvnow
