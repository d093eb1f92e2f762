#include "pvnow/skysim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace pvnow {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double gaussian(std::mt19937_64& rng) {
  // Box-Muller; deterministic across standard libraries
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return std::sqrt(-2 * std::log(u1)) * std::cos(2 * kPi * u2);
}

FrameSet expose(const std::vector<double>& r, Timestamp t, double gain) {
  FrameSet f;
  f.t = t;
  for (int e = 0; e < 4; ++e) {
    const double te = kExposuresMs[e] / 1000.0;
    auto& v = f.exposures[e];
    v.resize(r.size());
    for (std::size_t i = 0; i < r.size(); ++i)
      v[i] = static_cast<std::uint8_t>(std::lround(std::clamp(r[i] * te * gain, 0.0, 1.0) * 255));
  }
  return f;
}

double daylight(double elevation) {
  return std::clamp((elevation * 180 / kPi + 6) / 12, 0.0, 1.0);
}

}  // namespace

// ---------------------------------------------------------------- config

Weather SimConfig::regime(std::size_t day) const {
  if (!regimes.empty()) return regimes.at(day);
  switch (day % 5) {
    case 2: return Weather::clear;
    case 4: return Weather::overcast;
    default: return Weather::partly;
  }
}

RegimeParams SimConfig::params(Weather w) const {
  switch (w) {
    case Weather::clear: return clear;
    case Weather::overcast: return overcast;
    default: return partly;
  }
}

void SimConfig::validate() const {
  if (resolution < 16 || (resolution & (resolution - 1)) != 0)
    throw std::invalid_argument("simulator resolution must be 8*2^L with L >= 1 (16, 32, 64, ...)");
  if (days == 0) throw std::invalid_argument("simulator needs at least one day");
  if (!regimes.empty() && regimes.size() != days)
    throw std::invalid_argument("regime list has " + std::to_string(regimes.size()) + " entries for " +
                                std::to_string(days) + " days");
  if (window_end_min <= window_start_min) throw std::invalid_argument("empty capture window");
  if (!(beta > 0 && beta <= 1)) throw std::invalid_argument("beta must be in (0, 1]");
  if (60 % kFrameCadenceS != 0 || raw_cadence_s < 1 || 60 % raw_cadence_s != 0)
    throw std::invalid_argument("cadences must divide 60 s");
  if (std::abs(latitude) > 90) throw std::invalid_argument("latitude out of range");
  parse_date(start_date);
}

// ---------------------------------------------------------------- scene

SkyScene::SkyScene(const SimConfig& config, std::size_t day)
    : cfg_(config), h_(config.resolution), omega_(solid_angles(config.resolution)) {
  const Timestamp date = parse_date(config.start_date) + static_cast<Timestamp>(day) * 86400;
  noon_ = solar_noon(date, config.longitude);
  origin_ = noon_;
  std::mt19937_64 rng(config.seed ^ day);
  const RegimeParams p = config.params(config.regime(day));
  const double plane = 3.0 * static_cast<double>(h_);
  const double speed = uniform(rng, p.wind_min, p.wind_max);
  const double dir = uniform(rng, 0, 2 * kPi);
  wind_x_ = speed * std::cos(dir);
  wind_y_ = speed * std::sin(dir);
  for (std::size_t i = 0; i < p.blobs; ++i) {
    Blob b;
    b.x = uniform(rng, 0, plane);
    b.y = uniform(rng, 0, plane);
    b.sigma = uniform(rng, p.radius_min, p.radius_max);
    b.opacity = uniform(rng, p.opacity_min, p.opacity_max);
    blobs_.push_back(b);
  }
}

double SkyScene::opacity(double x, double y, Timestamp t) const {
  const double plane = 3.0 * static_cast<double>(h_);
  const double minutes = static_cast<double>(t - origin_) / 60.0;
  const double px = x + static_cast<double>(h_), py = y + static_cast<double>(h_);
  double clear = 1;
  for (const Blob& b : blobs_) {
    double dx = px - (b.x + wind_x_ * minutes);
    double dy = py - (b.y + wind_y_ * minutes);
    dx -= plane * std::round(dx / plane);
    dy -= plane * std::round(dy / plane);
    const double reach = 4 * b.sigma;
    if (std::abs(dx) > reach || std::abs(dy) > reach) continue;
    // flat-topped Gaussian: opaque core, soft rim
    const double o = b.opacity * std::min(1.0, 1.6 * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma)));
    clear *= 1 - o;
  }
  return 1 - clear;
}

std::array<double, 2> SkyScene::sun_pixel(Timestamp t) const {
  const SolarPosition s = solar_position(t, cfg_.latitude, cfg_.longitude);
  const double r = (kPi / 2 - s.elevation) * static_cast<double>(h_) / kPi;
  const double c = static_cast<double>(h_) / 2;
  return {c + r * std::sin(s.azimuth), c - r * std::cos(s.azimuth)};
}

double SkyScene::occlusion(Timestamp t) const {
  const auto [sx, sy] = sun_pixel(t);
  const double rad = cfg_.sun_radius_deg * static_cast<double>(h_) / 180.0;
  double sum = opacity(sx, sy, t);
  for (int i = 0; i < 6; ++i) {
    const double a = i * kPi / 3;
    sum += opacity(sx + 0.7 * rad * std::cos(a), sy + 0.7 * rad * std::sin(a), t);
  }
  return sum / 7;
}

double SkyScene::clear_power(Timestamp t) const {
  const SolarPosition s = solar_position(t, cfg_.latitude, cfg_.longitude);
  return cfg_.capacity_w * std::max(0.0, std::sin(s.elevation));
}

double SkyScene::power(Timestamp t) const {
  const double c = clear_power(t);
  return c > 0 ? c * (1 - cfg_.beta * occlusion(t)) : 0.0;
}

std::vector<double> SkyScene::radiance(Timestamp t) const {
  const SolarPosition s = solar_position(t, cfg_.latitude, cfg_.longitude);
  const double light = daylight(s.elevation);
  const double zs = kPi / 2 - s.elevation;
  const double c = static_cast<double>(h_) / 2;
  const double k = kPi / static_cast<double>(h_);
  std::vector<double> out(h_ * h_, 0.0);
  if (light <= 0) return out;
  const auto [sx, sy] = sun_pixel(t);
  const double sun_rad = cfg_.sun_radius_deg * static_cast<double>(h_) / 180.0;
  for (std::size_t y = 0; y < h_; ++y) {
    for (std::size_t x = 0; x < h_; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const double dx = px - c, dy = py - c;
      const double r = std::hypot(dx, dy);
      if (r > c + 1) continue;
      const double zenith = std::min(k * r, kPi / 2);
      const double phi = std::atan2(dx, -dy);
      const double cos_g = std::cos(zenith) * std::cos(zs) + std::sin(zenith) * std::sin(zs) * std::cos(phi - s.azimuth);
      const double gamma = std::acos(std::clamp(cos_g, -1.0, 1.0));
      const double o = opacity(px, py, t);
      const double sky = 0.35 + 0.25 * zenith / (kPi / 2) + 0.8 * std::exp(-gamma / 0.25);
      const double cloud = (1.6 + 2.5 * std::exp(-gamma / 0.35)) * (1 - 0.4 * o);
      double b = sky * (1 - o) + cloud * o;
      if (cfg_.sun_disk && std::abs(px - sx) < sun_rad + 1 && std::abs(py - sy) < sun_rad + 1) {
        int inside = 0;
        constexpr int n = 8;
        for (int a = 0; a < n; ++a)
          for (int bb = 0; bb < n; ++bb) {
            const double qx = static_cast<double>(x) + (bb + 0.5) / n - sx;
            const double qy = static_cast<double>(y) + (a + 0.5) / n - sy;
            if (qx * qx + qy * qy <= sun_rad * sun_rad) ++inside;
          }
        b += cfg_.sun_radiance * (1 - o) * inside / double(n * n);
      }
      out[y * h_ + x] = light * b;
    }
  }
  return out;
}

FrameSet SkyScene::frames(Timestamp t) const { return expose(radiance(t), t, cfg_.gain); }

double SkyScene::cloud_fraction(Timestamp t) const {
  double cloudy = 0, total = 0;
  for (std::size_t y = 0; y < h_; ++y)
    for (std::size_t x = 0; x < h_; ++x) {
      const double w = omega_[y * h_ + x];
      if (w == 0) continue;
      total += w;
      if (opacity(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, t) >= 0.5) cloudy += w;
    }
  return total > 0 ? cloudy / total : 0;
}

// ---------------------------------------------------------------- rendering

DayRender render_day(const SimConfig& config, std::size_t day) {
  config.validate();
  const SkyScene scene(config, day);
  const Timestamp noon = scene.noon();
  const auto floor60 = [](Timestamp t) { return t - ((t % 60) + 60) % 60; };
  const Timestamp first = floor60(noon + config.window_start_min * 60 + 59);
  const Timestamp last = floor60(noon + config.window_end_min * 60);

  DayRender out;
  out.truth.date = format_date(noon);
  out.truth.regime = config.regime(day);
  const auto omega = solid_angles(config.resolution);

  for (Timestamp t = first - 60; t <= last; t += kFrameCadenceS) {
    const auto r = scene.radiance(t);
    out.frames.push_back(expose(r, t, config.gain));
    if (t >= first && t % 60 == 0) {
      TruthMinute m;
      m.t = t;
      m.sun = solar_position(t, config.latitude, config.longitude);
      m.cloud_fraction = scene.cloud_fraction(t);
      std::vector<double> scaled(r.size());
      for (std::size_t i = 0; i < r.size(); ++i) scaled[i] = r[i] * config.gain;
      m.sky_intensity = sky_intensity(scaled, omega);
      m.power_w = scene.power(t);
      out.truth.minutes.push_back(m);
    }
  }

  std::mt19937_64 noise((config.seed ^ day) + 0x9e3779b97f4a7c15ULL);
  for (Timestamp t = first - 60 + config.raw_cadence_s; t <= last; t += config.raw_cadence_s) {
    const double p = scene.power(t);
    const double w = p > 0 ? std::clamp(p + config.noise_w * gaussian(noise), 0.0, config.capacity_w) : 0.0;
    out.power.push_back({t, w});
  }

  double cf = 0;
  for (const auto& m : out.truth.minutes) cf += m.cloud_fraction;
  out.truth.cloud_fraction = out.truth.minutes.empty() ? 0 : cf / static_cast<double>(out.truth.minutes.size());
  out.truth.label = weather_from_cloud_fraction(out.truth.cloud_fraction);
  return out;
}

void emit_dataset(const SimConfig& config, const fs::path& out) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out / "images", ec);
  if (ec) throw DataError("cannot create " + (out / "images").string() + ": " + ec.message());

  std::vector<DayRender> days(config.days);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t d = 0; d < config.days; ++d) days[d] = render_day(config, d);

  Metadata meta;
  meta.latitude = config.latitude;
  meta.longitude = config.longitude;
  meta.capacity_w = config.capacity_w;
  meta.resolution = config.resolution;
  PowerSeries power;
  json truth_days = json::array();
  for (const auto& d : days) {
    meta.weather[d.truth.date] = d.truth.label;
    power.insert(power.end(), d.power.begin(), d.power.end());
    for (const auto& f : d.frames)
      for (int e = 0; e < 4; ++e)
        write_pgm(out / "images" / (format_compact(f.t) + "_" + std::to_string(kExposuresMs[e]) + ".pgm"),
                  config.resolution, config.resolution, f.exposures[e]);
    json minutes = json::array();
    for (const auto& m : d.truth.minutes)
      minutes.push_back({{"timestamp", format_iso(m.t)},
                         {"azimuth", m.sun.azimuth},
                         {"elevation", m.sun.elevation},
                         {"cloud_fraction", m.cloud_fraction},
                         {"sky_intensity", m.sky_intensity},
                         {"power_w", m.power_w}});
    truth_days.push_back({{"date", d.truth.date},
                          {"regime", to_string(d.truth.regime)},
                          {"label", to_string(d.truth.label)},
                          {"cloud_fraction", d.truth.cloud_fraction},
                          {"minutes", minutes}});
  }
  write_metadata(out / "metadata.json", meta);
  write_power_csv(out / "power.csv", power);

  json truth = {{"schema_version", 1},
                {"seed", config.seed},
                {"resolution", config.resolution},
                {"latitude", config.latitude},
                {"longitude", config.longitude},
                {"capacity_w", config.capacity_w},
                {"beta", config.beta},
                {"gain", config.gain},
                {"days", truth_days}};
  std::ofstream f(out / "truth.json");
  if (!f) throw DataError("cannot write " + (out / "truth.json").string());
  f << truth.dump(1) << '\n';
  if (!f) throw DataError("write failed: " + (out / "truth.json").string());
}

}  // namespace pvnow
