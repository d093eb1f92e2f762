#include <algorithm>
#include <cmath>
#include <ctime>
#include <numbers>

#include "pvnow/datapipe.hpp"

namespace pvnow {

namespace {
constexpr double kPi = std::numbers::pi;
}

// ---------------------------------------------------------------- frames

void stack_frames(const std::array<const FrameSet*, kInstants>& instants, std::size_t h, float* out) {
  const std::size_t px = h * h;
  for (int i = 0; i < kInstants; ++i) {
    for (int e = 0; e < 4; ++e) {
      const auto& src = instants[i]->exposures[e];
      if (src.size() != px) throw DataError("frame size mismatch at " + format_iso(instants[i]->t));
      float* dst = out + (i * 4 + e) * px;
      for (std::size_t p = 0; p < px; ++p) dst[p] = static_cast<float>(src[p]) / 255.0f;
    }
  }
}

double longest_exposure_mean(const FrameSet& f) {
  const auto& v = f.exposures[3];
  if (v.empty()) return 0;
  double sum = 0;
  for (auto x : v) sum += x;
  return sum / (255.0 * static_cast<double>(v.size()));
}

// ---------------------------------------------------------------- geometry

std::vector<double> solid_angles(std::size_t h, int supersample) {
  if (h < 2 || supersample < 1) throw std::invalid_argument("solid_angles: bad resolution");
  const double half = static_cast<double>(h) / 2;
  const double k = kPi / static_cast<double>(h);  // zenith radians per pixel
  const double sub = 1.0 / supersample;
  const double area = sub * sub;
  std::vector<double> w(h * h, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < h; ++x) {
      double acc = 0;
      for (int a = 0; a < supersample; ++a) {
        for (int b = 0; b < supersample; ++b) {
          const double dy = static_cast<double>(y) + (a + 0.5) * sub - half;
          const double dx = static_cast<double>(x) + (b + 0.5) * sub - half;
          const double r = std::hypot(dx, dy);
          if (r > half) continue;
          // d(omega) = sin(theta) dtheta dphi with theta = k r
          acc += r < 1e-12 ? k * k : k * std::sin(k * r) / r;
        }
      }
      w[y * h + x] = acc * area;
    }
  }
  return w;
}

std::vector<double> hdr_merge(const std::array<const double*, 4>& ex, std::size_t pixels,
                              const std::array<double, 4>& t) {
  std::vector<double> out(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    double num = 0, den = 0;
    for (int e = 0; e < 4; ++e) {
      const double v = ex[e][p];
      if (v > 0.99 || v < 0.01) continue;
      const double w = 1 - std::abs(2 * v - 1);
      num += w * v / t[e];
      den += w;
    }
    out[p] = den > 0 ? num / den : ex[0][p] / t[0];
  }
  return out;
}

std::vector<double> hdr_merge(const FrameSet& f) {
  const std::size_t n = f.exposures[0].size();
  std::array<std::vector<double>, 4> v;
  std::array<const double*, 4> ptr{};
  std::array<double, 4> t{};
  for (int e = 0; e < 4; ++e) {
    if (f.exposures[e].size() != n) throw DataError("exposure size mismatch at " + format_iso(f.t));
    v[e].resize(n);
    for (std::size_t p = 0; p < n; ++p) v[e][p] = f.exposures[e][p] / 255.0;
    ptr[e] = v[e].data();
    t[e] = kExposuresMs[e] / 1000.0;
  }
  return hdr_merge(ptr, n, t);
}

double sky_intensity(const std::vector<double>& radiance, const std::vector<double>& omega) {
  if (radiance.size() != omega.size())
    throw std::invalid_argument("sky_intensity: radiance has " + std::to_string(radiance.size()) +
                                " pixels, solid-angle map has " + std::to_string(omega.size()));
  double s = 0;
  for (std::size_t i = 0; i < radiance.size(); ++i) s += radiance[i] * omega[i];
  return s / (2 * kPi);
}

// ---------------------------------------------------------------- sun

namespace {

struct Ephemeris {
  double declination;  // rad
  double eqtime;       // minutes
};

Ephemeris ephemeris(Timestamp t) {
  const Timestamp day0 = t - ((t % 86400) + 86400) % 86400;
  std::time_t tt = static_cast<std::time_t>(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  const double hours = static_cast<double>(t - day0) / 3600.0;
  const double g = 2 * kPi / 365.0 * (tm.tm_yday + (hours - 12) / 24);
  Ephemeris e;
  e.eqtime = 229.18 * (0.000075 + 0.001868 * std::cos(g) - 0.032077 * std::sin(g) -
                       0.014615 * std::cos(2 * g) - 0.040849 * std::sin(2 * g));
  e.declination = 0.006918 - 0.399912 * std::cos(g) + 0.070257 * std::sin(g) - 0.006758 * std::cos(2 * g) +
                  0.000907 * std::sin(2 * g) - 0.002697 * std::cos(3 * g) + 0.00148 * std::sin(3 * g);
  return e;
}

}  // namespace

SolarPosition solar_position(Timestamp t, double lat_deg, double lon_deg) {
  if (!(std::abs(lat_deg) <= 90)) throw std::invalid_argument("solar_position: |latitude| must be <= 90");
  const Ephemeris e = ephemeris(t);
  const double minutes = static_cast<double>(((t % 86400) + 86400) % 86400) / 60.0;
  const double true_solar = minutes + e.eqtime + 4 * lon_deg;
  const double ha = (true_solar / 4 - 180) * kPi / 180;
  const double lat = lat_deg * kPi / 180;
  const double d = e.declination;
  const double sin_el = std::sin(lat) * std::sin(d) + std::cos(lat) * std::cos(d) * std::cos(ha);
  SolarPosition p;
  p.elevation = std::asin(std::clamp(sin_el, -1.0, 1.0));
  double az = std::atan2(std::sin(ha), std::cos(ha) * std::sin(lat) - std::tan(d) * std::cos(lat)) + kPi;
  az = std::fmod(az, 2 * kPi);
  if (az < 0) az += 2 * kPi;
  p.azimuth = az;
  return p;
}

Timestamp solar_noon(Timestamp day, double lon_deg) {
  const Timestamp day0 = day - ((day % 86400) + 86400) % 86400;
  Timestamp noon = day0 + 43200;
  for (int it = 0; it < 3; ++it) {
    const double minutes = 720 - 4 * lon_deg - ephemeris(noon).eqtime;
    noon = day0 + static_cast<Timestamp>(std::llround(minutes * 60));
  }
  return noon;
}

std::array<double, 2> normalized_sun(const SolarPosition& p) {
  return {p.elevation / kPi, p.azimuth / (2 * kPi)};
}

std::array<double, 2> sun_delta(const SolarPosition& a, const SolarPosition& b) {
  double daz = b.azimuth - a.azimuth;
  while (daz > kPi) daz -= 2 * kPi;
  while (daz <= -kPi) daz += 2 * kPi;
  return {(b.elevation - a.elevation) / kPi, daz / (2 * kPi)};
}

}  // namespace pvnow
