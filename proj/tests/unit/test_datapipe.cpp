#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <unistd.h>

#include "pvnow/datapipe.hpp"

using namespace pvnow;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180;

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pvnow_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

FrameSet uniform_frame(Timestamp t, std::size_t h, std::uint8_t v) {
  FrameSet f;
  f.t = t;
  for (auto& e : f.exposures) e.assign(h * h, v);
  return f;
}

// A day of retained minutes with the given powers, one frame set per minute.
DayRecord synthetic_day(Timestamp start, const std::vector<double>& watts) {
  DayRecord d;
  d.date = format_date(start);
  for (std::size_t i = 0; i < watts.size(); ++i) {
    MinuteRecord m;
    m.t = start + static_cast<Timestamp>(i) * 60;
    m.watts = watts[i];
    m.sky = 0.01 * static_cast<double>(i);
    m.sun.elevation = 0.5 + 0.001 * static_cast<double>(i);
    m.sun.azimuth = 3.0;
    d.frames.push_back(uniform_frame(m.t, 4, 128));
    m.frames.fill(d.frames.size() - 1);
    d.minutes.push_back(m);
  }
  return d;
}

Dataset one_day(DayRecord d) {
  Dataset ds;
  ds.days.push_back(std::move(d));
  return ds;
}

}  // namespace

// ---------------------------------------------------------------- time

TEST_CASE("timestamps round-trip through the text formats") {
  const Timestamp t = parse_iso("2024-06-21T03:00:15Z");
  CHECK(t == 1718938815);
  CHECK(format_iso(t) == "2024-06-21T03:00:15Z");
  CHECK(format_compact(t) == "20240621T030015Z");
  CHECK(parse_compact("20240621T030015Z") == t);
  CHECK(format_date(t) == "2024-06-21");
  CHECK(parse_date("2024-06-21") == t - 3 * 3600 - 15);
  CHECK_THROWS_AS(parse_iso("2024-06-21 03:00:15"), DataError);
  CHECK_THROWS_AS(parse_compact("20241321T030015Z"), DataError);
}

// ---------------------------------------------------------------- transforms

TEST_CASE("log transform examples") {
  CHECK(log_transform(1.0) == 0.0);
  CHECK(log_transform(std::exp(1.0)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(log_transform(0.5) == 0.5);
  CHECK(std::abs(inverse_log_transform(log_transform(2500)) - 2500) / 2500 < 1e-6);
  CHECK_THROWS_AS(log_transform(-1.0), std::domain_error);
}

TEST_CASE("round trip on [1 W, 2500 W]") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, std::log(2500.0));
  const double alpha = fit_alpha({2500.0});
  for (int i = 0; i < 2000; ++i) {
    const double p = std::exp(u(rng));
    CHECK(std::abs(inverse_log_transform(log_transform(p)) - p) / p < 1e-6);
    const double q = normalize_power(p, alpha);
    CHECK(q >= 0.0);
    CHECK(q <= 1.0);
    CHECK(std::abs(denormalize_power(q, alpha) - p) / p < 1e-6);
    CHECK(std::abs(normalize_power(denormalize_power(q, alpha), alpha) - q) <= 1e-6 * q + 1e-15);
  }
}

TEST_CASE("alpha fitting and clipping") {
  const double alpha = fit_alpha({10.0, 2500.0, 300.0});
  CHECK(alpha == doctest::Approx(1 / std::log(2500.0)));
  CHECK(alpha == doctest::Approx(0.1278).epsilon(1e-3));
  CHECK(normalize_power(2500, alpha) == doctest::Approx(1.0));
  CHECK(normalize_power(1, alpha) == 0.0);
  CHECK(normalize_power(1, 7.0) == 0.0);
  CHECK(normalize_power(0.2, alpha) == 0.0);  // clamped to 1 W
  CHECK(normalize_power(4000, alpha) == 1.0);
  CHECK_THROWS_AS(fit_alpha({}), DataError);
}

// ---------------------------------------------------------------- series

TEST_CASE("minute averaging") {
  PowerSeries constant, alternating, ramp;
  const Timestamp t0 = parse_iso("2024-06-21T03:00:00Z");
  for (int s = 1; s <= 180; ++s) {
    constant.push_back({t0 + s, 100.0});
    alternating.push_back({t0 + s, s % 2 ? 0.0 : 200.0});
  }
  for (int s = 1; s <= 60; ++s) ramp.push_back({t0 + s, static_cast<double>(s - 1)});

  const auto c = minute_average(constant);
  REQUIRE(c.size() == 3);
  for (const auto& e : c) CHECK(e.watts == 100.0);
  CHECK(c[0].t == t0 + 60);

  for (const auto& e : minute_average(alternating)) CHECK(e.watts == 100.0);

  const auto r = minute_average(ramp);
  REQUIRE(r.size() == 1);
  CHECK(r[0].watts == doctest::Approx(29.5));

  // a gap of a whole minute leaves no entry
  PowerSeries gap{{t0 + 10, 5.0}, {t0 + 150, 7.0}};
  const auto g = minute_average(gap);
  REQUIRE(g.size() == 2);
  CHECK(g[0].t == t0 + 60);
  CHECK(g[1].t == t0 + 180);
}

TEST_CASE("invalid-data filter") {
  DayRecord d = synthetic_day(parse_iso("2024-06-21T03:00:00Z"), {500, 0, 500, 500});
  d.frames[2].exposures[3].assign(16, 0);  // all-black longest exposure at minute 2
  const FilterStats st = filter_invalid(d);
  CHECK(st.kept == 2);
  CHECK(st.zero_power == 1);
  CHECK(st.dark == 1);
  REQUIRE(d.minutes.size() == 2);
  CHECK(d.minutes[0].watts == 500);
  CHECK(d.minutes[1].t == parse_iso("2024-06-21T03:03:00Z"));

  DayRecord dark = synthetic_day(parse_iso("2024-06-21T03:00:00Z"), {500});
  for (auto& e : dark.frames[0].exposures) e.assign(16, 0);
  CHECK(filter_invalid(dark).kept == 0);
  CHECK(dark.minutes.empty());
}

// ---------------------------------------------------------------- images

TEST_CASE("stack channel order is instant-major, exposure-minor") {
  std::vector<FrameSet> sets;
  for (int i = 0; i < kInstants; ++i) {
    FrameSet f;
    f.t = i * 15;
    for (int e = 0; e < 4; ++e) f.exposures[e].assign(4, static_cast<std::uint8_t>(10 * i + e));
    sets.push_back(f);
  }
  std::array<const FrameSet*, kInstants> ptr{};
  for (int i = 0; i < kInstants; ++i) ptr[i] = &sets[i];
  std::vector<float> out(kStackChannels * 4);
  stack_frames(ptr, 2, out.data());
  for (int c = 0; c < kStackChannels; ++c)
    for (int p = 0; p < 4; ++p) CHECK(out[c * 4 + p] == doctest::Approx((10 * (c / 4) + c % 4) / 255.0));
}

// ---------------------------------------------------------------- HDR

TEST_CASE("hdr merge of linear exposures") {
  const std::array<double, 4> t{0.011, 0.088, 0.176, 0.264};
  auto merge_one = [&](double radiance) {
    std::array<double, 4> v{};
    for (int e = 0; e < 4; ++e) v[e] = std::clamp(radiance * t[e], 0.0, 1.0);
    std::array<const double*, 4> p{&v[0], &v[1], &v[2], &v[3]};
    return hdr_merge(p, 1, t)[0];
  };
  // unsaturated everywhere
  for (double r : {0.2, 1.0, 2.5, 3.7}) CHECK(std::abs(merge_one(r) - r) < 1e-6);
  // saturated at 264 ms (and 176 ms) but linear at the shorter exposures
  for (double r : {4.5, 6.0, 11.0}) CHECK(std::abs(merge_one(r) - r) < 1e-6);
  // all-zero frames use the fallback
  CHECK(merge_one(0.0) == 0.0);
  // fully saturated pixel falls back to the shortest exposure
  CHECK(merge_one(1e4) == doctest::Approx(1 / 0.011));
}

TEST_CASE("hdr merge of 8-bit frames") {
  FrameSet f = uniform_frame(0, 2, 0);
  const double r = 2.0;
  for (int e = 0; e < 4; ++e)
    f.exposures[e].assign(4, static_cast<std::uint8_t>(std::lround(r * kExposuresMs[e] / 1000.0 * 255)));
  for (double b : hdr_merge(f)) CHECK(b == doctest::Approx(r).epsilon(0.02));
}

// ---------------------------------------------------------------- geometry

TEST_CASE("solid angles cover the hemisphere") {
  for (std::size_t h : {64, 128, 256}) {
    const auto w = solid_angles(h);
    double sum = 0;
    for (double x : w) sum += x;
    INFO("H=" << h);
    CHECK(sum >= 2 * kPi * 0.99);
    CHECK(sum <= 2 * kPi * 1.01);
  }
  const auto w = solid_angles(64);
  CHECK(w[0] == 0.0);                 // corner, outside the circle
  CHECK(w[31 * 64 + 0] > 0.0);        // edge of the horizon ring
  for (double x : w) CHECK(x >= 0.0);
}

TEST_CASE("equiangular solid angle shrinks with zenith angle") {
  // Equal pixel areas map to d(omega) = sin(theta)/theta * (dtheta)^2 * ..., which
  // falls from the zenith to the horizon.
  const std::size_t h = 64;
  const auto w = solid_angles(h, 16);
  const double center = w[32 * h + 32];
  const double mid = w[32 * h + 48];  // r = 16.5 px, zenith ~46 degrees
  CHECK(center > mid);
  const double theta = 16.5 * kPi / h;
  CHECK(mid / center == doctest::Approx(std::sin(theta) / theta).epsilon(0.01));
}

TEST_CASE("sky intensity") {
  const std::size_t h = 64;
  const auto omega = solid_angles(h);
  CHECK(sky_intensity(std::vector<double>(h * h, 1.0), omega) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(sky_intensity(std::vector<double>(h * h, 0.0), omega) == 0.0);

  // upper half of the image disk lit
  std::vector<double> half(h * h, 0.0);
  for (std::size_t y = 0; y < h / 2; ++y)
    for (std::size_t x = 0; x < h; ++x) half[y * h + x] = 1.0;
  const double s = sky_intensity(half, omega);
  // dense quadrature of the same region: half-disk in polar coordinates
  double dense = 0;
  const int nr = 4000;
  for (int i = 0; i < nr; ++i) {
    const double theta = (i + 0.5) * (kPi / 2) / nr;
    dense += std::sin(theta) * (kPi / 2 / nr) * kPi;  // phi spans pi
  }
  CHECK(dense / (2 * kPi) == doctest::Approx(0.5).epsilon(1e-6));
  double sum = 0;
  for (double x : omega) sum += x;
  CHECK(s == doctest::Approx(dense / (2 * kPi)).epsilon(0.01));
  CHECK(s == doctest::Approx(sum / (4 * kPi)).epsilon(1e-9));  // exactly half the map by symmetry

  // linear in radiance
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 3);
  std::vector<double> b(h * h), b2(h * h);
  for (std::size_t i = 0; i < b.size(); ++i) {
    b[i] = u(rng);
    b2[i] = 2.7 * b[i];
  }
  CHECK(std::abs(sky_intensity(b2, omega) - 2.7 * sky_intensity(b, omega)) < 1e-9);

  CHECK_THROWS_AS(sky_intensity(std::vector<double>(10), omega), std::invalid_argument);
}

// ---------------------------------------------------------------- sun

TEST_CASE("solar position") {
  const Timestamp equinox = parse_date("2024-03-20");
  const Timestamp noon = solar_noon(equinox, 0.0);
  const SolarPosition n = solar_position(noon, 0.0, 0.0);
  CHECK(std::abs(n.elevation / kDeg - 90) < 1.0);

  const SolarPosition dawn = solar_position(noon - 6 * 3600, 0.0, 0.0);
  CHECK(std::abs(dawn.elevation / kDeg) < 1.0);
  CHECK(std::abs(dawn.azimuth / kDeg - 90) < 1.0);
  const SolarPosition dusk = solar_position(noon + 6 * 3600, 0.0, 0.0);
  CHECK(std::abs(dusk.azimuth / kDeg - 270) < 1.0);

  const Timestamp solstice = parse_date("2024-06-21");
  const Timestamp kyoto_noon = solar_noon(solstice, 135.78);
  CHECK(format_date(kyoto_noon) == "2024-06-21");
  const SolarPosition k = solar_position(kyoto_noon, 35.03, 135.78);
  CHECK(std::abs(k.elevation / kDeg - (90 - std::abs(35.03 - 23.44))) < 1.0);
  CHECK(std::abs(k.azimuth / kDeg - 180) < 1.0);  // due south

  // morning sun in Kyoto is in the east and rising
  const SolarPosition a = solar_position(kyoto_noon - 7200, 35.03, 135.78);
  const SolarPosition b = solar_position(kyoto_noon - 7140, 35.03, 135.78);
  CHECK(a.azimuth < kPi);
  CHECK(b.elevation > a.elevation);
  CHECK_THROWS_AS(solar_position(0, 91, 0), std::invalid_argument);
}

TEST_CASE("sun deltas wrap azimuth") {
  SolarPosition a{2 * kPi - 0.01, 0.3}, b{0.01, 0.31};
  const auto d = sun_delta(a, b);
  CHECK(d[0] == doctest::Approx(0.01 / kPi));
  CHECK(d[1] == doctest::Approx(0.02 / (2 * kPi)));
  const auto back = sun_delta(b, a);
  CHECK(back[1] == doctest::Approx(-0.02 / (2 * kPi)));
  CHECK(normalized_sun({kPi, kPi / 2})[0] == doctest::Approx(0.5));
  CHECK(normalized_sun({kPi, kPi / 2})[1] == doctest::Approx(0.5));
}

// ---------------------------------------------------------------- samples

TEST_CASE("1-minute samples") {
  const Timestamp start = parse_iso("2024-06-21T03:00:00Z");
  std::vector<double> w(20);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 100.0 + 10.0 * static_cast<double>(i);
  const Dataset ds = one_day(synthetic_day(start, w));
  const auto s = make_samples(ds, 0, 1);
  REQUIRE(s.size() == 20 - 6);
  const Sample& first = s.front();
  REQUIRE(first.steps.size() == 6);
  for (std::size_t j = 0; j < 6; ++j) CHECK(ds.days[0].minutes[first.steps[j]].t == first.t0 - (5 - j) * 60);
  CHECK(ds.days[0].minutes[first.target].t == first.t0 + 60);
  CHECK(first.t0 == start + 5 * 60);
  CHECK(first.p_t0() == 150.0);
  CHECK(first.target_w == 160.0);
  CHECK(first.delta_sky == doctest::Approx(0.01));
  CHECK(first.delta_sun[0] == doctest::Approx(0.001 / kPi));
  CHECK(first.delta_sun[1] == 0.0);
}

TEST_CASE("10-minute samples use trailing averages") {
  const Timestamp start = parse_iso("2024-06-21T03:00:00Z");
  std::vector<double> w(80);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i);
  const Dataset ds = one_day(synthetic_day(start, w));
  const auto s = make_samples(ds, 0, 10);
  // t0 needs 9 earlier minutes for its own average plus 50 minutes of history and 10 ahead
  REQUIRE(s.size() == 80 - 59 - 10);
  const Sample& first = s.front();
  CHECK(first.t0 == start + 59 * 60);
  for (std::size_t j = 0; j < 6; ++j) {
    CHECK(ds.days[0].minutes[first.steps[j]].t == first.t0 - static_cast<Timestamp>(5 - j) * 600);
    const double last = static_cast<double>(first.steps[j]);
    CHECK(first.history_w[j] == doctest::Approx(last - 4.5));  // mean of the 10 minutes ending there
  }
  CHECK(first.target_w == doctest::Approx(69 - 4.5));
  CHECK(first.horizon == 10);
}

TEST_CASE("constant series gives zero variation and gaps remove windows") {
  const Timestamp start = parse_iso("2024-06-21T03:00:00Z");
  const Dataset ds = one_day(synthetic_day(start, std::vector<double>(30, 700.0)));
  const auto all = make_samples(ds, 0, 1);
  CHECK(all.size() == 24);
  const double alpha = fit_alpha({700, 2500});
  for (const auto& s : all)
    CHECK(normalize_power(s.target_w, alpha) - normalize_power(s.p_t0(), alpha) == 0.0);

  // remove minute 15: windows whose steps or target touch it disappear
  DayRecord gap = synthetic_day(start, std::vector<double>(30, 700.0));
  gap.minutes.erase(gap.minutes.begin() + 15);
  const Dataset gds = one_day(gap);
  const auto kept = make_samples(gds, 0, 1);
  CHECK(kept.size() == 24 - 7);
  const Timestamp hole = start + 15 * 60;
  for (const auto& s : kept) {
    CHECK(!(s.t0 - 5 * 60 <= hole && hole <= s.t0 + 60));
  }
  CHECK(make_samples(one_day(synthetic_day(start, {1, 2, 3})), 0, 1).empty());
}

// ---------------------------------------------------------------- splits

TEST_CASE("day splits") {
  const auto s90 = split_days(90, 7);
  CHECK(s90.test.size() == 18);
  CHECK(s90.validation.size() == 7);
  CHECK(s90.train.size() == 65);
  const auto s5 = split_days(5, 7);
  CHECK(s5.test.size() == 1);
  CHECK(s5.validation.size() == 1);
  CHECK(s5.train.size() == 3);
  const auto again = split_days(90, 7);
  CHECK(again.train == s90.train);
  CHECK(again.test == s90.test);
  CHECK(split_days(90, 8).test != s90.test);
  CHECK_THROWS_AS(split_days(4, 1), DataError);

  for (std::size_t n : {5, 10, 17, 90}) {
    const auto s = split_days(n, n);
    std::set<std::size_t> all;
    for (const auto* v : {&s.train, &s.validation, &s.test})
      for (auto d : *v) CHECK(all.insert(d).second);
    CHECK(all.size() == n);
    CHECK(*all.rbegin() == n - 1);
  }
}

// ---------------------------------------------------------------- I/O

TEST_CASE("pgm, csv and metadata round trips") {
  const fs::path dir = scratch("io");
  std::vector<std::uint8_t> px(6 * 4);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 11);
  write_pgm(dir / "a.pgm", 6, 4, px);
  std::size_t w = 0, h = 0;
  CHECK(read_pgm(dir / "a.pgm", w, h) == px);
  CHECK(w == 6);
  CHECK(h == 4);
  {
    std::ofstream f(dir / "c.pgm", std::ios::binary);
    f << "P5\n# comment\n2 1\n255\n" << char(7) << char(200);
  }
  CHECK(read_pgm(dir / "c.pgm", w, h) == std::vector<std::uint8_t>{7, 200});
  {
    std::ofstream f(dir / "bad.pgm");
    f << "P2\n2 1\n255\n1 2\n";
  }
  CHECK_THROWS_AS(read_pgm(dir / "bad.pgm", w, h), DataError);

  PowerSeries ps{{parse_iso("2024-06-21T03:00:01Z"), 12.5}, {parse_iso("2024-06-21T03:00:02Z"), 0.0}};
  write_power_csv(dir / "p.csv", ps);
  const auto back = read_power_csv(dir / "p.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].t == ps[0].t);
  CHECK(back[0].watts == 12.5);
  {
    std::ofstream f(dir / "bad.csv");
    f << "timestamp,power_w\n2024-06-21T03:00:01Z,-3\n";
  }
  CHECK_THROWS_WITH(read_power_csv(dir / "bad.csv"), doctest::Contains("bad.csv:2"));

  Metadata m;
  m.latitude = 10;
  m.longitude = -20;
  m.capacity_w = 1000;
  m.resolution = 16;
  m.weather["2024-06-21"] = Weather::overcast;
  write_metadata(dir / "meta.json", m);
  const Metadata r = read_metadata(dir / "meta.json");
  CHECK(r.latitude == 10);
  CHECK(r.longitude == -20);
  CHECK(r.capacity_w == 1000);
  CHECK(r.resolution == 16);
  CHECK(r.weather.at("2024-06-21") == Weather::overcast);
  fs::remove_all(dir);
}

TEST_CASE("dataset ingestion") {
  const fs::path dir = scratch("ingest");
  fs::create_directories(dir / "images");
  const std::size_t h = 16;
  const Timestamp start = parse_iso("2024-06-21T03:00:00Z");
  Metadata m;
  m.resolution = h;
  m.weather["2024-06-21"] = Weather::clear;
  write_metadata(dir / "metadata.json", m);

  // frames from 03:00:00 to 03:10:00; pixel value encodes (instant, exposure)
  for (Timestamp t = start; t <= start + 600; t += 15)
    for (int e = 0; e < 4; ++e) {
      const auto v = static_cast<std::uint8_t>(20 + ((t - start) / 15) % 50 + 3 * e);
      write_pgm(dir / "images" / (format_compact(t) + "_" + std::to_string(kExposuresMs[e]) + ".pgm"), h, h,
                std::vector<std::uint8_t>(h * h, v));
    }
  PowerSeries raw;
  for (Timestamp t = start + 1; t <= start + 600; ++t) raw.push_back({t, t < start + 300 ? 800.0 : 0.0});
  raw[400].watts = 0;  // a single zero inside a valid minute is averaged away
  write_power_csv(dir / "power.csv", raw);

  const Dataset ds = load_dataset(dir);
  REQUIRE(ds.days.size() == 1);
  const DayRecord& d = ds.days[0];
  CHECK(d.weather == Weather::clear);
  // minute 03:01 needs frames from 03:00:00 on; minutes 03:06.. have zero power
  REQUIRE(d.minutes.size() == 5);
  CHECK(d.minutes[0].t == start + 60);
  CHECK(d.dropped_zero == 5);
  CHECK(d.minutes[0].watts == 800.0);
  CHECK(d.minutes[0].sun.elevation > 1.2);
  CHECK(d.minutes[0].sky > 0);

  std::vector<float> stack(kStackChannels * h * h);
  d.stack(1, h, stack.data());  // minute 03:02, instants 03:01:00 .. 03:02:00
  for (int c = 0; c < kStackChannels; ++c) {
    const int instant = 4 + c / 4;
    CHECK(stack[c * h * h] == doctest::Approx((20 + instant + 3 * (c % 4)) / 255.0));
  }

  // a missing exposure at 03:03:00 drops both minutes whose windows need it
  fs::remove(dir / "images" / (format_compact(start + 180) + "_88.pgm"));
  const Dataset holes = load_dataset(dir);
  CHECK(holes.days[0].minutes.size() == 5 - 2);
  CHECK(holes.days[0].dropped_no_images == 2);

  // unknown day label
  m.weather.clear();
  m.weather["2024-06-22"] = Weather::clear;
  write_metadata(dir / "metadata.json", m);
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("no weather label for day 2024-06-21"), DataError);
  fs::remove_all(dir);
}
