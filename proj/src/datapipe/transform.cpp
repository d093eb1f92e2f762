#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <map>
#include <random>

#include "pvnow/datapipe.hpp"

namespace pvnow {

namespace {

std::tm to_tm(Timestamp t) {
  std::time_t tt = static_cast<std::time_t>(t);
  std::tm out{};
  gmtime_r(&tt, &out);
  return out;
}

Timestamp from_fields(int y, int mo, int d, int h, int mi, int s, const std::string& src) {
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60)
    throw DataError("invalid timestamp '" + src + "'");
  std::tm tm{};
  tm.tm_year = y - 1900;
  tm.tm_mon = mo - 1;
  tm.tm_mday = d;
  tm.tm_hour = h;
  tm.tm_min = mi;
  tm.tm_sec = s;
  return static_cast<Timestamp>(timegm(&tm));
}

std::string fmt(const char* pattern, Timestamp t) {
  const std::tm tm = to_tm(t);
  char buf[32];
  std::strftime(buf, sizeof buf, pattern, &tm);
  return buf;
}

}  // namespace

std::string format_iso(Timestamp t) { return fmt("%Y-%m-%dT%H:%M:%SZ", t); }
std::string format_compact(Timestamp t) { return fmt("%Y%m%dT%H%M%SZ", t); }
std::string format_date(Timestamp t) { return fmt("%Y-%m-%d", t); }

Timestamp parse_iso(const std::string& s) {
  int y, mo, d, h, mi, sec;
  char z = 0;
  if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &sec, &z) != 7 || z != 'Z')
    throw DataError("invalid timestamp '" + s + "' (expected YYYY-MM-DDTHH:MM:SSZ)");
  return from_fields(y, mo, d, h, mi, sec, s);
}

Timestamp parse_compact(const std::string& s) {
  int y, mo, d, h, mi, sec;
  char z = 0;
  if (s.size() != 16 ||
      std::sscanf(s.c_str(), "%4d%2d%2dT%2d%2d%2d%c", &y, &mo, &d, &h, &mi, &sec, &z) != 7 || z != 'Z')
    throw DataError("invalid timestamp '" + s + "' (expected YYYYMMDDTHHMMSSZ)");
  return from_fields(y, mo, d, h, mi, sec, s);
}

Timestamp parse_date(const std::string& s) {
  int y, mo, d;
  if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2d-%2d", &y, &mo, &d) != 3)
    throw DataError("invalid date '" + s + "' (expected YYYY-MM-DD)");
  return from_fields(y, mo, d, 0, 0, 0, s);
}

// ---------------------------------------------------------------- transforms

double log_transform(double x) {
  if (!(x >= 0) || !std::isfinite(x)) throw std::domain_error("log_transform: power must be finite and >= 0");
  return x < 1 ? x : std::log(x);
}

double inverse_log_transform(double y) { return y < 0 ? 0.0 : std::exp(y); }

double clamp_power(double watts) { return std::max(watts, 1.0); }

double fit_alpha(const std::vector<double>& train_watts) {
  if (train_watts.empty()) throw DataError("fit_alpha: empty training series");
  const double peak = clamp_power(*std::max_element(train_watts.begin(), train_watts.end()));
  const double g = log_transform(peak);
  if (g <= 0) throw DataError("fit_alpha: training power never exceeds 1 W");
  return 1.0 / g;
}

double normalize_power(double watts, double alpha) {
  if (!(alpha > 0)) throw std::invalid_argument("normalize_power: alpha must be > 0");
  return std::clamp(alpha * log_transform(clamp_power(watts)), 0.0, 1.0);
}

double denormalize_power(double q, double alpha) {
  if (!(alpha > 0)) throw std::invalid_argument("denormalize_power: alpha must be > 0");
  return inverse_log_transform(q / alpha);
}

// ---------------------------------------------------------------- series

PowerSeries minute_average(const PowerSeries& raw) {
  std::map<Timestamp, std::pair<double, std::size_t>> acc;
  for (const auto& s : raw) {
    // (t - 60, t] belongs to minute t
    Timestamp m = s.t - ((s.t % 60) + 60) % 60;
    if (m != s.t) m += 60;
    auto& [sum, n] = acc[m];
    sum += s.watts;
    ++n;
  }
  PowerSeries out;
  out.reserve(acc.size());
  for (const auto& [t, a] : acc) out.push_back({t, a.first / static_cast<double>(a.second)});
  return out;
}

std::string to_string(Weather w) {
  switch (w) {
    case Weather::clear: return "clear";
    case Weather::partly: return "partly";
    case Weather::overcast: return "overcast";
  }
  return "?";
}

Weather parse_weather(const std::string& s) {
  if (s == "clear") return Weather::clear;
  if (s == "partly") return Weather::partly;
  if (s == "overcast") return Weather::overcast;
  throw DataError("unknown weather label '" + s + "' (expected clear|partly|overcast)");
}

Weather weather_from_cloud_fraction(double f) {
  if (f < 0.1) return Weather::clear;
  if (f <= 0.9) return Weather::partly;
  return Weather::overcast;
}

// ---------------------------------------------------------------- splits

DaySplit split_days(std::size_t days, std::uint64_t seed) {
  if (days < 5) throw DataError("split_days: need at least 5 days, got " + std::to_string(days));
  std::vector<std::size_t> order(days);
  for (std::size_t i = 0; i < days; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = days - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

  const std::size_t n_test = std::max<std::size_t>(1, days / 5);
  const std::size_t rest = days - n_test;
  const std::size_t n_val = std::max<std::size_t>(1, rest / 10);
  DaySplit s;
  s.test.assign(order.begin(), order.begin() + n_test);
  s.validation.assign(order.begin() + n_test, order.begin() + n_test + n_val);
  s.train.assign(order.begin() + n_test + n_val, order.end());
  for (auto* v : {&s.train, &s.validation, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

}  // namespace pvnow
