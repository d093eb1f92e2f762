#include <unordered_map>

#include "pvnow/datapipe.hpp"

namespace pvnow {

std::vector<std::optional<double>> trailing_average(const DayRecord& day, std::size_t x) {
  if (x == 0) throw std::invalid_argument("trailing_average: horizon must be >= 1");
  const auto& m = day.minutes;
  std::vector<std::optional<double>> out(m.size());
  for (std::size_t i = x - 1; i < m.size(); ++i) {
    const std::size_t first = i + 1 - x;
    // retained minutes are strictly increasing, so x consecutive entries span
    // exactly x-1 minutes iff no minute inside the window was removed
    if (m[i].t - m[first].t != static_cast<Timestamp>(x - 1) * 60) continue;
    double sum = 0;
    for (std::size_t j = first; j <= i; ++j) sum += m[j].watts;
    out[i] = sum / static_cast<double>(x);
  }
  return out;
}

std::vector<Sample> make_samples(const Dataset& data, std::size_t day, std::size_t x, std::size_t k) {
  if (k == 0) throw std::invalid_argument("make_samples: history length must be >= 1");
  const DayRecord& d = data.days.at(day);
  const auto avg = trailing_average(d, x);
  std::unordered_map<Timestamp, std::size_t> at;
  for (std::size_t i = 0; i < d.minutes.size(); ++i) at[d.minutes[i].t] = i;
  auto lookup = [&](Timestamp t) -> std::optional<std::size_t> {
    const auto it = at.find(t);
    if (it == at.end() || !avg[it->second]) return std::nullopt;
    return it->second;
  };

  const Timestamp step = static_cast<Timestamp>(x) * 60;
  std::vector<Sample> out;
  for (std::size_t i = 0; i < d.minutes.size(); ++i) {
    const Timestamp t0 = d.minutes[i].t;
    const auto target = lookup(t0 + step);
    if (!target) continue;
    Sample s;
    s.day = day;
    s.t0 = t0;
    s.horizon = x;
    s.weather = d.weather;
    bool ok = true;
    for (std::size_t j = 0; j < k && ok; ++j) {
      const auto idx = lookup(t0 - static_cast<Timestamp>(k - 1 - j) * step);
      if (!idx) ok = false;
      else {
        s.steps.push_back(*idx);
        s.history_w.push_back(*avg[*idx]);
      }
    }
    if (!ok) continue;
    s.target = *target;
    s.target_w = *avg[*target];
    const MinuteRecord& a = d.minutes[s.steps.back()];
    const MinuteRecord& b = d.minutes[*target];
    s.delta_sun = sun_delta(a.sun, b.sun);
    s.delta_sky = b.sky - a.sky;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pvnow
