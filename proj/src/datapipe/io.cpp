#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "pvnow/datapipe.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pvnow {

// ---------------------------------------------------------------- PGM

void write_pgm(const fs::path& path, std::size_t w, std::size_t h, const std::vector<std::uint8_t>& px) {
  if (px.size() != w * h) throw std::invalid_argument("write_pgm: pixel count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << "P5\n" << w << ' ' << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

namespace {

// next header token, skipping whitespace and '#' comments
std::string pgm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
    } else {
      tok += c;
    }
  }
  return tok;
}

}  // namespace

std::vector<std::uint8_t> read_pgm(const fs::path& path, std::size_t& w, std::size_t& h) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  if (pgm_token(f) != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
  try {
    w = std::stoul(pgm_token(f));
    h = std::stoul(pgm_token(f));
    if (std::stoul(pgm_token(f)) != 255) throw DataError(path.string() + ": only 8-bit PGM is supported");
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": malformed PGM header");
  }
  std::vector<std::uint8_t> px(w * h);
  f.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (f.gcount() != static_cast<std::streamsize>(px.size())) throw DataError(path.string() + ": truncated PGM");
  return px;
}

// ---------------------------------------------------------------- CSV

void write_power_csv(const fs::path& path, const PowerSeries& series) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "timestamp,power_w\n";
  char buf[64];
  for (const auto& s : series) {
    std::snprintf(buf, sizeof buf, "%.3f", s.watts);
    f << format_iso(s.t) << ',' << buf << '\n';
  }
  if (!f) throw DataError("write failed: " + path.string());
}

PowerSeries read_power_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw DataError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "timestamp,power_w") throw DataError(path.string() + ": expected header 'timestamp,power_w'");
  PowerSeries out;
  std::size_t row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    const std::string where = path.string() + ":" + std::to_string(row);
    if (comma == std::string::npos) throw DataError(where + ": expected two columns");
    PowerSample s;
    s.t = parse_iso(line.substr(0, comma));
    try {
      std::size_t used = 0;
      const std::string v = line.substr(comma + 1);
      s.watts = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::logic_error&) {
      throw DataError(where + ": bad power value");
    }
    if (!std::isfinite(s.watts) || s.watts < 0) throw DataError(where + ": power must be finite and >= 0");
    if (!out.empty() && s.t <= out.back().t) throw DataError(where + ": timestamps must be strictly increasing");
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------- metadata

void write_metadata(const fs::path& path, const Metadata& m) {
  json days = json::array();
  for (const auto& [date, w] : m.weather) days.push_back({{"date", date}, {"weather", to_string(w)}});
  json j = {{"schema_version", 1},       {"latitude", m.latitude}, {"longitude", m.longitude},
            {"capacity_w", m.capacity_w}, {"resolution", m.resolution}, {"days", days}};
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

Metadata read_metadata(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path.string());
  Metadata m;
  try {
    const json j = json::parse(f);
    m.latitude = j.at("latitude").get<double>();
    m.longitude = j.at("longitude").get<double>();
    m.capacity_w = j.at("capacity_w").get<double>();
    m.resolution = j.at("resolution").get<std::size_t>();
    for (const auto& d : j.at("days")) {
      const auto date = d.at("date").get<std::string>();
      parse_date(date);
      m.weather[date] = parse_weather(d.at("weather").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (std::abs(m.latitude) > 90) throw DataError(path.string() + ": latitude out of range");
  return m;
}

// ---------------------------------------------------------------- ingestion

void DayRecord::stack(std::size_t m, std::size_t h, float* out) const {
  std::array<const FrameSet*, kInstants> inst{};
  for (int i = 0; i < kInstants; ++i) inst[i] = &frames[minutes.at(m).frames[i]];
  stack_frames(inst, h, out);
}

FilterStats filter_invalid(DayRecord& day, double darkness) {
  FilterStats st;
  std::vector<MinuteRecord> kept;
  for (const auto& m : day.minutes) {
    if (m.watts <= 0) {
      ++st.zero_power;
    } else if (longest_exposure_mean(day.frames[m.frames[kInstants - 1]]) < darkness) {
      ++st.dark;
    } else {
      kept.push_back(m);
    }
  }
  st.kept = kept.size();
  day.minutes = std::move(kept);
  day.dropped_zero += st.zero_power;
  day.dropped_dark += st.dark;
  return st;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset data;
  data.meta = read_metadata(dir / "metadata.json");
  const PowerSeries minutes = minute_average(read_power_csv(dir / "power.csv"));
  const std::size_t h = data.meta.resolution;

  // images/<compact>_<ms>.pgm, grouped by instant
  std::map<Timestamp, FrameSet> frames;
  std::map<Timestamp, int> seen;
  const fs::path img = dir / "images";
  if (!fs::is_directory(img)) throw DataError("missing image directory " + img.string());
  for (const auto& entry : fs::directory_iterator(img)) {
    if (entry.path().extension() != ".pgm") continue;
    const std::string stem = entry.path().stem().string();
    const auto us = stem.find('_');
    if (us == std::string::npos) throw DataError("unexpected image name " + entry.path().string());
    const Timestamp t = parse_compact(stem.substr(0, us));
    int ms = -1;
    try {
      ms = std::stoi(stem.substr(us + 1));
    } catch (const std::logic_error&) {
    }
    const auto it = std::find(kExposuresMs.begin(), kExposuresMs.end(), ms);
    if (it == kExposuresMs.end()) throw DataError("unknown exposure in " + entry.path().string());
    std::size_t w = 0, hh = 0;
    auto px = read_pgm(entry.path(), w, hh);
    if (w != h || hh != h)
      throw DataError(entry.path().string() + ": expected " + std::to_string(h) + "x" + std::to_string(h));
    FrameSet& fset = frames[t];
    fset.t = t;
    fset.exposures[it - kExposuresMs.begin()] = std::move(px);
    ++seen[t];
  }

  std::map<std::string, std::size_t> day_index;
  std::map<std::string, std::map<Timestamp, std::size_t>> frame_index;
  auto day_of = [&](const std::string& date) -> DayRecord& {
    auto [it, fresh] = day_index.emplace(date, data.days.size());
    if (fresh) {
      const auto w = data.meta.weather.find(date);
      if (w == data.meta.weather.end()) throw DataError("metadata has no weather label for day " + date);
      DayRecord d;
      d.date = date;
      d.weather = w->second;
      data.days.push_back(std::move(d));
    }
    return data.days[it->second];
  };
  for (auto& [t, f] : frames) {
    if (seen[t] != 4) continue;  // incomplete instant
    const std::string date = format_date(t);
    DayRecord& d = day_of(date);
    frame_index[date][t] = d.frames.size();
    d.frames.push_back(std::move(f));
  }

  const auto omega = solid_angles(h);
  for (const auto& p : minutes) {
    const std::string date = format_date(p.t);
    if (!data.meta.weather.count(date)) continue;
    DayRecord& d = day_of(date);
    const auto& idx = frame_index[date];
    MinuteRecord m;
    m.t = p.t;
    m.watts = p.watts;
    bool ok = true;
    for (int i = 0; i < kInstants; ++i) {
      const auto it = idx.find(p.t - (kInstants - 1 - i) * kFrameCadenceS);
      if (it == idx.end()) {
        ok = false;
        break;
      }
      m.frames[i] = it->second;
    }
    if (!ok) {
      ++d.dropped_no_images;
      continue;
    }
    m.sun = solar_position(p.t, data.meta.latitude, data.meta.longitude);
    m.sky = sky_intensity(hdr_merge(d.frames[m.frames[kInstants - 1]]), omega);
    d.minutes.push_back(m);
  }
  std::sort(data.days.begin(), data.days.end(), [](const DayRecord& a, const DayRecord& b) { return a.date < b.date; });
  for (auto& d : data.days) filter_invalid(d);
  return data;
}

}  // namespace pvnow
