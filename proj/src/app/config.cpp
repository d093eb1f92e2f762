#include <fstream>
#include <set>

#include "pvnow/app.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace pvnow {

std::string to_string(ExposureSet e) {
  switch (e) {
    case ExposureSet::all: return "all";
    case ExposureSet::shortest: return "shortest";
    case ExposureSet::longest: return "longest";
  }
  return "?";
}

ExposureSet parse_exposure_set(const std::string& s) {
  if (s == "all") return ExposureSet::all;
  if (s == "shortest") return ExposureSet::shortest;
  if (s == "longest") return ExposureSet::longest;
  throw UsageError("unknown exposure set '" + s + "' (all, shortest, longest)");
}

std::size_t exposure_channels(ExposureSet e) { return e == ExposureSet::all ? kStackChannels : kInstants; }

std::string RunConfig::name() const {
  return run_name.empty() ? to_string(model) + "_h" + std::to_string(horizon) : run_name;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.kind = model;
  m.history = history;
  m.encoder.in_channels = exposure_channels(exposures);
  m.encoder.resolution = resolution;
  m.encoder.stem_channels = stem_channels;
  m.encoder.fire_channels = fire_channels;
  m.encoder.fire_count = fire_count;
  m.encoder.squeeze = squeeze;
  m.encoder.latent = latent;
  m.lstm_hidden = lstm_hidden;
  m.lstm_layers = lstm_layers;
  m.mlp_hidden = mlp_hidden;
  m.power_encoder = power_encoder;
  m.predictor_hidden = predictor_hidden;
  m.head_hidden = head_hidden;
  m.decoder.seed_channels = decoder_seed_channels;
  m.decoder.min_channels = decoder_min_channels;
  m.dtype = precision;
  m.seed = seed;
  return m;
}

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw UsageError(std::string(what) + " must be positive");
  };
  positive(horizon, "horizon");
  positive(history, "history");
  positive(batch_size, "batch_size");
  positive(chunk, "chunk");
  positive(latent, "latent");
  positive(lstm_hidden, "lstm_hidden");
  positive(lstm_layers, "lstm_layers");
  if (!(lr_encoder > 0) || !(lr_other > 0)) throw UsageError("learning rates must be positive");
  for (double w : {weights.delta_sun, weights.delta_sky, weights.power, weights.sun, weights.image})
    if (!(w >= 0)) throw UsageError("loss weights must be >= 0");
  if (power_encoder.empty() || predictor_hidden.empty() || fire_channels.empty())
    throw UsageError("layer width lists must be non-empty");
  try {
    encoder_pool_count(resolution);
  } catch (const std::exception& e) {
    throw UsageError(std::string("resolution: ") + e.what());
  }
  if (threads < 0) throw UsageError("threads must be >= 0");
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["schema_version"] = RunConfig::kSchemaVersion;
  j["model"] = to_string(c.model);
  j["horizon"] = c.horizon;
  j["resolution"] = c.resolution;
  j["history"] = c.history;
  j["lr_encoder"] = c.lr_encoder;
  j["lr_other"] = c.lr_other;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["chunk"] = c.chunk;
  j["bn_batches"] = c.bn_batches;
  j["lambda"] = {{"delta_sun", c.weights.delta_sun}, {"delta_sky", c.weights.delta_sky},
                 {"power", c.weights.power},         {"sun", c.weights.sun},
                 {"image", c.weights.image}};
  j["seed"] = c.seed;
  j["precision"] = to_string(c.precision);
  j["threads"] = c.threads;
  j["exposures"] = to_string(c.exposures);
  j["dataset"] = c.dataset;
  j["out"] = c.out;
  j["run_name"] = c.run_name;
  j["architecture"] = {{"stem_channels", c.stem_channels},
                       {"fire_channels", c.fire_channels},
                       {"fire_count", c.fire_count},
                       {"squeeze", c.squeeze},
                       {"latent", c.latent},
                       {"lstm_hidden", c.lstm_hidden},
                       {"lstm_layers", c.lstm_layers},
                       {"mlp_hidden", c.mlp_hidden},
                       {"power_encoder", c.power_encoder},
                       {"predictor_hidden", c.predictor_hidden},
                       {"head_hidden", c.head_hidden},
                       {"decoder_seed_channels", c.decoder_seed_channels},
                       {"decoder_min_channels", c.decoder_min_channels}};
  const SimConfig& s = c.sim;
  auto regime = [](const RegimeParams& r) {
    return ordered_json{{"blobs", r.blobs},         {"radius_min", r.radius_min},   {"radius_max", r.radius_max},
                        {"opacity_min", r.opacity_min}, {"opacity_max", r.opacity_max}, {"wind_min", r.wind_min},
                        {"wind_max", r.wind_max}};
  };
  std::vector<std::string> regimes;
  for (Weather w : s.regimes) regimes.push_back(to_string(w));
  j["sim"] = {{"days", s.days},
              {"latitude", s.latitude},
              {"longitude", s.longitude},
              {"capacity_w", s.capacity_w},
              {"start_date", s.start_date},
              {"window_start_min", s.window_start_min},
              {"window_end_min", s.window_end_min},
              {"regimes", regimes},
              {"clear", regime(s.clear)},
              {"partly", regime(s.partly)},
              {"overcast", regime(s.overcast)},
              {"beta", s.beta},
              {"noise_w", s.noise_w},
              {"gain", s.gain},
              {"sun_radiance", s.sun_radiance},
              {"sun_radius_deg", s.sun_radius_deg}};
  return j;
}

namespace {

// Reads j[key] into `out` when present and records the key as consumed.
struct Reader {
  const json& j;
  std::string where;
  std::set<std::string> used;

  template <class T>
  void get(const char* key, T& out) {
    used.insert(key);
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw UsageError("config " + where + key + ": " + e.what());
    }
  }
  void finish() const {
    for (const auto& [k, v] : j.items())
      if (!used.count(k)) throw UsageError("config: unknown key '" + where + k + "'");
  }
};

void read_regime(const json& j, const std::string& where, RegimeParams& r) {
  Reader rd{j, where};
  rd.get("blobs", r.blobs);
  rd.get("radius_min", r.radius_min);
  rd.get("radius_max", r.radius_max);
  rd.get("opacity_min", r.opacity_min);
  rd.get("opacity_max", r.opacity_max);
  rd.get("wind_min", r.wind_min);
  rd.get("wind_max", r.wind_max);
  rd.finish();
}

}  // namespace

RunConfig config_from_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  Reader rd{j, ""};
  int version = RunConfig::kSchemaVersion;
  rd.get("schema_version", version);
  if (version != RunConfig::kSchemaVersion)
    throw UsageError("unsupported config schema_version " + std::to_string(version));
  std::string s;
  if (j.contains("model")) {
    rd.get("model", s);
    try {
      c.model = parse_model_kind(s);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  rd.get("horizon", c.horizon);
  rd.get("resolution", c.resolution);
  rd.get("history", c.history);
  rd.get("lr_encoder", c.lr_encoder);
  rd.get("lr_other", c.lr_other);
  rd.get("epochs", c.epochs);
  rd.get("batch_size", c.batch_size);
  rd.get("chunk", c.chunk);
  rd.get("bn_batches", c.bn_batches);
  rd.get("seed", c.seed);
  if (j.contains("precision")) {
    rd.get("precision", s);
    if (s == "f32") c.precision = DType::f32;
    else if (s == "f64") c.precision = DType::f64;
    else throw UsageError("precision must be f32 or f64");
  }
  rd.get("threads", c.threads);
  if (j.contains("exposures")) {
    rd.get("exposures", s);
    c.exposures = parse_exposure_set(s);
  }
  rd.get("dataset", c.dataset);
  rd.get("out", c.out);
  rd.get("run_name", c.run_name);
  rd.used.insert("lambda");
  if (j.contains("lambda")) {
    Reader l{j.at("lambda"), "lambda."};
    l.get("delta_sun", c.weights.delta_sun);
    l.get("delta_sky", c.weights.delta_sky);
    l.get("power", c.weights.power);
    l.get("sun", c.weights.sun);
    l.get("image", c.weights.image);
    l.finish();
  }
  rd.used.insert("architecture");
  if (j.contains("architecture")) {
    Reader a{j.at("architecture"), "architecture."};
    a.get("stem_channels", c.stem_channels);
    a.get("fire_channels", c.fire_channels);
    a.get("fire_count", c.fire_count);
    a.get("squeeze", c.squeeze);
    a.get("latent", c.latent);
    a.get("lstm_hidden", c.lstm_hidden);
    a.get("lstm_layers", c.lstm_layers);
    a.get("mlp_hidden", c.mlp_hidden);
    a.get("power_encoder", c.power_encoder);
    a.get("predictor_hidden", c.predictor_hidden);
    a.get("head_hidden", c.head_hidden);
    a.get("decoder_seed_channels", c.decoder_seed_channels);
    a.get("decoder_min_channels", c.decoder_min_channels);
    a.finish();
  }
  rd.used.insert("sim");
  if (j.contains("sim")) {
    const json& sj = j.at("sim");
    Reader r{sj, "sim."};
    SimConfig& sim = c.sim;
    r.get("days", sim.days);
    r.get("latitude", sim.latitude);
    r.get("longitude", sim.longitude);
    r.get("capacity_w", sim.capacity_w);
    r.get("start_date", sim.start_date);
    r.get("window_start_min", sim.window_start_min);
    r.get("window_end_min", sim.window_end_min);
    std::vector<std::string> regimes;
    if (sj.contains("regimes")) {
      r.get("regimes", regimes);
      sim.regimes.clear();
      try {
        for (const auto& w : regimes) sim.regimes.push_back(parse_weather(w));
      } catch (const DataError& e) {
        throw UsageError(std::string("sim.regimes: ") + e.what());
      }
    }
    for (const char* name : {"clear", "partly", "overcast"}) {
      r.used.insert(name);
      if (!sj.contains(name)) continue;
      RegimeParams& p = std::string(name) == "clear" ? sim.clear : std::string(name) == "partly" ? sim.partly : sim.overcast;
      read_regime(sj.at(name), std::string("sim.") + name + ".", p);
    }
    r.get("beta", sim.beta);
    r.get("noise_w", sim.noise_w);
    r.get("gain", sim.gain);
    r.get("sun_radiance", sim.sun_radiance);
    r.get("sun_radius_deg", sim.sun_radius_deg);
    r.finish();
  }
  rd.finish();
  c.sim.seed = c.seed;
  c.sim.resolution = c.resolution;
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace pvnow
