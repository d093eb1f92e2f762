#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "pvnow/app.hpp"
#include "pvnow/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace pvnow {

namespace {

constexpr char kMagic[4] = {'P', 'V', 'C', 'K'};

void put_u32(std::ostream& o, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  o.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& where) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError(where + ": truncated tensor file");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

Checkpoint make_checkpoint(const Model& model, const RunConfig& config, double alpha, std::size_t epoch,
                           double validation_mae) {
  Checkpoint c;
  c.config = config;
  c.alpha = alpha;
  c.epoch = epoch;
  c.validation_mae = validation_mae;
  ParamSet set;
  model.collect(set);
  for (const auto& [name, t] : set.params) c.tensors.emplace_back(name, t.clone());
  for (const auto& [name, t] : set.buffers) c.tensors.emplace_back(name, t.clone());
  return c;
}

void save_checkpoint(const fs::path& dir, const Checkpoint& c) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  ordered_json m;
  m["schema_version"] = 1;
  m["model"] = to_string(c.config.model);
  m["alpha"] = c.alpha;
  m["epoch"] = c.epoch;
  m["validation_mae_w"] = c.validation_mae;
  m["tensor_file"] = "tensors.bin";
  m["tensor_count"] = c.tensors.size();
  m["config"] = to_json(c.config);
  {
    std::ofstream f(dir / "manifest.json");
    if (!f) throw DataError("cannot write " + (dir / "manifest.json").string());
    f << m.dump(2) << '\n';
  }
  std::ofstream f(dir / "tensors.bin", std::ios::binary);
  if (!f) throw DataError("cannot write " + (dir / "tensors.bin").string());
  f.write(kMagic, 4);
  put_u32(f, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(f, t);
  }
  if (!f) throw DataError("write failed: " + (dir / "tensors.bin").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream mf(mpath);
  if (!mf) throw DataError("cannot read checkpoint manifest " + mpath.string());
  Checkpoint c;
  std::string tensor_file;
  std::size_t count = 0;
  try {
    const json m = json::parse(mf);
    if (!m.contains("alpha") || !m["alpha"].is_number())
      throw DataError(mpath.string() + ": checkpoint has no alpha; refusing to renormalize");
    c.alpha = m.at("alpha").get<double>();
    c.epoch = m.at("epoch").get<std::size_t>();
    c.validation_mae = m.at("validation_mae_w").get<double>();
    tensor_file = m.at("tensor_file").get<std::string>();
    count = m.at("tensor_count").get<std::size_t>();
    c.config = config_from_json(m.at("config"));
  } catch (const json::exception& e) {
    throw DataError(mpath.string() + ": " + e.what());
  } catch (const UsageError& e) {
    throw DataError(mpath.string() + ": " + e.what());
  }
  if (!(c.alpha > 0)) throw DataError(mpath.string() + ": alpha must be positive");

  const fs::path tpath = dir / tensor_file;
  std::ifstream f(tpath, std::ios::binary);
  if (!f) throw DataError("cannot read " + tpath.string());
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError(tpath.string() + ": bad magic");
  const std::uint32_t n = get_u32(f, tpath.string());
  if (n != count) throw DataError(tpath.string() + ": tensor count disagrees with manifest");
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t len = get_u32(f, tpath.string());
    std::string name(len, '\0');
    if (!f.read(name.data(), len)) throw DataError(tpath.string() + ": truncated tensor name");
    try {
      c.tensors.emplace_back(name, read_tensor(f));
    } catch (const std::exception& e) {
      throw DataError(tpath.string() + ": tensor " + name + ": " + e.what());
    }
  }
  return c;
}

void load_tensors(Model& model, const NamedTensors& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors)
    if (!by_name.emplace(name, &t).second) throw DataError("checkpoint tensor " + name + " appears twice");
  ParamSet set;
  model.collect(set);
  std::size_t matched = 0;
  for (const auto* group : {&set.params, &set.buffers}) {
    for (const auto& [name, dst] : *group) {
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw DataError("checkpoint is missing tensor " + name);
      if (it->second->shape() != dst.shape())
        throw DataError("checkpoint tensor " + name + " has shape " + to_string(it->second->shape()) +
                        ", model expects " + to_string(dst.shape()));
      Tensor target = dst;
      target.assign(*it->second);
      ++matched;
    }
  }
  if (matched != by_name.size()) throw DataError("checkpoint has tensors the model does not use");
}

Model restore_model(const Checkpoint& c) {
  Model model(c.config.model_config());
  load_tensors(model, c.tensors);
  return model;
}

}  // namespace pvnow
