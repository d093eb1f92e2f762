#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include "pvnow/app.hpp"
#include "pvnow/autograd.hpp"
#include "pvnow/optim.hpp"

using nlohmann::ordered_json;

namespace pvnow {

const std::vector<Sample>& PreparedData::samples(const std::string& name) const {
  if (name == "train") return train;
  if (name == "validation" || name == "val") return validation;
  if (name == "test") return test;
  throw UsageError("unknown split '" + name + "' (train, validation, test)");
}

PreparedData prepare_data(Dataset data, const RunConfig& config) {
  PreparedData d;
  d.data = std::move(data);
  if (d.data.meta.resolution != config.resolution)
    throw DataError("dataset resolution " + std::to_string(d.data.meta.resolution) + " does not match config " +
                    std::to_string(config.resolution));
  d.split = split_days(d.data.days.size(), config.seed);
  auto fill = [&](const std::vector<std::size_t>& days, std::vector<Sample>& out) {
    for (std::size_t day : days) {
      auto s = make_samples(d.data, day, config.horizon, config.history);
      out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
  };
  fill(d.split.train, d.train);
  fill(d.split.validation, d.validation);
  fill(d.split.test, d.test);
  std::vector<double> watts;
  for (std::size_t day : d.split.train)
    for (const auto& m : d.data.days[day].minutes) watts.push_back(m.watts);
  d.alpha = fit_alpha(watts);
  return d;
}

namespace {

template <class T>
void fill_stack(const DayRecord& day, std::size_t minute, std::size_t h, ExposureSet ex, std::vector<float>& scratch,
                T* out) {
  scratch.resize(kStackChannels * h * h);
  day.stack(minute, h, scratch.data());
  const std::size_t px = h * h;
  std::size_t c_out = 0;
  for (int c = 0; c < kStackChannels; ++c) {
    const int e = c % 4;
    if ((ex == ExposureSet::shortest && e != 0) || (ex == ExposureSet::longest && e != 3)) continue;
    for (std::size_t p = 0; p < px; ++p) out[c_out * px + p] = static_cast<T>(scratch[c * px + p]);
    ++c_out;
  }
}

}  // namespace

ModelBatch build_batch(const Dataset& data, const std::vector<Sample>& samples,
                       const std::vector<std::size_t>& indices, const RunConfig& config, double alpha) {
  const std::size_t b = indices.size(), k = config.history, h = config.resolution;
  const DType dt = config.precision;
  ModelBatch batch;
  batch.history = Tensor({b, k}, dt);
  batch.delta_q = Tensor({b, 1}, dt);
  for (std::size_t i = 0; i < b; ++i) {
    const Sample& s = samples.at(indices[i]);
    if (s.history_w.size() != k)
      throw UsageError("sample history has " + std::to_string(s.history_w.size()) + " steps, model expects " +
                       std::to_string(k));
    for (std::size_t j = 0; j < k; ++j) batch.history.set(i * k + j, normalize_power(s.history_w[j], alpha));
    batch.delta_q.set(i, normalize_power(s.target_w, alpha) - normalize_power(s.p_t0(), alpha));
  }
  if (!uses_images(config.model)) return batch;

  // unique (day, minute) in order of first use
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> slot;
  std::vector<std::pair<std::size_t, std::size_t>> unique;
  std::vector<double> unique_q;
  batch.image_index.resize(b * k);
  for (std::size_t i = 0; i < b; ++i) {
    const Sample& s = samples[indices[i]];
    for (std::size_t j = 0; j < k; ++j) {
      const auto key = std::make_pair(s.day, s.steps[j]);
      auto [it, fresh] = slot.emplace(key, unique.size());
      if (fresh) {
        unique.push_back(key);
        unique_q.push_back(normalize_power(s.history_w[j], alpha));
      }
      batch.image_index[i * k + j] = it->second;
    }
  }
  const std::size_t u = unique.size(), c = exposure_channels(config.exposures);
  batch.images = Tensor({u, c, h, h}, dt);
  dispatch(dt, [&]<class T>() {
    auto out = batch.images.data<T>();
    std::vector<float> scratch;
    for (std::size_t n = 0; n < u; ++n)
      fill_stack(data.days.at(unique[n].first), unique[n].second, h, config.exposures, scratch,
                 out.data() + n * c * h * h);
  });

  if (config.model == ModelKind::lstm_full) {
    batch.image_q = Tensor({u, 1}, dt);
    batch.image_sun = Tensor({u, 2}, dt);
    for (std::size_t n = 0; n < u; ++n) {
      batch.image_q.set(n, unique_q[n]);
      const auto sun = normalized_sun(data.days[unique[n].first].minutes[unique[n].second].sun);
      batch.image_sun.set(2 * n, sun[0]);
      batch.image_sun.set(2 * n + 1, sun[1]);
    }
    batch.delta_sun = Tensor({b, 2}, dt);
    batch.delta_sky = Tensor({b, 1}, dt);
    for (std::size_t i = 0; i < b; ++i) {
      const Sample& s = samples[indices[i]];
      batch.delta_sun.set(2 * i, s.delta_sun[0]);
      batch.delta_sun.set(2 * i + 1, s.delta_sun[1]);
      batch.delta_sky.set(i, s.delta_sky);
    }
  }
  return batch;
}

std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<Sample>& samples, const RunConfig& config,
                                                    std::size_t epoch) {
  // runs of samples x minutes apart on the same day
  std::map<std::pair<std::size_t, Timestamp>, std::vector<std::size_t>> groups;
  const Timestamp step = static_cast<Timestamp>(config.horizon) * 60;
  for (std::size_t i = 0; i < samples.size(); ++i)
    groups[{samples[i].day, ((samples[i].t0 % step) + step) % step}].push_back(i);
  std::vector<std::vector<std::size_t>> chunks;
  for (const auto& [key, idx] : groups) {
    std::vector<std::size_t> cur;
    for (std::size_t i : idx) {
      if (!cur.empty() && (cur.size() == config.chunk || samples[i].t0 - samples[cur.back()].t0 != step)) {
        chunks.push_back(cur);
        cur.clear();
      }
      cur.push_back(i);
    }
    if (!cur.empty()) chunks.push_back(cur);
  }
  std::mt19937_64 rng(config.seed ^ static_cast<std::uint64_t>(epoch));
  for (std::size_t i = chunks.size(); i > 1; --i) std::swap(chunks[i - 1], chunks[rng() % i]);

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  for (const auto& ch : chunks) {
    cur.insert(cur.end(), ch.begin(), ch.end());
    if (cur.size() >= config.batch_size) {
      batches.push_back(cur);
      cur.clear();
    }
  }
  if (cur.size() >= 2) batches.push_back(cur);  // batch norm needs two rows
  return batches;
}

std::vector<double> predict_watts(Model& model, const Dataset& data, const std::vector<Sample>& samples,
                                  const RunConfig& config, double alpha) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(samples.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + kChunk); ++i) idx.push_back(i);
    const ModelBatch batch = build_batch(data, samples, idx, config, alpha);
    const Tensor dq = model.forward(batch, false, false).delta_q;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double v = dq.at(i);
      if (!std::isfinite(v)) throw NumericError("non-finite prediction at " + format_iso(samples[idx[i]].t0));
      out.push_back(variation_to_watts(samples[idx[i]].p_t0(), v, alpha));
    }
  }
  return out;
}

namespace {

double watts_mae(const std::vector<double>& pred, const std::vector<Sample>& samples) {
  std::vector<double> truth;
  for (const auto& s : samples) truth.push_back(s.target_w);
  return mae(pred, truth);
}

}  // namespace

void recalibrate_batch_norm(Model& model, const PreparedData& d, const RunConfig& config, std::size_t epoch) {
  if (config.bn_batches == 0) return;
  ParamSet set;
  model.collect(set);
  auto& buffers = set.buffers;
  if (buffers.empty()) return;
  std::vector<std::vector<double>> sum(buffers.size());
  for (std::size_t i = 0; i < buffers.size(); ++i) sum[i].assign(buffers[i].second.numel(), 0.0);
  auto batches = epoch_batches(d.train, config, epoch);
  if (batches.size() > config.bn_batches) batches.resize(config.bn_batches);
  NoGradGuard no_grad;
  for (const auto& b : batches) {
    // zeroed buffers make each update (1 - momentum) * batch statistic
    for (auto& [name, t] : buffers) t.assign(Tensor(t.shape(), t.dtype()));
    model.forward(build_batch(d.data, d.train, b, config, d.alpha), true, config.model == ModelKind::lstm_full);
    for (std::size_t i = 0; i < buffers.size(); ++i) {
      const auto v = buffers[i].second.values();
      for (std::size_t j = 0; j < v.size(); ++j) sum[i][j] += v[j];
    }
  }
  const double scale = 1.0 / ((1.0 - kBatchNormMomentum) * static_cast<double>(batches.size()));
  for (std::size_t i = 0; i < buffers.size(); ++i)
    for (std::size_t j = 0; j < sum[i].size(); ++j) buffers[i].second.set(j, sum[i][j] * scale);
}

TrainResult train(const PreparedData& d, const RunConfig& config, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (d.train.empty()) throw DataError("no training samples");
  if (d.validation.empty()) throw DataError("no validation samples");
  Model model(config.model_config());
  Adam adam;
  const auto enc = model.encoder_params();
  if (!enc.empty()) adam.add_group(enc, {config.lr_encoder});
  adam.add_group(model.other_params(), {config.lr_other});

  TrainResult r;
  std::vector<double> persistence;
  for (const auto& s : d.validation) persistence.push_back(s.p_t0());
  r.persistence_validation_mae = watts_mae(persistence, d.validation);

  double best = watts_mae(predict_watts(model, d.data, d.validation, config, d.alpha), d.validation);
  r.best = make_checkpoint(model, config, d.alpha, 0, best);
  EpochLog zero;
  zero.validation_mae = zero.best_validation_mae = best;
  r.log.push_back(zero);
  if (on_epoch) on_epoch(zero);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    const auto batches = epoch_batches(d.train, config, epoch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const ModelBatch batch = build_batch(d.data, d.train, batches[bi], config, d.alpha);
      const ModelOutputs out = model.forward(batch, true);
      const LossResult loss = config.model == ModelKind::lstm_full ? multitask_loss(out, batch, config.weights)
                                                                   : single_task_loss(out, batch);
      const double total = loss.total.item();
      if (!std::isfinite(total))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi));
      backward(loss.total);
      adam.step();
      log.train.main += loss.terms.main;
      log.train.delta_sun += loss.terms.delta_sun;
      log.train.delta_sky += loss.terms.delta_sky;
      log.train.power += loss.terms.power;
      log.train.sun += loss.terms.sun;
      log.train.image += loss.terms.image;
      log.train_total += total;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, batches.size()));
    for (double* v : {&log.train.main, &log.train.delta_sun, &log.train.delta_sky, &log.train.power, &log.train.sun,
                      &log.train.image, &log.train_total})
      *v /= n;

    recalibrate_batch_norm(model, d, config, epoch + 0x5bd1e995);
    log.validation_mae = watts_mae(predict_watts(model, d.data, d.validation, config, d.alpha), d.validation);
    if (!std::isfinite(log.validation_mae)) throw NumericError("non-finite validation MAE at epoch " + std::to_string(epoch));
    if (log.validation_mae < best) {
      best = log.validation_mae;
      r.best = make_checkpoint(model, config, d.alpha, epoch, best);
    }
    log.best_validation_mae = best;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    r.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return r;
}

ordered_json train_log_json(const TrainResult& r) {
  ordered_json j;
  j["schema_version"] = 1;
  j["model"] = to_string(r.best.config.model);
  j["run"] = r.best.config.name();
  j["alpha"] = r.best.alpha;
  j["best_epoch"] = r.best.epoch;
  j["best_validation_mae_w"] = r.best.validation_mae;
  j["persistence_validation_mae_w"] = r.persistence_validation_mae;
  j["epochs"] = ordered_json::array();
  for (const auto& e : r.log) {
    ordered_json x;
    x["epoch"] = e.epoch;
    x["train_total"] = e.train_total;
    x["train_terms"] = {{"main", e.train.main},   {"delta_sun", e.train.delta_sun}, {"delta_sky", e.train.delta_sky},
                        {"power", e.train.power}, {"sun", e.train.sun},             {"image", e.train.image}};
    x["validation_mae_w"] = e.validation_mae;
    x["best_validation_mae_w"] = e.best_validation_mae;
    j["epochs"].push_back(x);
  }
  return j;
}

}  // namespace pvnow
