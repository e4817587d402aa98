#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "sinformer/adam.hpp"
#include "sinformer/checkpoint.hpp"
#include "sinformer/errors.hpp"
#include "sinformer/training.hpp"

namespace sinformer::train {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Stream tags keep epoch order and mask draws independent of each other.
constexpr std::uint64_t kOrderStream = 1;
constexpr std::uint64_t kMaskStream = 2;
constexpr std::uint64_t kHeadStream = 3;

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng{seed, kOrderStream, epoch};
  rng.shuffle(order.begin(), order.end());
  return order;
}

template <typename T>
Tensor<T> gather(const LabeledSet& data, std::span<const std::size_t> idx) {
  std::vector<T> block(idx.size() * data.m);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto rec = data.record(idx[i]);
    std::copy(rec.begin(), rec.end(), block.begin() + static_cast<std::ptrdiff_t>(i * data.m));
  }
  return Tensor<T>({idx.size(), data.m}, std::move(block));
}

void require_records(const LabeledSet& data, const ModelConfig& cfg, const char* what) {
  if (data.size() == 0) throw ContractError(std::string(what) + ": empty record set");
  if (data.m != cfg.m)
    throw IncompatibleError("m", std::string(what) + " records have " + std::to_string(data.m) +
                                     " samples, model expects " + std::to_string(cfg.m));
}

template <typename T>
ModelParams<T> starting_params(const ModelConfig& cfg, const TrainConfig& tcfg,
                               const std::optional<ModelParams<float>>& init) {
  if (!init) return ModelParams<float>::init(cfg, tcfg.seed).template cast<T>();
  model::require_compatible(init->cfg, cfg);
  return init->template cast<T>();
}

template <typename T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (auto& t : params) t.zero_grad();
}

nlohmann::json model_json(const ModelConfig& c) {
  return {{"m", c.m}, {"l", c.l}, {"d", c.d}, {"L", c.L}, {"h", c.h()}, {"scales", c.scales}, {"d_k", c.d_k},
          {"d_f", c.d_f}, {"K", c.K}, {"conv_mode", model::conv_mode_name(c.conv_mode)}, {"rope_base", c.rope_base}};
}

nlohmann::json train_json(const TrainConfig& t) {
  return {{"alpha", t.alpha}, {"beta", t.beta}, {"gamma", t.gamma}, {"lr", t.lr}, {"epochs", t.epochs},
          {"batch_size", t.batch_size}, {"mask_ratio", t.mask_ratio}, {"seed", t.seed},
          {"precision", precision_name(t.precision)}};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

LabeledSet LabeledSet::from_dataset(const sim::Dataset& ds) {
  LabeledSet s;
  s.m = ds.header.samples_per_record;
  s.n_classes = ds.header.n_classes;
  s.x.resize(ds.records.size() * s.m);
  s.y.reserve(ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    const auto v = sim::normalize_record(std::span<const std::int16_t>(r.samples));
    std::copy(v.begin(), v.end(), s.x.begin() + static_cast<std::ptrdiff_t>(i * s.m));
    s.y.push_back(r.label);
  }
  return s;
}

LabeledSet LabeledSet::take_per_class(std::size_t per_class) const {
  LabeledSet s;
  s.m = m;
  s.n_classes = n_classes;
  std::vector<std::size_t> taken(n_classes, 0);
  for (std::size_t i = 0; i < size(); ++i) {
    if (y[i] >= n_classes || taken[y[i]] >= per_class) continue;
    ++taken[y[i]];
    const auto r = record(i);
    s.x.insert(s.x.end(), r.begin(), r.end());
    s.y.push_back(y[i]);
  }
  return s;
}

std::string precision_name(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::f32;
  if (name == "f64") return Precision::f64;
  throw ConfigError("precision must be f32 or f64, got '" + name + "'");
}

void TrainConfig::validate() const {
  for (const auto& [name, v] : {std::pair{"alpha", alpha}, {"beta", beta}, {"gamma", gamma}})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be a finite value >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite value > 0");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
}

void TrainReport::write_csv(const std::filesystem::path& path) const {
  auto out = open_out(path);
  out << "epoch";
  for (const auto& name : loss_names) out << ',' << name;
  out << ",test_accuracy,seconds\n";
  out << std::setprecision(9);
  for (const auto& e : epochs) {
    out << e.epoch;
    for (double v : e.losses) out << ',' << v;
    out << ',';
    if (e.test_accuracy >= 0.0) out << e.test_accuracy;
    out << ',' << e.seconds << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void TrainReport::write_json(const std::filesystem::path& path, const ModelConfig& cfg,
                             const TrainConfig& tcfg) const {
  nlohmann::json j;
  j["stage"] = stage;
  j["seed"] = seed;
  j["model"] = model_json(cfg);
  j["train"] = train_json(tcfg);
  j["loss_names"] = loss_names;
  auto& ep = j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json row{{"epoch", e.epoch}, {"seconds", e.seconds}};
    for (std::size_t i = 0; i < loss_names.size(); ++i) row[loss_names[i]] = e.losses[i];
    if (e.test_accuracy >= 0.0) row["test_accuracy"] = e.test_accuracy;
    ep.push_back(std::move(row));
  }
  if (final_test_accuracy >= 0.0) {
    j["best_epoch"] = best_epoch;
    j["final_test_accuracy"] = final_test_accuracy;
    j["confusion"] = confusion;
  }
  j["wall_seconds"] = wall_seconds;
  j["warnings"] = warnings;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

template <typename T>
struct Run {
  ModelParams<T> params;
  TrainReport report;
};

template <typename T>
Run<T> pretrain_impl(const LabeledSet& data, const ModelConfig& cfg, const TrainConfig& tcfg,
                     const std::optional<ModelParams<float>>& init, const EpochCallback& on_epoch) {
  cfg.validate();
  tcfg.validate();
  require_records(data, cfg, "pretrain");
  const auto t0 = Clock::now();
  Run<T> res{starting_params<T>(cfg, tcfg, init), {}};
  auto& rep = res.report;
  rep.stage = "pretrain";
  rep.seed = tcfg.seed;
  rep.loss_names = {"loss", "mae", "aux"};
  auto params = res.params.trainable();
  nn::AdamState<T> adam(params);

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto te = Clock::now();
    const auto order = epoch_order(data.size(), tcfg.seed, epoch);
    double sum_total = 0.0, sum_mae = 0.0, sum_aux = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += tcfg.batch_size, ++batches) {
      const std::size_t b = std::min(tcfg.batch_size, order.size() - lo);
      const auto records = gather<T>(data, std::span(order).subspan(lo, b));
      Rng mask_rng{tcfg.seed, kMaskStream, epoch, batches};
      Tape<T> tape;
      const auto emb = model::embed_patches(tape, res.params, records);
      const auto masked = model::mask_tokens(tape, emb.tokens, tcfg.mask_ratio, res.params.mask_token, b, mask_rng);
      const auto p_hat = model::reconstruct(tape, res.params, masked.tokens, b);
      const auto mae = loss_mae(tape, p_hat, emb.patches, masked.mask.bits);
      const auto aux = loss_aux(tape, res.params, p_hat, emb.patches, masked.mask.bits);
      const auto total = loss_pretrain(tape, mae, aux, tcfg.gamma);
      if (!std::isfinite(static_cast<double>(total.item()))) throw ContractError("pretrain: loss became non-finite at epoch " +
                                                            std::to_string(epoch));
      zero_grads(params);
      tape.backward(total);
      nn::adam_step(std::span(params), adam, tcfg.lr);
      sum_total += total.item();
      sum_mae += mae.item();
      sum_aux += aux.item();
    }
    const double nb = static_cast<double>(batches);
    EpochLog log{epoch, {sum_total / nb, sum_mae / nb, sum_aux / nb}, -1.0, seconds_since(te)};
    rep.epochs.push_back(log);
    if (on_epoch) on_epoch(rep, log);
  }
  rep.wall_seconds = seconds_since(t0);
  return res;
}

template <typename T>
Run<T> finetune_impl(const LabeledSet& train, const LabeledSet& test, const ModelConfig& cfg,
                     const TrainConfig& tcfg, const std::optional<ModelParams<float>>& init,
                     const EpochCallback& on_epoch) {
  cfg.validate();
  tcfg.validate();
  require_records(train, cfg, "train");
  if (test.size() != 0) require_records(test, cfg, "test");
  for (const auto* set : {&train, &test})
    if (set->size() != 0 && set->n_classes != cfg.K)
      throw IncompatibleError("K", "dataset has " + std::to_string(set->n_classes) + " classes, model expects " +
                                       std::to_string(cfg.K));
  const auto t0 = Clock::now();
  Run<T> res{starting_params<T>(cfg, tcfg, init), {}};
  if (init) res.params.reset_classifier(Rng{tcfg.seed, kHeadStream}.next_u64());
  auto& rep = res.report;
  rep.stage = "finetune";
  rep.seed = tcfg.seed;
  rep.loss_names = {"loss", "cls", "ssat"};

  std::vector<std::size_t> counts(cfg.K, 0);
  for (auto y : train.y) ++counts[y];
  for (std::size_t k = 0; k < cfg.K; ++k)
    if (counts[k] == 0) rep.warnings.push_back("class " + std::to_string(k) + " has no training records");

  auto params = res.params.trainable();
  nn::AdamState<T> adam(params);
  std::optional<ModelParams<T>> best;
  EvalResult best_eval;

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto te = Clock::now();
    const auto order = epoch_order(train.size(), tcfg.seed, epoch);
    double sum_total = 0.0, sum_cls = 0.0, sum_ssat = 0.0;
    std::size_t batches = 0;
    std::vector<std::uint16_t> labels;
    for (std::size_t lo = 0; lo < order.size(); lo += tcfg.batch_size, ++batches) {
      const std::size_t b = std::min(tcfg.batch_size, order.size() - lo);
      const auto idx = std::span(order).subspan(lo, b);
      labels.clear();
      for (auto i : idx) labels.push_back(train.y[i]);
      Tape<T> tape;
      const auto out = model::forward_classify(tape, res.params, gather<T>(train, idx));
      const auto cls = loss_cls(tape, out.probs, labels);
      const auto ssat = loss_ssat(tape, out.final_tokens(), out.patches, res.params.w_r);
      const auto total = loss_task(tape, cls, ssat, tcfg.alpha, tcfg.beta);
      if (!std::isfinite(static_cast<double>(total.item()))) throw ContractError("train: loss became non-finite at epoch " +
                                                            std::to_string(epoch));
      zero_grads(params);
      tape.backward(total);
      nn::adam_step(std::span(params), adam, tcfg.lr);
      sum_total += total.item();
      sum_cls += cls.item();
      sum_ssat += ssat.item();
    }
    const double nb = static_cast<double>(batches);
    EpochLog log{epoch, {sum_total / nb, sum_cls / nb, sum_ssat / nb}, -1.0, 0.0};
    if (test.size() != 0) {
      auto ev = evaluate(res.params, test);
      log.test_accuracy = ev.accuracy;
      if (!best || ev.accuracy > best_eval.accuracy) {
        best = res.params.clone();
        best_eval = std::move(ev);
        rep.best_epoch = epoch;
      }
    }
    log.seconds = seconds_since(te);
    rep.epochs.push_back(log);
    if (on_epoch) on_epoch(rep, log);
  }
  if (best) {
    res.params = std::move(*best);
    rep.final_test_accuracy = best_eval.accuracy;
    rep.confusion = std::move(best_eval.confusion);
  } else {
    rep.best_epoch = tcfg.epochs;
  }
  rep.wall_seconds = seconds_since(t0);
  return res;
}

}  // namespace

TrainResult run_pretrain(const LabeledSet& data, const ModelConfig& cfg, const TrainConfig& tcfg,
                         const std::optional<ModelParams<float>>& init, const EpochCallback& on_epoch) {
  if (tcfg.precision == Precision::f64) {
    auto r = pretrain_impl<double>(data, cfg, tcfg, init, on_epoch);
    return {r.params.template cast<float>(), std::move(r.report)};
  }
  auto r = pretrain_impl<float>(data, cfg, tcfg, init, on_epoch);
  return {std::move(r.params), std::move(r.report)};
}

TrainResult run_finetune(const LabeledSet& train, const LabeledSet& test, const ModelConfig& cfg,
                         const TrainConfig& tcfg, const std::optional<ModelParams<float>>& init,
                         const EpochCallback& on_epoch) {
  if (tcfg.precision == Precision::f64) {
    auto r = finetune_impl<double>(train, test, cfg, tcfg, init, on_epoch);
    return {r.params.template cast<float>(), std::move(r.report)};
  }
  auto r = finetune_impl<float>(train, test, cfg, tcfg, init, on_epoch);
  return {std::move(r.params), std::move(r.report)};
}

}  // namespace sinformer::train
