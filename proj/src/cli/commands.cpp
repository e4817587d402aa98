#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "sinformer/checkpoint.hpp"
#include "sinformer/cli.hpp"
#include "sinformer/errors.hpp"

namespace sinformer::cli {

namespace {

namespace fs = std::filesystem;

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

fs::path with_ext(const fs::path& p, const std::string& ext) {
  auto q = p;
  q.replace_extension(ext);
  return q;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

train::EpochCallback progress(std::ostream& out, std::size_t total) {
  return [&out, total](const train::TrainReport& rep, const train::EpochLog& e) {
    out << rep.stage << " epoch " << e.epoch << "/" << total;
    for (std::size_t i = 0; i < rep.loss_names.size(); ++i)
      out << ' ' << rep.loss_names[i] << '=' << std::setprecision(6) << e.losses[i];
    if (e.test_accuracy >= 0.0) out << " test_acc=" << std::setprecision(4) << e.test_accuracy;
    out << " (" << std::fixed << std::setprecision(1) << e.seconds << " s)" << std::defaultfloat << '\n'
        << std::flush;
  };
}

train::LabeledSet load_set(const fs::path& path, const model::ModelConfig& cfg, const char* role) {
  const auto ds = sim::read_dataset(path);
  if (ds.header.samples_per_record != cfg.m)
    throw IncompatibleError("m", std::string(role) + " dataset has " + std::to_string(ds.header.samples_per_record) +
                                     " samples per record, model expects " + std::to_string(cfg.m));
  if (ds.header.n_classes != cfg.K)
    throw IncompatibleError("K", std::string(role) + " dataset has " + std::to_string(ds.header.n_classes) +
                                     " classes, model expects " + std::to_string(cfg.K));
  if (cfg.m % cfg.l != 0)
    throw IncompatibleError("l", "patch length " + std::to_string(cfg.l) + " does not divide " + std::to_string(cfg.m));
  return train::LabeledSet::from_dataset(ds);
}

void write_report(const train::TrainReport& rep, const fs::path& out, const RunConfig& cfg, std::ostream& log) {
  const auto csv = with_ext(out, ".csv"), js = with_ext(out, ".json");
  rep.write_csv(csv);
  rep.write_json(js, cfg.model, cfg.train);
  for (const auto& w : rep.warnings) log << "warning: " << w << '\n';
  log << "report: " << csv.string() << ", " << js.string() << '\n';
}

// ---- commands ------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> per_class;
};

int cmd_gen_data(const GenArgs& a, Streams io) {
  auto cfg = load_run_config(a.config);
  if (a.seed) cfg.data.seed = *a.seed;
  if (a.per_class) cfg.data.per_class = *a.per_class;
  const auto summary = sim::generate_dataset(cfg.data, a.out);
  io.out << "wrote " << summary.record_count << " records (" << cfg.data.profiles.size() << " classes x "
         << cfg.data.per_class << ") to " << a.out << '\n';
  io.out << "clipping rate " << std::setprecision(4) << summary.clip_rate * 100.0 << "% ("
         << summary.clipped_samples << " samples)\n";
  if (summary.clip_warning) io.err << "warning: clipping rate above 1%\n";
  for (std::size_t k = 0; k < cfg.data.profiles.size(); ++k) {
    const auto& p = cfg.data.profiles[k];
    io.out << "  class " << k << ": cfo " << p.cfo_hz << " Hz, phase " << p.phase0_rad << " rad, a3 " << p.a3
           << ", a5 " << p.a5 << '\n';
  }
  return kExitOk;
}

struct PretrainArgs {
  std::string config, data, out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_pretrain(const PretrainArgs& a, Streams io) {
  auto cfg = load_run_config(a.config);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.train.validate();
  const auto data = load_set(a.data, cfg.model, "pretraining");
  const auto res = train::run_pretrain(data, cfg.model, cfg.train, std::nullopt, progress(io.out, cfg.train.epochs));
  model::save_checkpoint(a.out, res.params);
  io.out << "checkpoint: " << a.out << '\n';
  write_report(res.report, a.out, cfg, io.out);
  return kExitOk;
}

struct TrainArgs {
  std::string config, train, test, out, init;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, Streams io) {
  auto cfg = load_run_config(a.config);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.train.validate();
  std::optional<model::ModelParams<float>> init;
  if (!a.init.empty()) init = model::load_checkpoint(a.init, cfg.model);
  const auto train_set = load_set(a.train, cfg.model, "training");
  const auto test_set = load_set(a.test, cfg.model, "test");
  const auto res =
      train::run_finetune(train_set, test_set, cfg.model, cfg.train, init, progress(io.out, cfg.train.epochs));
  model::save_checkpoint(a.out, res.params);
  io.out << "best epoch " << res.report.best_epoch << ", test accuracy " << std::setprecision(6)
         << res.report.final_test_accuracy << '\n';
  io.out << "checkpoint: " << a.out << '\n';
  write_report(res.report, a.out, cfg, io.out);
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, out_dir, snr_sweep, sir_sweep, impairment = "nb";
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a, Streams io) {
  if (!a.snr_sweep.empty() && !a.sir_sweep.empty())
    throw ConfigError("--snr-sweep and --sir-sweep are mutually exclusive");
  if (a.impairment != "nb" && a.impairment != "multipath")
    throw ConfigError("--impairment must be nb or multipath, got '" + a.impairment + "'");
  const auto params = model::load_checkpoint(a.checkpoint);
  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw IoError("cannot create " + a.out_dir + ": " + ec.message());
  const fs::path dir(a.out_dir);

  if (a.snr_sweep.empty() && a.sir_sweep.empty()) {
    const auto set = load_set(a.data, params.cfg, "evaluation");
    const auto ev = train::evaluate(params, set);
    {
      auto f = open_out(dir / "predictions.csv");
      f << "index,label,predicted,max_prob\n" << std::setprecision(9);
      for (std::size_t i = 0; i < set.size(); ++i)
        f << i << ',' << set.y[i] << ',' << ev.predicted[i] << ',' << ev.max_prob[i] << '\n';
    }
    {
      auto f = open_out(dir / "features.csv");
      f << "index,label";
      for (std::size_t j = 0; j < params.cfg.d; ++j) f << ",z" << j;
      f << '\n' << std::setprecision(9);
      for (std::size_t i = 0; i < set.size(); ++i) {
        f << i << ',' << set.y[i];
        for (std::size_t j = 0; j < params.cfg.d; ++j) f << ',' << ev.features[i * params.cfg.d + j];
        f << '\n';
      }
    }
    nlohmann::json j{{"records", set.size()}, {"accuracy", ev.accuracy}, {"confusion", ev.confusion}};
    auto f = open_out(dir / "eval.json");
    f << j.dump(2) << '\n';
    io.out << "accuracy " << std::setprecision(6) << ev.accuracy << " on " << set.size() << " records\n";
    return kExitOk;
  }

  const bool snr = !a.snr_sweep.empty();
  const auto grid = parse_grid(snr ? a.snr_sweep : a.sir_sweep);
  const auto kind = snr ? SweepKind::snr : (a.impairment == "nb" ? SweepKind::narrowband : SweepKind::multipath);
  const auto ds = sim::read_dataset(a.data);
  const auto spec = sim::read_generate_spec(a.data);
  const auto clean = sim::generate_clean(spec);
  bool aligned = clean.size() == ds.records.size() && spec.waveform.samples_per_record == ds.header.samples_per_record;
  for (std::size_t i = 0; aligned && i < clean.size(); ++i) aligned = clean[i].label == ds.records[i].label;
  if (!aligned) throw IncompatibleError("data", "sidecar of " + a.data + " does not describe its records");
  const auto points = run_sweep(params, spec, kind, grid, a.seed);
  const std::string stem = snr ? "snr_sweep" : (kind == SweepKind::narrowband ? "sir_sweep_nb" : "sir_sweep_multipath");
  write_sweep_csv(dir / (stem + ".csv"), kind, points);
  write_sweep_svg(dir / (stem + ".svg"), kind, points);
  for (const auto& p : points)
    io.out << sweep_axis_name(kind) << ' ' << p.value_db << ": accuracy " << std::setprecision(4) << p.accuracy << '\n';
  io.out << "wrote " << (dir / (stem + ".csv")).string() << " and " << (dir / (stem + ".svg")).string() << '\n';
  return kExitOk;
}

struct GradArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t coords = 16;
  bool corrupt = false;
};

int cmd_gradcheck(const GradArgs& a, Streams io) {
  const auto cfg = a.config.empty() ? model::ModelConfig::tiny() : load_run_config(a.config).model;
  train::GradSuiteOptions opt;
  opt.seed = a.seed;
  opt.max_coords_per_tensor = a.coords;
  opt.corrupt = a.corrupt;
  const auto checks = train::run_gradient_suite(cfg, opt);
  bool ok = true;
  const train::LossCheck* worst = nullptr;
  for (const auto& c : checks) {
    io.out << std::left << std::setw(5) << c.loss << std::right << " max_rel_err " << std::scientific
           << std::setprecision(3) << c.max_rel_error << std::defaultfloat << "  (" << c.coords_checked
           << " coords, worst " << c.worst_param << "[" << c.worst_coord << "])  " << (c.passed ? "ok" : "FAIL")
           << '\n';
    ok = ok && c.passed;
    if (!worst || c.max_rel_error > worst->max_rel_error) worst = &c;
  }
  if (!ok) {
    io.err << "gradient check failed: worst parameter " << worst->worst_param << "[" << worst->worst_coord
           << "] in loss " << worst->loss << " (finite difference " << worst->worst_fd << ", autodiff "
           << worst->worst_autodiff << ")\n";
    return kExitVerification;
  }
  io.out << "all " << checks.size() << " losses below " << opt.tolerance << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale transformer RF fingerprinting laboratory", "sinformer"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic emitter dataset and its .meta sidecar");
  g->add_option("--config", gen.config, "Run config file")->required();
  g->add_option("--out", gen.out, "Output dataset path")->required();
  g->add_option("--seed", gen.seed, "Override [data] seed");
  g->add_option("--per-class", gen.per_class, "Override [data] per_class");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Stage 1: masked-token reconstruction with discriminator");
  p->add_option("--config", pre.config, "Run config file")->required();
  p->add_option("--data", pre.data, "Unlabeled dataset")->required();
  p->add_option("--out", pre.out, "Output checkpoint (report written next to it)")->required();
  p->add_option("--epochs", pre.epochs, "Override [train] epochs");
  p->add_option("--seed", pre.seed, "Override [train] seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Stage 2: supervised fine-tuning with the reconstruction auxiliary task");
  t->add_option("--config", tr.config, "Run config file")->required();
  t->add_option("--train", tr.train, "Training dataset")->required();
  t->add_option("--test", tr.test, "Test dataset (best-epoch selection)")->required();
  t->add_option("--init", tr.init, "Pretrained checkpoint");
  t->add_option("--out", tr.out, "Output checkpoint (report written next to it)")->required();
  t->add_option("--epochs", tr.epochs, "Override [train] epochs");
  t->add_option("--seed", tr.seed, "Override [train] seed");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint, optionally sweeping SNR or SIR");
  e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset (sweeps also read its .meta sidecar)")->required();
  e->add_option("--out-dir", ev.out_dir, "Directory for CSV/SVG/JSON outputs")->required();
  e->add_option("--snr-sweep", ev.snr_sweep, "lo:hi:step in dB");
  e->add_option("--sir-sweep", ev.sir_sweep, "lo:hi:step in dB");
  e->add_option("--impairment", ev.impairment, "SIR sweep interference: nb or multipath");
  e->add_option("--seed", ev.seed, "Seed for re-impairment noise");

  GradArgs gr;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference check of all four losses in 64-bit");
  c->add_option("--config", gr.config, "Run config whose [model] is checked (default: tiny model)");
  c->add_option("--seed", gr.seed, "Parameter and data seed");
  c->add_option("--coords", gr.coords, "Coordinates probed per tensor (0 = all)");
  c->add_flag("--corrupt-gradient", gr.corrupt, "Debug: corrupt one autodiff coordinate");

  Streams io{out, err};
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& s) {
    return app.exit(s, out, err);
  } catch (const CLI::ParseError& pe) {
    app.exit(pe, out, err);
    return kExitConfig;
  }
  try {
    if (*g) return cmd_gen_data(gen, io);
    if (*p) return cmd_pretrain(pre, io);
    if (*t) return cmd_train(tr, io);
    if (*e) return cmd_eval(ev, io);
    if (*c) return cmd_gradcheck(gr, io);
  } catch (const ConfigError& x) {
    err << "config error: " << x.what() << '\n';
    return kExitConfig;
  } catch (const IncompatibleError& x) {
    err << "incompatible: " << x.what() << '\n';
    return kExitIncompatible;
  } catch (const IoError& x) {
    err << "I/O error: " << x.what() << '\n';
    return kExitIo;
  } catch (const FormatError& x) {
    err << "I/O error: " << x.what() << '\n';
    return kExitIo;
  } catch (const std::exception& x) {
    err << "error: " << x.what() << '\n';
    return 1;
  }
  return kExitConfig;
}

}  // namespace sinformer::cli
