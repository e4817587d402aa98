#include <gtest/gtest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sinformer/checkpoint.hpp"
#include "sinformer/cli.hpp"
#include "sinformer/errors.hpp"

using namespace sinformer;
using namespace sinformer::cli;
namespace fs = std::filesystem;

namespace {

const fs::path kTools = fs::path(SINFORMER_SOURCE_DIR) / "tools";

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "sinformer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("sinformer_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::string write_text(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
  return path;
}

std::vector<char> slurp(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Small model and dataset that run in about a second.
const char* kSmall = R"(
[model]
m = 400
l = 50
d = 32
L = 1
scales = 1, 2, 4, 8
d_k = 8
d_f = 64
K = 4
[train]
epochs = 2
batch_size = 32
[data]
emitters = 4
per_class = 20
samples_per_record = 400
)";

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in, "test.ini");
}

std::string config_error(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

// ---- run config -----------------------------------------------------------------

TEST(RunConfig, AnnotatedDefaultFileMatchesBuiltInDefaults) {
  const auto cfg = load_run_config(kTools / "default.ini");
  EXPECT_EQ(cfg.model, model::ModelConfig::full());
  const train::TrainConfig t;
  EXPECT_EQ(cfg.train.alpha, t.alpha);
  EXPECT_EQ(cfg.train.beta, t.beta);
  EXPECT_EQ(cfg.train.gamma, t.gamma);
  EXPECT_EQ(cfg.train.lr, t.lr);
  EXPECT_EQ(cfg.train.epochs, t.epochs);
  EXPECT_EQ(cfg.train.batch_size, t.batch_size);
  EXPECT_EQ(cfg.emitters, 8u);
  EXPECT_EQ(cfg.data.profiles, sim::default_emitter_profiles(8));
  EXPECT_EQ(cfg.data.impairments.snr_db, 20.0);
  EXPECT_EQ(cfg.data.impairments.multipath.sir_db, sim::kClean);
  EXPECT_EQ(cfg.data.impairments.multipath.delay_ns, 150.0);

  const auto empty = parse("");
  EXPECT_EQ(empty.model, cfg.model);
  EXPECT_EQ(empty.data.per_class, cfg.data.per_class);
  EXPECT_NO_THROW(load_run_config(kTools / "quick.ini"));
}

TEST(RunConfig, ErrorsNameKeyAndLine) {
  const auto unknown = config_error("[model]\nd = 64\nwidth = 3\n");
  EXPECT_NE(unknown.find("model.width"), std::string::npos) << unknown;
  EXPECT_NE(unknown.find("test.ini:3"), std::string::npos) << unknown;

  const auto bad = config_error("[train]\n\nlr = fast\n");
  EXPECT_NE(bad.find("train.lr"), std::string::npos) << bad;
  EXPECT_NE(bad.find(":3"), std::string::npos) << bad;

  EXPECT_NE(config_error("[model]\nd = 64\nd = 32\n").find("duplicate"), std::string::npos);
  EXPECT_NE(config_error("[optics]\n").find("unknown section"), std::string::npos);
  EXPECT_NE(config_error("d = 4\n").find("before any [section]"), std::string::npos);
  EXPECT_NE(config_error("[data]\nemitters = 1\n").find("at least 2 emitters"), std::string::npos);
  EXPECT_NE(config_error("[model]\nm = 1000\n").find("samples_per_record"), std::string::npos);
}

TEST(RunConfig, CleanSentinelAndLists) {
  const auto cfg = parse("[impairments]\nsnr_db = clean\nnarrowband_sir_db = -3.5\n[model]\nscales = 1,2, 5 ,10,1,2,5,10,1,2,5,10,1,2,5,10\n");
  EXPECT_EQ(cfg.data.impairments.snr_db, sim::kClean);
  EXPECT_EQ(cfg.data.impairments.narrowband.sir_db, -3.5);
  EXPECT_EQ(cfg.model.scales.size(), 16u);
}

TEST(Grid, InclusiveArithmetic) {
  EXPECT_EQ(parse_grid("-20:20:5").size(), 9u);
  EXPECT_EQ(parse_grid("-20:20:5").back(), 20.0);
  EXPECT_EQ(parse_grid("0:1:0.25").size(), 5u);
  EXPECT_EQ(parse_grid("3:3:1"), std::vector<double>{3.0});
  EXPECT_THROW(parse_grid("1:0:1"), ConfigError);
  EXPECT_THROW(parse_grid("0:1:0"), ConfigError);
  EXPECT_THROW(parse_grid("0:1"), ConfigError);
  EXPECT_THROW(parse_grid("a:b:c"), ConfigError);
}

// ---- commands -------------------------------------------------------------------

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(invoke({}).code, kExitConfig);
  EXPECT_EQ(invoke({"gen-data"}).code, kExitConfig);
  EXPECT_EQ(invoke({"frobnicate"}).code, kExitConfig);
  EXPECT_EQ(invoke({"--help"}).code, kExitOk);
}

TEST(Cli, GenDataIsDeterministicAndValid) {
  TempDir dir;
  const auto cfg = write_text(dir / "c.ini", kSmall);
  const auto a = invoke({"gen-data", "--config", cfg, "--out", dir / "a.bin", "--seed", "5"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("80 records"), std::string::npos);
  EXPECT_NE(a.out.find("clipping rate"), std::string::npos);
  EXPECT_NE(a.out.find("class 3: cfo"), std::string::npos);
  ASSERT_EQ(invoke({"gen-data", "--config", cfg, "--out", dir / "b.bin", "--seed", "5"}).code, 0);
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  const auto ds = sim::read_dataset(dir / "a.bin");
  EXPECT_EQ(ds.header.n_classes, 4);
  EXPECT_EQ(ds.records.size(), 80u);
}

TEST(Cli, GenDataRejectsSingleEmitter) {
  TempDir dir;
  const auto cfg = write_text(dir / "c.ini", "[data]\nemitters = 1\n");
  const auto r = invoke({"gen-data", "--config", cfg, "--out", dir / "x.bin"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("at least 2 emitters"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "x.bin"));
}

TEST(Cli, UnknownConfigKeyExitsTwoNamingKeyAndLine) {
  TempDir dir;
  const auto cfg = write_text(dir / "c.ini", "[model]\n# comment\nhidden = 3\n");
  const auto r = invoke({"gen-data", "--config", cfg, "--out", dir / "x.bin"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("model.hidden"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find(":3"), std::string::npos) << r.err;
}

TEST(Cli, IoFailuresExitThree) {
  TempDir dir;
  const auto cfg = write_text(dir / "c.ini", kSmall);
  EXPECT_EQ(invoke({"gen-data", "--config", dir / "missing.ini", "--out", dir / "x.bin"}).code, kExitIo);
  EXPECT_EQ(invoke({"gen-data", "--config", cfg, "--out", "/nonexistent-dir/x.bin"}).code, kExitIo);
  write_text(dir / "junk.bin", "not a dataset");
  EXPECT_EQ(invoke({"pretrain", "--config", cfg, "--data", dir / "junk.bin", "--out", dir / "p.ckpt"}).code, kExitIo);
}

TEST(Cli, TrainEvalRoundTripAndIncompatibility) {
  TempDir dir;
  const auto cfg = write_text(dir / "c.ini", kSmall);
  ASSERT_EQ(invoke({"gen-data", "--config", cfg, "--out", dir / "tr.bin", "--seed", "1"}).code, 0);
  ASSERT_EQ(invoke({"gen-data", "--config", cfg, "--out", dir / "te.bin", "--seed", "2", "--per-class", "10"}).code, 0);

  const auto pre = invoke({"pretrain", "--config", cfg, "--data", dir / "tr.bin", "--out", dir / "pre.ckpt"});
  ASSERT_EQ(pre.code, 0) << pre.err;
  EXPECT_NE(pre.out.find("pretrain epoch 2/2"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "pre.csv"));

  const auto tr = invoke({"train", "--config", cfg, "--train", dir / "tr.bin", "--test", dir / "te.bin", "--init",
                       dir / "pre.ckpt", "--out", dir / "m.ckpt", "--epochs", "3"});
  ASSERT_EQ(tr.code, 0) << tr.err;
  std::ifstream rj(dir / "m.json");
  const auto report = nlohmann::json::parse(rj);
  EXPECT_EQ(report["epochs"].size(), 3u);

  const auto ev = invoke({"eval", "--checkpoint", dir / "m.ckpt", "--data", dir / "te.bin", "--out-dir", dir / "ev"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  std::ifstream ej(dir / "ev/eval.json");
  const auto evj = nlohmann::json::parse(ej);
  EXPECT_EQ(evj["accuracy"].get<double>(), report["final_test_accuracy"].get<double>());
  EXPECT_EQ(evj["confusion"], report["confusion"]);

  // Config K disagrees with the datasets and with the checkpoint.
  auto other = std::string(kSmall);
  other.replace(other.find("K = 4"), 5, "K = 3");
  const auto cfg3 = write_text(dir / "c3.ini", other);
  const auto mismatch = invoke({"train", "--config", cfg3, "--train", dir / "tr.bin", "--test", dir / "te.bin", "--out",
                             dir / "x.ckpt"});
  EXPECT_EQ(mismatch.code, kExitIncompatible);
  EXPECT_NE(mismatch.err.find("incompatible K"), std::string::npos) << mismatch.err;
  const auto bad_init = invoke({"train", "--config", cfg3, "--train", dir / "tr.bin", "--test", dir / "te.bin",
                             "--init", dir / "pre.ckpt", "--out", dir / "x.ckpt"});
  EXPECT_EQ(bad_init.code, kExitIncompatible);
  EXPECT_NE(bad_init.err.find("K"), std::string::npos);
}

TEST(Cli, SweepsWriteCsvAndSvg) {
  TempDir dir;
  const auto cfg = write_text(dir / "c.ini", kSmall);
  ASSERT_EQ(invoke({"gen-data", "--config", cfg, "--out", dir / "te.bin", "--per-class", "5"}).code, 0);
  const auto params = model::ModelParams<float>::init(parse(kSmall).model, 3);
  model::save_checkpoint(dir / "m.ckpt", params);

  const auto snr = invoke({"eval", "--checkpoint", dir / "m.ckpt", "--data", dir / "te.bin", "--out-dir", dir / "o",
                        "--snr-sweep", "-20:20:5"});
  ASSERT_EQ(snr.code, 0) << snr.err;
  std::ifstream csv(dir / "o/snr_sweep.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "snr_db,accuracy,records");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 9u);
  const auto svg = slurp(dir / "o/snr_sweep.svg");
  const std::string svg_text(svg.begin(), svg.end());
  EXPECT_EQ(svg_text.rfind("<svg", 0), 0u);
  EXPECT_NE(svg_text.find("SNR (dB)"), std::string::npos);
  EXPECT_NE(svg_text.find("</svg>"), std::string::npos);

  const auto mp = invoke({"eval", "--checkpoint", dir / "m.ckpt", "--data", dir / "te.bin", "--out-dir", dir / "o",
                       "--sir-sweep", "-10:10:10", "--impairment", "multipath"});
  ASSERT_EQ(mp.code, 0) << mp.err;
  EXPECT_TRUE(fs::exists(dir / "o/sir_sweep_multipath.csv"));
  EXPECT_EQ(sim::read_generate_spec(dir / "te.bin").impairments.multipath.delay_ns, 150.0);

  const auto nb = invoke({"eval", "--checkpoint", dir / "m.ckpt", "--data", dir / "te.bin", "--out-dir", dir / "o",
                       "--sir-sweep", "0:0:1", "--impairment", "nb"});
  ASSERT_EQ(nb.code, 0) << nb.err;
  EXPECT_TRUE(fs::exists(dir / "o/sir_sweep_nb.svg"));

  EXPECT_EQ(invoke({"eval", "--checkpoint", dir / "m.ckpt", "--data", dir / "te.bin", "--out-dir", dir / "o",
                 "--sir-sweep", "0:0:1", "--impairment", "fog"})
                .code,
            kExitConfig);
  fs::remove(dir / "te.bin.meta");
  EXPECT_EQ(invoke({"eval", "--checkpoint", dir / "m.ckpt", "--data", dir / "te.bin", "--out-dir", dir / "o",
                 "--snr-sweep", "0:10:10"})
                .code,
            kExitIo);
}

TEST(Cli, SweepIsDeterministicForFixedSeed) {
  TempDir dir;
  const auto cfg = write_text(dir / "c.ini", kSmall);
  ASSERT_EQ(invoke({"gen-data", "--config", cfg, "--out", dir / "te.bin", "--per-class", "5"}).code, 0);
  const auto params = model::ModelParams<float>::init(parse(kSmall).model, 4);
  const auto spec = sim::read_generate_spec(dir / "te.bin");
  const auto a = run_sweep(params, spec, SweepKind::narrowband, {-5.0, 5.0}, 9);
  const auto b = run_sweep(params, spec, SweepKind::narrowband, {-5.0, 5.0}, 9);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].accuracy, b[i].accuracy);
  EXPECT_EQ(a[0].records, 20u);
}

TEST(Cli, GradcheckReportsFourLossesAndFailsWhenCorrupted) {
  const auto ok = invoke({"gradcheck", "--coords", "4"});
  ASSERT_EQ(ok.code, 0) << ok.out << ok.err;
  for (const char* name : {"mae ", "aux ", "cls ", "ssat"}) EXPECT_NE(ok.out.find(name), std::string::npos) << name;
  std::size_t lines = 0;
  for (char ch : ok.out) lines += ch == '\n';
  EXPECT_EQ(lines, 5u);

  const auto bad = invoke({"gradcheck", "--coords", "1", "--corrupt-gradient"});
  EXPECT_EQ(bad.code, kExitVerification);
  EXPECT_NE(bad.err.find("worst parameter w_d"), std::string::npos) << bad.err;
}
