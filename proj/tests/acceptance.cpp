// Acceptance checks AC1..AC11. One PASS/FAIL line per criterion; exit status is the number of failures.
//   acceptance                 all criteria, toy-density check in its 5k-iteration smoke form
//   acceptance --only AC4,AC7  a subset
//   acceptance --full          the 50k-iteration toy-density comparison on all three datasets
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "idn/checkpoint.hpp"
#include "idn/commands.hpp"
#include "idn/experiments.hpp"
#include "idn/inversion.hpp"
#include "idn/likelihood.hpp"
#include "idn/run_config.hpp"
#include "oracles.hpp"

using namespace idn;
using fixture::to_vec;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

fs::path work_dir;

RunConfig toy_config(const std::string& dataset, std::uint64_t iterations, const fs::path& out) {
  RunConfig c;
  c.dataset = dataset;
  c.iterations = iterations;
  c.checkpoint_every = 0;
  c.log_every = 100;
  c.out_dir = out.string();
  return c;
}

// Trained once, shared by the checks that need a trained model.
std::optional<TrainResult> smoke_run;
const TrainResult& smoke() {
  if (!smoke_run) smoke_run = train(toy_config("moons", 5000, work_dir / "smoke"));
  return *smoke_run;
}

// ---------------------------------------------------------------------------

Outcome ac1() {
  const std::vector<double> betas = {0.1, 0.5, 1.0, 2.0, 5.0};
  const auto t0 = Clock::now();
  const auto entries = activation_bounds(ActivationTag::CLipSwish, betas);
  const double secs = seconds_since(t0);
  bool ok = secs < 1.0 && entries.size() == betas.size();
  std::string vals;
  for (const BoundEntry& e : entries) {
    ok = ok && std::abs(e.bound - 1.004) <= 0.001;
    vals += (vals.empty() ? "" : " ") + fmt(e.bound, 7);
  }
  return {ok, "bounds {" + vals + "} in " + fmt(secs, 3) + " s"};
}

double cell_mean(const std::vector<TableCell>& cells, ActivationTag a, std::size_t dim, double* max = nullptr) {
  for (const TableCell& c : cells) {
    if (c.activation == a && c.stats.dim == dim) {
      if (max) *max = c.stats.max;
      return c.stats.mean;
    }
  }
  throw std::logic_error("missing cell");
}

Outcome ac2() {
  const auto t0 = Clock::now();
  TableOptions o;
  o.scale = 1.0;
  const auto cells = ratio_table(o);
  const double secs = seconds_since(t0);
  bool ok = secs < 30.0;
  for (std::size_t d : o.dims) {
    double mx = 0.0;
    const double m = cell_mean(cells, ActivationTag::Identity, d, &mx);
    ok = ok && std::abs(m - 1.0) <= 1e-12 && std::abs(mx - 1.0) <= 1e-12;
  }
  const double sig = cell_mean(cells, ActivationTag::Sigmoid, 1024);
  const double lip = cell_mean(cells, ActivationTag::LipSwish, 1024);
  double clip_max = 0.0;
  const double clip = cell_mean(cells, ActivationTag::CLipSwish, 1024, &clip_max);
  ok = ok && std::abs(sig - 0.21) <= 0.01 && std::abs(lip - 0.51) <= 0.01 && std::abs(clip - 0.71) <= 0.01;
  return {ok, "D=1024 means sigmoid " + fmt(sig) + " lipswish " + fmt(lip) + " clipswish " + fmt(clip) +
                  " (clipswish max " + fmt(clip_max) + "), identity 1; " + fmt(secs, 3) + " s"};
}

Outcome ac3() {
  TableOptions o;
  o.scale = 5.0;
  o.dims = {1024};
  o.activations = {ActivationTag::Sigmoid, ActivationTag::LipSwish, ActivationTag::CLipSwish};
  const auto cells = ratio_table(o);
  const double sig = cell_mean(cells, ActivationTag::Sigmoid, 1024);
  const double lip = cell_mean(cells, ActivationTag::LipSwish, 1024);
  const double clip = cell_mean(cells, ActivationTag::CLipSwish, 1024);
  const bool ok = std::abs(sig - 0.08) <= 0.01 && std::abs(lip - 0.54) <= 0.01 && std::abs(clip - 0.76) <= 0.01;
  return {ok, "scale 5, D=1024 means sigmoid " + fmt(sig) + " lipswish " + fmt(lip) + " clipswish " + fmt(clip)};
}

Outcome ac4() {
  const auto t0 = Clock::now();
  constexpr int kBlocks = 100;
  constexpr std::size_t kProbes = 10000;
  int trunc_fail = 0, roul_fail = 0;
  double worst_z_t = 0.0, worst_z_r = 0.0;
  for (int b = 0; b < kBlocks; ++b) {
    ModelConfig mc;
    mc.blocks = 1;
    auto model = build_model(mc, 1000 + b);
    model->refresh_spectral();
    FlowBlock& block = model->block(0);
    Rng rng = make_rng(b, 4);
    const Tensor x = normal_tensor({1, 2}, 1.5, rng);
    Tensor rows({kProbes, 2});
    for (std::size_t r = 0; r < kProbes; ++r) {
      rows.at(r, 0) = x[0];
      rows.at(r, 1) = x[1];
    }
    const double exact = logdet_exact(block, x)[0];
    auto check = [&](const Tensor& est, double& worst) {
      const oracle::MeanSe s = oracle::mean_se(to_vec(est));
      const double diff = std::abs(s.mean - exact);
      worst = std::max(worst, s.se > 0 ? diff / s.se : 0.0);
      return diff <= 3.0 * s.se + 1e-10;
    };
    if (!check(logdet_truncated(block, rows, 60, 1, rng), worst_z_t)) ++trunc_fail;
    EstimatorConfig e;
    if (!check(logdet_roulette(block, rows, e.geom_p, 1, rng, e.n_exact_terms), worst_z_r)) ++roul_fail;
  }
  const double secs = seconds_since(t0);
  const bool ok = trunc_fail == 0 && roul_fail == 0 && secs < 120.0;
  return {ok, "blocks outside 3 SE: truncated " + std::to_string(trunc_fail) + "/100 (max |z| " + fmt(worst_z_t, 3) +
                  "), roulette " + std::to_string(roul_fail) + "/100 (max |z| " + fmt(worst_z_r, 3) + "); " +
                  fmt(secs, 3) + " s"};
}

Outcome ac5() {
  auto model = fixture::scaled_identity_model(1, 0.5);
  const Tensor x = Tensor::matrix(1, 1, {0.7});
  bool ok = true;
  double worst = 0.0;
  for (int n = 1; n <= 40; ++n) {
    Rng rng = make_rng(n);
    const double v = logdet_truncated(model->block(0), x, n, 1, rng)[0];
    const double remainder = std::abs(v - std::log(1.5));
    const double bound = std::pow(0.5, n + 1) / ((n + 1) * 0.5);
    ok = ok && remainder <= bound + 1e-15;
    if (bound > 0) worst = std::max(worst, remainder / bound);
  }
  return {ok, "n = 1..40, max remainder / bound " + fmt(worst, 3)};
}

Outcome ac6() {
  InversionOptions opts;
  opts.tol = 1e-6;
  double worst = 0.0;
  std::string detail;
  for (Architecture arch : {Architecture::Dense, Architecture::Residual}) {
    ModelConfig mc;
    mc.arch = arch;
    auto model = build_model(mc, 77);
    model->refresh_spectral();
    Rng rng = make_rng(6);
    const double e = round_trip_error(*model, normal_tensor({1000, 2}, 2.0, rng), opts);
    worst = std::max(worst, e);
    detail += "random " + to_string(arch) + " " + fmt(e, 3) + ", ";
  }
  Checkpoint ck = load_checkpoint(smoke().checkpoint);
  const InvertCheckReport r = invert_check(*ck.model, ck.config, 1000, 6, opts);
  worst = std::max(worst, r.max_error);
  detail += "trained " + fmt(r.max_error, 3);
  return {worst < 1e-4, "max ||x - F^-1(F(x))||_inf: " + detail};
}

Outcome ac7() {
  double max_sigma = 0.0, oracle_sigma = 0.0, max_emp = 0.0;
  auto certify = [&](FlowModel& model) {
    Rng rng = make_rng(7);
    const LipschitzReport r = lipschitz_check(model, 10000, 2.0, rng);
    max_sigma = std::max(max_sigma, r.max_sigma);
    max_emp = std::max(max_emp, r.max_empirical);
    for (SpectralWeight* w : model.spectral_weights())
      oracle_sigma = std::max(oracle_sigma, oracle::spectral_norm(to_vec(w->effective()), w->out_dim(), w->in_dim()));
  };
  for (Architecture arch : {Architecture::Dense, Architecture::Residual}) {
    ModelConfig mc;
    mc.arch = arch;
    auto model = build_model(mc, 78);
    model->refresh_spectral();
    certify(*model);
  }
  Checkpoint ck = load_checkpoint(smoke().checkpoint);
  certify(*ck.model);
  const bool ok = max_sigma <= 0.98 + 1e-6 && oracle_sigma <= 0.98 + 1e-6 && max_emp < 1.0;
  return {ok, "max sigma " + fmt(max_sigma, 10) + " (oracle " + fmt(oracle_sigma, 10) + "), max empirical Lip(g) " +
                  fmt(max_emp, 4) + " over random and trained models"};
}

Outcome ac8() {
  double worst = 0.0;
  int checked = 0;
  for (Architecture arch : {Architecture::Dense, Architecture::Residual}) {
    for (ConcatMode mode : {ConcatMode::Fixed, ConcatMode::Learnable}) {
      for (EstimatorKind kind : {EstimatorKind::Exact, EstimatorKind::Truncated}) {
        if (arch == Architecture::Residual && mode == ConcatMode::Learnable) continue;
        ModelConfig mc;
        mc.blocks = 3;
        mc.depth = 2;
        mc.growth = 16;
        mc.arch = arch;
        mc.concat = mode;
        auto model = build_model(mc, 8);
        model->refresh_spectral();
        EstimatorConfig est;
        est.kind = kind;
        est.n_terms = 8;
        est.n_probes = 2;
        Rng data = make_rng(8);
        const Tensor x = sample_toy(ToyDataset::TwoMoons, 32, data);
        auto loss = [&](bool taped) {
          Tape tape(taped);
          Rng rng = make_rng(0);
          Var l = nll_loss(*model, tape.constant(x), est, rng);
          if (taped) {
            for (Parameter* p : model->parameters()) p->zero_grad();
            tape.backward(l);
          }
          return l.value().item();
        };
        loss(true);
        for (Parameter* p : model->parameters()) {
          const oracle::Vec numeric = oracle::finite_diff_gradient(
              [&](const oracle::Vec& v) {
                const Tensor keep = p->value;
                p->value = fixture::from_vec(v, keep.shape());
                const double out = loss(false);
                p->value = keep;
                return out;
              },
              to_vec(p->value));
          worst = std::max(worst, oracle::max_rel_err(to_vec(p->grad), numeric));
          checked += static_cast<int>(numeric.size());
        }
      }
    }
  }
  return {worst < 1e-4, std::to_string(checked) + " partials, max rel err " + fmt(worst, 3)};
}

Outcome ac9() {
  // equal raw weights
  bool exact_half = true;
  for (double raw : {-3.0, -0.2, 0.0, 0.5413, 4.0}) {
    const auto [a, b] = unit_circle_weights(raw, raw);
    exact_half = exact_half && a == std::sqrt(0.5) && b == std::sqrt(0.5);
  }
  double worst_init = 0.0, worst_trained = 0.0;
  auto worst_norm = [](FlowModel& m) {
    double w = 0.0;
    for (LearnableConcat* c : m.concats()) {
      const auto [a, b] = c->normalized();
      w = std::max(w, std::abs(a * a + b * b - 1.0));
    }
    return w;
  };
  RunConfig c = toy_config("moons", 1000, work_dir / "eta");
  c.model.blocks = 4;
  c.model.depth = 3;
  c.model.growth = 16;
  c.batch = 200;
  auto init = build_model(c.model, c.seed);
  worst_init = worst_norm(*init);
  const TrainResult r = train(c);
  Checkpoint ck = load_checkpoint(r.checkpoint);
  worst_trained = worst_norm(*ck.model);
  const auto [e1, e2] = mean_concat_weights(*ck.model);
  const bool moved = std::abs(e1 - std::sqrt(0.5)) > 1e-6;
  const bool ok = exact_half && worst_init <= 1e-12 && worst_trained <= 1e-12 && moved && ck.iteration == 1000;
  return {ok, std::string("equal raw -> sqrt(1/2) ") + (exact_half ? "exact" : "inexact") + "; max |eta1^2+eta2^2-1| " +
                  fmt(worst_init, 3) + " at init, " + fmt(worst_trained, 3) + " after 1000 steps (mean eta " + fmt(e1) +
                  ", " + fmt(e2) + ")"};
}

Outcome ac10_smoke() {
  const TrainResult& r = smoke();
  const double secs = r.seconds;
  const bool ok = r.test_nll <= 3.2 && secs < 600.0;
  return {ok, "smoke (5k iterations, moons): test NLL " + fmt(r.test_nll) + " nats in " + fmt(secs, 4) + " s"};
}

Outcome ac10_full(std::uint64_t iterations) {
  bool ok = true;
  std::string detail;
  for (const std::string ds : {"moons", "circles", "checkerboard"}) {
    RunConfig dense = toy_config(ds, iterations, work_dir / ("full_" + ds + "_dense"));
    dense.checkpoint_every = 5000;
    RunConfig resid = dense;
    resid.model.arch = Architecture::Residual;
    resid.out_dir = (work_dir / ("full_" + ds + "_residual")).string();
    const TrainResult rd = train(dense, &std::cerr);
    const TrainResult rr = train(resid, &std::cerr);
    const bool order = rd.test_nll <= rr.test_nll + 0.02;
    const bool level = ds != "moons" || rd.test_nll <= 2.7;
    ok = ok && order && level;
    detail += ds + ": dense+LC " + fmt(rd.test_nll) + " (" + fmt(rd.seconds / 60.0, 3) + " min), residual " +
              fmt(rr.test_nll) + " (" + fmt(rr.seconds / 60.0, 3) + " min); ";
    std::cout << "  " << detail << std::endl;
  }
  return {ok, std::to_string(iterations) + " iterations: " + detail};
}

Outcome ac11() {
  const fs::path dir = work_dir / "ckpt";
  fs::create_directories(dir);
  // bit-exact forward outputs after a save/load cycle
  RunConfig c = toy_config("moons", 0, dir);
  auto model = build_model(c.model, 11);
  model->refresh_spectral();
  save_checkpoint((dir / "m.bin").string(), c, *model, nullptr, 0);
  Checkpoint ck = load_checkpoint((dir / "m.bin").string());
  Rng rng = make_rng(11);
  const Tensor x = normal_tensor({2000, 2}, 2.0, rng);
  bool ok = to_vec(model->forward_value(x)) == to_vec(ck.model->forward_value(x));
  Checkpoint trained = load_checkpoint(smoke().checkpoint);
  save_checkpoint((dir / "t.bin").string(), trained.config, *trained.model, &*trained.adam, trained.iteration);
  Checkpoint again = load_checkpoint((dir / "t.bin").string());
  ok = ok && to_vec(trained.model->forward_value(x)) == to_vec(again.model->forward_value(x));
  const bool bit_exact = ok;

  // identical metric logs from identical seeds
  auto run = [&](const std::string& name) {
    RunConfig r = toy_config("checkerboard", 300, dir / name);
    r.model.blocks = 3;
    r.model.growth = 16;
    r.batch = 200;
    r.log_every = 10;
    r.seed = 5;
    train(r);
    return read_text_file((dir / name / "metrics.csv").string());
  };
  const std::string a = run("a"), b = run("b");
  const bool same_logs = a == b && std::count(a.begin(), a.end(), '\n') == 31;
  ok = ok && same_logs;
  return {ok, std::string("forward outputs after reload ") + (bit_exact ? "bit-identical" : "DIFFER") +
                  "; same-seed metric logs " + (same_logs ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string only;
  bool full = false;
  std::uint64_t full_iterations = 50000;
  std::string work = (fs::temp_directory_path() / "idn_acceptance").string();
  app.add_option("--only", only, "comma-separated subset, e.g. AC4,AC7");
  app.add_flag("--full", full, "run the 50k-iteration toy-density comparison instead of the smoke run");
  app.add_option("--full-iterations", full_iterations, "iterations per run in --full mode");
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  work_dir = work;
  fs::create_directories(work_dir);

  std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4},
      {"AC5", ac5}, {"AC6", ac6}, {"AC7", ac7}, {"AC8", ac8},
      {"AC9", ac9}, {"AC10", ac10_smoke}, {"AC11", ac11},
  };
  std::set<std::string> selected;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');) selected.insert(item);
  if (full) {
    checks = {{"AC10", [&] { return ac10_full(full_iterations); }}};
    selected.clear();
  }
  // The smoke run backs several checks; train it first so its time is not charged elsewhere.
  bool need_smoke = !full;
  if (!selected.empty())
    need_smoke = selected.count("AC6") || selected.count("AC7") || selected.count("AC10") || selected.count("AC11");
  if (need_smoke) smoke();

  int failures = 0;
  for (auto& [name, fn] : checks) {
    if (!selected.empty() && !selected.count(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << name << (name.size() == 3 ? "  " : " ") << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
              << std::endl;
  }
  return failures;
}
