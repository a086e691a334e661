// Command-line front end. Talks to the library only through the C interface.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "idensenet/idensenet.h"

namespace {

using nlohmann::json;

int report(idn_status s, char* text) {
  if (s != IDN_OK) {
    std::cerr << "error (" << idn_status_name(s) << "): " << idn_last_error() << '\n';
    return static_cast<int>(s);
  }
  if (text) std::cout << text;
  idn_string_free(text);
  return 0;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct EstimatorFlags {
  std::string kind = "exact";
  int n_terms = -1;
  int n_probes = -1;
  double geom_p = -1.0;
  int n_exact_terms = -1;

  void add(CLI::App* app) {
    app->add_option("--estimator", kind, "exact, truncated or roulette")->check(CLI::IsMember({"exact", "truncated", "roulette"}));
    app->add_option("--n-terms", n_terms, "series terms (truncated)");
    app->add_option("--n-probes", n_probes, "Hutchinson probes");
    app->add_option("--geom-p", geom_p, "geometric stopping probability (roulette)");
    app->add_option("--n-exact-terms", n_exact_terms, "leading terms before the roulette tail");
  }

  idn_status build(idn_estimator* e) const {
    const idn_status s = idn_estimator_parse(kind.c_str(), e);
    if (s != IDN_OK) return s;
    if (n_terms >= 0) e->n_terms = n_terms;
    if (n_probes >= 0) e->n_probes = n_probes;
    if (geom_p >= 0.0) e->geom_p = geom_p;
    if (n_exact_terms >= 0) e->n_exact_terms = n_exact_terms;
    return IDN_OK;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Invertible DenseNet flows on 2-D toy data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(idn_version()));

  // train
  auto* train = app.add_subcommand("train", "fit a flow by maximum likelihood");
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string train_estimator;
  long long iterations = -1;
  train->add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "random seed");
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--estimator", train_estimator, "training log-det estimator")
      ->check(CLI::IsMember({"exact", "truncated", "roulette"}));
  train->add_option("--iterations", iterations, "optimizer steps");

  // eval
  auto* eval = app.add_subcommand("eval", "negative log-likelihood on held-out data");
  std::string checkpoint;
  std::string dataset;
  std::uint64_t n = 10000;
  EstimatorFlags est;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--dataset", dataset, "moons, circles, checkerboard or normal (default: training dataset)");
  eval->add_option("--n", n, "number of samples");
  eval->add_option("--seed", seed, "data seed (default: training seed)");
  est.add(eval);

  // sample
  auto* samp = app.add_subcommand("sample", "draw samples by inverting the flow");
  double tol = 1e-6;
  int max_iter = 100;
  std::string out_path;
  samp->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  samp->add_option("--n", n, "number of samples");
  samp->add_option("--seed", seed, "random seed");
  samp->add_option("--tol", tol, "fixed-point tolerance");
  samp->add_option("--max-iter", max_iter, "fixed-point iteration limit");
  samp->add_option("--out", out_path, "output CSV")->required();

  // invert-check
  auto* inv = app.add_subcommand("invert-check", "round-trip reconstruction error");
  std::uint64_t inv_n = 1000;
  inv->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  inv->add_option("--n", inv_n, "number of points");
  inv->add_option("--seed", seed, "random seed");
  inv->add_option("--tol", tol, "fixed-point tolerance");
  inv->add_option("--max-iter", max_iter, "fixed-point iteration limit");

  // density-grid
  auto* grid = app.add_subcommand("density-grid", "density on a regular 2-D grid (CSV + PPM)");
  std::size_t resolution = 100;
  std::vector<double> bounds;
  double threshold = 0.25;
  grid->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  grid->add_option("--resolution", resolution, "cells per axis");
  grid->add_option("--bounds", bounds, "xmin xmax ymin ymax")->expected(4)->delimiter(',');
  grid->add_option("--threshold", threshold, "component threshold as a fraction of the peak density");
  grid->add_option("--out", out_path, "output prefix (writes PREFIX.csv and PREFIX.ppm)")->required();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "distance-ratio statistics of activations");
  double scale = 1.0;
  std::vector<std::size_t> dims = {1, 128, 1024};
  std::size_t pairs = 100000;
  analyze->add_option("--scale", scale, "standard deviation of the sampled points");
  analyze->add_option("--dims", dims, "dimensions")->delimiter(',');
  analyze->add_option("--pairs", pairs, "number of pairs");
  analyze->add_option("--seed", seed, "random seed");
  analyze->add_option("--out", out_path, "write CSV here instead of stdout");

  // bound
  auto* bound = app.add_subcommand("bound", "certified Lipschitz constant of an activation");
  std::string activation = "clipswish";
  std::vector<double> betas;
  bound->add_option("--activation", activation, "activation name");
  bound->add_option("--beta", betas, "beta values")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      json cfg = config_path.empty() ? json::object() : json::parse(read_file(config_path));
      if (train->count("--seed")) cfg["seed"] = seed;
      if (!out_dir.empty()) cfg["out_dir"] = out_dir;
      if (!train_estimator.empty()) cfg["estimator"] = train_estimator;
      if (iterations >= 0) cfg["iterations"] = iterations;
      char* rep = nullptr;
      const idn_status s = idn_train(cfg.dump().c_str(), &rep);
      return report(s, rep);
    }
    if (*eval) {
      idn_estimator e;
      if (idn_status s = est.build(&e); s != IDN_OK) return report(s, nullptr);
      json opts = {{"n", n}};
      if (!dataset.empty()) opts["dataset"] = dataset;
      if (eval->count("--seed")) opts["seed"] = seed;
      char* rep = nullptr;
      const idn_status s = idn_eval(checkpoint.c_str(), opts.dump().c_str(), &e, &rep);
      return report(s, rep);
    }
    if (*samp) {
      char* rep = nullptr;
      const idn_status s = idn_sample_to_file(checkpoint.c_str(), n, seed, tol, max_iter, out_path.c_str(), &rep);
      return report(s, rep);
    }
    if (*inv) {
      char* rep = nullptr;
      const idn_status s = idn_invert_check(checkpoint.c_str(), inv_n, seed, tol, max_iter, &rep);
      return report(s, rep);
    }
    if (*grid) {
      json opts = {{"resolution", resolution}, {"threshold", threshold}};
      if (bounds.size() == 4) {
        opts["xmin"] = bounds[0];
        opts["xmax"] = bounds[1];
        opts["ymin"] = bounds[2];
        opts["ymax"] = bounds[3];
      }
      char* rep = nullptr;
      const idn_status s = idn_density_grid(checkpoint.c_str(), opts.dump().c_str(), out_path.c_str(), &rep);
      return report(s, rep);
    }
    if (*analyze) {
      char* csv = nullptr;
      const idn_status s = idn_analyze(scale, dims.data(), dims.size(), pairs, seed, &csv);
      if (s == IDN_OK && !out_path.empty()) {
        std::ofstream out(out_path);
        out << csv;
        idn_string_free(csv);
        if (!out) {
          std::cerr << "error: cannot write '" << out_path << "'\n";
          return 1;
        }
        return 0;
      }
      return report(s, csv);
    }
    if (*bound) {
      std::vector<double> out(std::max<std::size_t>(betas.size(), 1));
      const idn_status s = idn_bound(activation.c_str(), betas.empty() ? nullptr : betas.data(), betas.size(), out.data());
      if (s != IDN_OK) return report(s, nullptr);
      json arr = json::array();
      for (std::size_t i = 0; i < out.size(); ++i) {
        json e = {{"activation", activation}, {"bound", out[i]}};
        if (!betas.empty()) e["beta"] = betas[i];
        arr.push_back(e);
      }
      std::cout << arr.dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
