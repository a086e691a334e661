#include "idn/run_config.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "idn/errors.hpp"
#include "idn/experiments.hpp"

namespace idn {

using nlohmann::json;

namespace {

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type (got " + std::string(v.type_name()) + ")");
  }
}

std::uint64_t get_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

int get_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
  return v.get<int>();
}

double get_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  return v.get<double>();
}

template <typename F>
auto parse_enum(const json& v, const std::string& key, F&& parse) {
  const auto name = get_as<std::string>(v, key);
  try {
    return parse(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

using Setter = std::function<void(RunConfig&, const json&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"dataset", [](RunConfig& c, const json& v) { c.dataset = get_as<std::string>(v, "dataset"); }},
      {"dim", [](RunConfig& c, const json& v) { c.model.dim = get_count(v, "dim"); }},
      {"blocks", [](RunConfig& c, const json& v) { c.model.blocks = get_count(v, "blocks"); }},
      {"depth", [](RunConfig& c, const json& v) { c.model.depth = get_count(v, "depth"); }},
      {"growth", [](RunConfig& c, const json& v) { c.model.growth = get_count(v, "growth"); }},
      {"activation",
       [](RunConfig& c, const json& v) { c.model.activation = parse_enum(v, "activation", parse_activation); }},
      {"concat", [](RunConfig& c, const json& v) { c.model.concat = parse_enum(v, "concat", parse_concat_mode); }},
      {"concat_start_iteration",
       [](RunConfig& c, const json& v) { c.concat_start_iteration = get_count(v, "concat_start_iteration"); }},
      {"coeff", [](RunConfig& c, const json& v) { c.model.coeff = get_real(v, "coeff"); }},
      {"arch", [](RunConfig& c, const json& v) { c.model.arch = parse_enum(v, "arch", parse_architecture); }},
      {"lr", [](RunConfig& c, const json& v) { c.lr = get_real(v, "lr"); }},
      {"iterations", [](RunConfig& c, const json& v) { c.iterations = get_count(v, "iterations"); }},
      {"batch", [](RunConfig& c, const json& v) { c.batch = get_count(v, "batch"); }},
      {"estimator", [](RunConfig& c, const json& v) { c.estimator.kind = parse_enum(v, "estimator", parse_estimator); }},
      {"n_terms", [](RunConfig& c, const json& v) { c.estimator.n_terms = get_int(v, "n_terms"); }},
      {"n_probes", [](RunConfig& c, const json& v) { c.estimator.n_probes = get_int(v, "n_probes"); }},
      {"geom_p", [](RunConfig& c, const json& v) { c.estimator.geom_p = get_real(v, "geom_p"); }},
      {"n_exact_terms", [](RunConfig& c, const json& v) { c.estimator.n_exact_terms = get_int(v, "n_exact_terms"); }},
      {"seed", [](RunConfig& c, const json& v) { c.seed = get_count(v, "seed"); }},
      {"out_dir", [](RunConfig& c, const json& v) { c.out_dir = get_as<std::string>(v, "out_dir"); }},
      {"log_every", [](RunConfig& c, const json& v) { c.log_every = get_count(v, "log_every"); }},
      {"checkpoint_every", [](RunConfig& c, const json& v) { c.checkpoint_every = get_count(v, "checkpoint_every"); }},
      {"test_size", [](RunConfig& c, const json& v) { c.test_size = get_count(v, "test_size"); }},
  };
  return table;
}

}  // namespace

void validate(const RunConfig& c) {
  try {
    parse_dataset(c.dataset);
    validate(c.model);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(c.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (c.batch == 0) throw ConfigError("batch must be >= 1");
  if (c.log_every == 0) throw ConfigError("log_every must be >= 1");
  if (c.test_size == 0) throw ConfigError("test_size must be >= 1");
  if (c.estimator.n_terms < 1) throw ConfigError("n_terms must be >= 1");
  if (c.estimator.n_probes < 1) throw ConfigError("n_probes must be >= 1");
  if (!(c.estimator.geom_p > 0.0 && c.estimator.geom_p < 1.0)) throw ConfigError("geom_p must lie in (0, 1)");
  if (c.estimator.n_exact_terms < 0) throw ConfigError("n_exact_terms must be >= 0");
  if (c.model.concat == ConcatMode::Fixed && c.concat_start_iteration != 0) {
    throw ConfigError("concat_start_iteration needs concat = learnable");
  }
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["dataset"] = c.dataset;
  j["dim"] = c.model.dim;
  j["blocks"] = c.model.blocks;
  j["depth"] = c.model.depth;
  j["growth"] = c.model.growth;
  j["activation"] = to_string(c.model.activation);
  j["concat"] = to_string(c.model.concat);
  j["concat_start_iteration"] = c.concat_start_iteration;
  j["coeff"] = c.model.coeff;
  j["arch"] = to_string(c.model.arch);
  j["lr"] = c.lr;
  j["iterations"] = c.iterations;
  j["batch"] = c.batch;
  j["estimator"] = to_string(c.estimator.kind);
  j["n_terms"] = c.estimator.n_terms;
  j["n_probes"] = c.estimator.n_probes;
  j["geom_p"] = c.estimator.geom_p;
  j["n_exact_terms"] = c.estimator.n_exact_terms;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["log_every"] = c.log_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["test_size"] = c.test_size;
  return j.dump(2) + "\n";
}

RunConfig config_merge_json(const RunConfig& base, std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c = base;
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(c, value);
  }
  validate(c);
  return c;
}

RunConfig config_from_json(std::string_view text) { return config_merge_json(RunConfig{}, text); }

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

RunConfig load_config(const std::string& path) { return config_from_json(read_text_file(path)); }

void save_config(const std::string& path, const RunConfig& config) { write_text_file(path, config_to_json(config)); }

}  // namespace idn
