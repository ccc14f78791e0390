#include "mirrorflow/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mirrorflow/errors.hpp"

namespace mirrorflow {

namespace {

using nlohmann::json;

// Walks one JSON object, remembering which keys were read so leftovers can be
// reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Section sub(const std::string& key) { return Section(raw(key), join(key)); }

  template <typename T>
  T get(const std::string& key) {
    if (!has(key)) throw ConfigError("missing required key '" + join(key) + "'");
    return convert<T>(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) {
      seen_.insert(key);
      return fallback;
    }
    return convert<T>(key);
  }

  template <typename T>
  std::optional<T> maybe(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return convert<T>(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key '" + join(key) + "'");
    }
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

 private:
  template <typename T>
  T convert(const std::string& key) {
    const json& v = raw(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) throw ConfigError("");
        }
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("key '" + join(key) + "' has the wrong type (got " + std::string(v.type_name()) + ")");
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto wrap(const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

DataSource parse_source(const std::string& s) {
  if (s == "circle") return DataSource::Circle;
  if (s == "clusters") return DataSource::Clusters;
  if (s == "file") return DataSource::File;
  throw std::invalid_argument("unknown data source '" + s + "' (expected circle, clusters or file)");
}

std::string source_name(DataSource s) {
  switch (s) {
    case DataSource::Circle: return "circle";
    case DataSource::Clusters: return "clusters";
    case DataSource::File: return "file";
  }
  return "circle";
}

DataConfig read_data_section(Section& s, const std::filesystem::path& base_dir) {
  DataConfig d;
  d.source = wrap("data.source", [&] { return parse_source(s.get<std::string>("source")); });
  d.path = s.get<std::string>("path", "");
  if (!d.path.empty() && !base_dir.empty() && std::filesystem::path(d.path).is_relative()) {
    d.path = (base_dir / d.path).lexically_normal().string();
  }
  d.seed = s.get<std::uint64_t>("seed", 0);
  d.teacher_seed = s.get<std::uint64_t>("teacher_seed", d.seed);
  d.teacher_neurons = s.get<int>("teacher_neurons", 3);
  d.K = s.get<std::size_t>("K", 200);
  d.dim = s.get<int>("dim", 2);
  d.mean_norm = s.get<double>("mean_norm", 1.0);
  d.noise = s.get<double>("noise", 0.1);
  d.gap = s.get<double>("gap", 0.5);
  s.finish();
  return d;
}

void check_potential(const PotentialSpec& spec, const std::string& key) {
  wrap(key, [&] { return make_potential(spec); });
}

}  // namespace

MirrorPotential make_potential(const PotentialSpec& spec) {
  switch (spec.kind) {
    case PotentialKind::Euclidean: return MirrorPotential::euclidean();
    case PotentialKind::HyperbolicEntropy: return MirrorPotential::hyperbolic(spec.lambda);
    case PotentialKind::SmoothedHomogeneous: return MirrorPotential::smoothed(spec.p, spec.lambda);
  }
  return MirrorPotential::euclidean();
}

RunConfig default_run_config() {
  RunConfig c;
  c.train.stop_log_loss = std::log(1e-50);
  return c;
}

RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c = default_run_config();
  Section top(root, "");
  c.name = top.get<std::string>("name", "");

  if (!top.has("potential")) throw ConfigError("missing required section 'potential'");
  {
    Section s = top.sub("potential");
    c.potential.base.kind = wrap("potential.kind", [&] { return parse_potential_kind(s.get<std::string>("kind")); });
    c.potential.base.lambda = s.get<double>("lambda", 0.0);
    c.potential.base.p = s.get<double>("p", 2.0);
    if (s.has("layers")) {
      const json& arr = s.raw("layers");
      if (!arr.is_array()) throw ConfigError("key 'potential.layers' must be a list");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Section ls(arr[i], "potential.layers[" + std::to_string(i) + "]");
        LayerOverride o;
        if (auto k = ls.maybe<std::string>("kind")) {
          o.kind = wrap(ls.join("kind"), [&] { return parse_potential_kind(*k); });
        }
        o.lambda = ls.maybe<double>("lambda");
        o.p = ls.maybe<double>("p");
        ls.finish();
        c.potential.layers.push_back(o);
      }
    }
    s.finish();
  }

  if (!top.has("net")) throw ConfigError("missing required section 'net'");
  {
    Section s = top.sub("net");
    if (!s.has("widths")) throw ConfigError("missing required key 'net.widths'");
    const json& w = s.raw("widths");
    if (!w.is_array()) throw ConfigError("key 'net.widths' must be a list of integers");
    for (const auto& v : w) {
      if (!v.is_number_integer()) throw ConfigError("key 'net.widths' must be a list of integers");
      c.net.widths.push_back(v.get<int>());
    }
    c.net.activation = wrap("net.activation", [&] { return parse_activation(s.get<std::string>("activation", "relu")); });
    c.net.input_bias = s.get<bool>("input_bias", false);
    s.finish();
  }

  if (!top.has("data")) throw ConfigError("missing required section 'data'");
  {
    Section s = top.sub("data");
    c.data = read_data_section(s, base_dir);
  }

  if (!top.has("train")) throw ConfigError("missing required section 'train'");
  {
    Section s = top.sub("train");
    c.train.lr = s.get<double>("lr");
    c.train.max_steps = s.get<long long>("max_steps", 1000);
    c.train.max_time = s.get<double>("max_time", 0.0);
    c.train.seed = s.get<std::uint64_t>("seed", 0);
    c.train.log_every = s.get<long long>("log_every", 100);
    c.train.stop_log_loss = s.get<double>("stop_log_loss", std::log(1e-50));
    if (s.has("rescale")) {
      Section r = s.sub("rescale");
      c.train.rescale = r.get<bool>("enabled", false);
      c.train.rescale_threshold = r.get<double>("threshold", 0.1);
      c.train.rescale_factor = r.get<double>("factor", 0.1);
      r.finish();
    }
    if (s.has("init")) {
      Section i = s.sub("init");
      c.train.init_scheme =
          wrap("train.init.scheme", [&] { return parse_init_scheme(i.get<std::string>("scheme", "meanfield")); });
      c.train.init_scale = i.get<double>("scale", 1.0);
      i.finish();
    }
    s.finish();
  }

  if (top.has("margins")) {
    Section s = top.sub("margins");
    c.margins.p = s.get<double>("p", 3.0);
    c.margins.layerwise = s.get<bool>("layerwise", false);
    c.tau = s.get<double>("tau", 0.01);
    s.finish();
  }

  if (top.has("output")) {
    Section s = top.sub("output");
    c.output.csv_path = s.get<std::string>("csv_path", "metrics.csv");
    s.finish();
  }
  top.finish();
  validate(c);
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path.parent_path());
}

void validate(const RunConfig& c) {
  check_potential(c.potential.base, "potential");
  const int L = static_cast<int>(c.net.widths.size()) - 1;
  wrap("net.widths", [&] { return HomogeneousNet(c.net.widths, c.net.activation, c.net.input_bias).depth(); });
  if (!c.potential.layers.empty() && static_cast<int>(c.potential.layers.size()) != L) {
    throw ConfigError("key 'potential.layers' has " + std::to_string(c.potential.layers.size()) +
                      " entries but the network has " + std::to_string(L) + " layers");
  }
  const auto set = resolve_potentials(c);
  (void)set;

  const int dim = c.data.source == DataSource::Circle ? 2 : c.data.dim;
  if (c.data.source != DataSource::File) {
    const int expect = dim + (c.net.input_bias ? 1 : 0);
    if (c.net.widths.front() != expect) {
      throw ConfigError("key 'net.widths[0]' is " + std::to_string(c.net.widths.front()) + " but data.dim" +
                        (c.net.input_bias ? " + 1 (input_bias)" : "") + " is " + std::to_string(expect));
    }
  } else if (c.data.path.empty()) {
    throw ConfigError("key 'data.path' is required when data.source is file");
  }
  if (c.data.source == DataSource::Circle && c.data.dim != 2) {
    throw ConfigError("key 'data.dim' must be 2 for circle data");
  }
  if (c.data.K < 1) throw ConfigError("key 'data.K' must be >= 1");
  if (c.data.teacher_neurons < 1) throw ConfigError("key 'data.teacher_neurons' must be >= 1");
  if (c.data.source == DataSource::Clusters && !(c.data.gap < c.data.mean_norm)) {
    throw ConfigError("key 'data.gap' must be below data.mean_norm");
  }
  if (!(c.train.lr > 0.0) || !std::isfinite(c.train.lr)) throw ConfigError("key 'train.lr' must be positive");
  if (c.train.max_steps < 0) throw ConfigError("key 'train.max_steps' must be >= 0");
  if (c.train.max_time < 0.0) throw ConfigError("key 'train.max_time' must be >= 0");
  if (c.train.log_every < 1) throw ConfigError("key 'train.log_every' must be >= 1");
  if (!(c.train.rescale_threshold > 0.0)) throw ConfigError("key 'train.rescale.threshold' must be positive");
  if (!(c.train.rescale_factor > 0.0)) throw ConfigError("key 'train.rescale.factor' must be positive");
  if (!(c.train.init_scale > 0.0)) throw ConfigError("key 'train.init.scale' must be positive");
  if (!(c.margins.p >= 1.0)) throw ConfigError("key 'margins.p' must be >= 1");
  if (!(c.tau >= 0.0 && c.tau < 1.0)) throw ConfigError("key 'margins.tau' must lie in [0, 1)");
}

PotentialSet resolve_potentials(const RunConfig& config) {
  const int L = static_cast<int>(config.net.widths.size()) - 1;
  PotentialSet set;
  for (int l = 0; l < L; ++l) {
    PotentialSpec spec = config.potential.base;
    if (!config.potential.layers.empty()) {
      const auto& o = config.potential.layers[static_cast<std::size_t>(l)];
      if (o.kind) spec.kind = *o.kind;
      if (o.lambda) spec.lambda = *o.lambda;
      if (o.p) spec.p = *o.p;
    }
    set.push_back(wrap("potential.layers[" + std::to_string(l) + "]", [&] { return make_potential(spec); }));
  }
  return set;
}

Dataset make_dataset(const DataConfig& config) {
  switch (config.source) {
    case DataSource::Circle: {
      const auto teacher = gen_teacher(config.teacher_seed, config.teacher_neurons, 2);
      return gen_circle_dataset(teacher, config.seed, config.K);
    }
    case DataSource::Clusters:
      return gen_cluster_dataset(config.seed, config.K, config.dim, config.mean_norm, config.noise, config.gap);
    case DataSource::File:
      return read_dataset_csv(config.path);
  }
  throw ConfigError("unknown data source");
}

DataConfig parse_data_config_text(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("data spec is not valid JSON: ") + e.what());
  }
  Section s(root, "data");
  DataConfig d = read_data_section(s, base_dir);
  if (d.source == DataSource::Circle && d.dim != 2) throw ConfigError("key 'data.dim' must be 2 for circle data");
  if (d.K < 1) throw ConfigError("key 'data.K' must be >= 1");
  return d;
}

std::string to_json(const RunConfig& c) {
  json j;
  j["name"] = c.name;
  json pot;
  pot["kind"] = std::string(to_string(c.potential.base.kind));
  pot["lambda"] = c.potential.base.lambda;
  pot["p"] = c.potential.base.p;
  if (!c.potential.layers.empty()) {
    json layers = json::array();
    for (const auto& o : c.potential.layers) {
      json e = json::object();
      if (o.kind) e["kind"] = std::string(to_string(*o.kind));
      if (o.lambda) e["lambda"] = *o.lambda;
      if (o.p) e["p"] = *o.p;
      layers.push_back(e);
    }
    pot["layers"] = layers;
  }
  j["potential"] = pot;
  j["net"] = {{"widths", c.net.widths},
              {"activation", std::string(to_string(c.net.activation))},
              {"input_bias", c.net.input_bias}};
  json data = {{"source", source_name(c.data.source)},
               {"seed", c.data.seed},
               {"teacher_seed", c.data.teacher_seed},
               {"teacher_neurons", c.data.teacher_neurons},
               {"K", c.data.K},
               {"dim", c.data.dim},
               {"mean_norm", c.data.mean_norm},
               {"noise", c.data.noise},
               {"gap", c.data.gap}};
  if (!c.data.path.empty()) data["path"] = c.data.path;
  j["data"] = data;
  j["train"] = {{"lr", c.train.lr},
                {"max_steps", c.train.max_steps},
                {"max_time", c.train.max_time},
                {"seed", c.train.seed},
                {"log_every", c.train.log_every},
                {"stop_log_loss", c.train.stop_log_loss},
                {"rescale",
                 {{"enabled", c.train.rescale},
                  {"threshold", c.train.rescale_threshold},
                  {"factor", c.train.rescale_factor}}},
                {"init", {{"scheme", std::string(to_string(c.train.init_scheme))}, {"scale", c.train.init_scale}}}};
  j["margins"] = {{"p", c.margins.p}, {"layerwise", c.margins.layerwise}, {"tau", c.tau}};
  j["output"] = {{"csv_path", c.output.csv_path}};
  return j.dump(2);
}

std::string potential_label(const PotentialConfig& config) {
  const auto& b = config.base;
  std::ostringstream os;
  os << to_string(b.kind);
  if (b.kind == PotentialKind::SmoothedHomogeneous) os << "_p" << b.p;
  if (!config.layers.empty()) os << "_layerwise";
  return os.str();
}

}  // namespace mirrorflow
