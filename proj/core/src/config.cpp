#include "stonet/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "stonet/errors.hpp"

namespace stonet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename Parse>
auto wrap(const std::string& key, const std::string& v, Parse parse) {
  try {
    return parse(v);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

struct Field {
  std::string name;  // section.key, or key for top-level
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define STONET_UINT(NAME, MEMBER)                                                               \
  Field {                                                                                       \
    NAME, [](RunConfig& c, const std::string& v) { c.MEMBER = to_uint(NAME, v); },              \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }                            \
  }
#define STONET_SIZE(NAME, MEMBER)                                                               \
  Field {                                                                                       \
    NAME,                                                                                       \
        [](RunConfig& c, const std::string& v) {                                                \
          c.MEMBER = static_cast<decltype(c.MEMBER)>(to_uint(NAME, v));                         \
        },                                                                                      \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }                            \
  }
#define STONET_REAL(NAME, MEMBER)                                                               \
  Field {                                                                                       \
    NAME, [](RunConfig& c, const std::string& v) { c.MEMBER = to_double(NAME, v); },            \
        [](const RunConfig& c) { return fmt(c.MEMBER); }                                       \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      STONET_UINT("seed", seed),
      Field{"dataset.path", [](RunConfig& c, const std::string& v) { c.dataset.path = v; },
            [](const RunConfig& c) { return c.dataset.path; }},
      Field{"dataset.domain",
            [](RunConfig& c, const std::string& v) {
              c.dataset.domain = wrap("dataset.domain", v, parse_domain);
            },
            [](const RunConfig& c) { return domain_name(c.dataset.domain); }},
      Field{"dataset.pde",
            [](RunConfig& c, const std::string& v) {
              c.dataset.pde.kind = wrap("dataset.pde", v, parse_pde_kind);
            },
            [](const RunConfig& c) { return pde_kind_name(c.dataset.pde.kind); }},
      Field{"dataset.boundary",
            [](RunConfig& c, const std::string& v) {
              c.dataset.pde.boundary = wrap("dataset.boundary", v, parse_boundary);
            },
            [](const RunConfig& c) { return boundary_name(c.dataset.pde.boundary); }},
      Field{"dataset.grid",
            [](RunConfig& c, const std::string& v) {
              c.dataset.pde.nx = c.dataset.pde.ny = to_uint("dataset.grid", v);
            },
            [](const RunConfig& c) { return std::to_string(c.dataset.pde.nx); }},
      STONET_REAL("dataset.length", dataset.pde.length),
      STONET_REAL("dataset.diffusivity", dataset.pde.diffusivity),
      STONET_REAL("dataset.wave_speed", dataset.pde.wave_speed),
      STONET_REAL("dataset.dt_sim", dataset.pde.dt_sim),
      STONET_SIZE("dataset.steps", dataset.steps),
      STONET_SIZE("dataset.stride", dataset.stride),
      STONET_SIZE("dataset.spinup", dataset.spinup),
      STONET_SIZE("dataset.nodes", dataset.nodes),
      STONET_REAL("dataset.source_amplitude", dataset.pde.source.amplitude),
      STONET_REAL("dataset.source_radius", dataset.pde.source.orbit_radius),
      STONET_REAL("dataset.source_width", dataset.pde.source.width),
      STONET_REAL("dataset.source_period", dataset.pde.source.period),
      Field{"dataset.init",
            [](RunConfig& c, const std::string& v) {
              if (v == "constant") {
                c.dataset.init.kind = InitialCondition::Kind::kConstant;
              } else if (v == "blobs") {
                c.dataset.init.kind = InitialCondition::Kind::kBlobs;
              } else {
                throw ConfigError("dataset.init: expected constant or blobs, got '" + v + "'");
              }
            },
            [](const RunConfig& c) {
              return std::string(c.dataset.init.kind == InitialCondition::Kind::kConstant ? "constant"
                                                                                         : "blobs");
            }},
      STONET_REAL("dataset.init_value", dataset.init.value),
      STONET_SIZE("dataset.init_blobs", dataset.init.blobs),
      STONET_REAL("dataset.init_amplitude", dataset.init.amplitude),
      STONET_REAL("dataset.init_width", dataset.init.width),
      STONET_REAL("graph.eps", eps),
      Field{"graph.levels",
            [](RunConfig& c, const std::string& v) {
              c.model.levels = static_cast<int>(to_uint("graph.levels", v));
            },
            [](const RunConfig& c) { return std::to_string(c.model.levels); }},
      STONET_SIZE("model.d", model.d),
      STONET_SIZE("model.d_t", model.d_t),
      STONET_SIZE("model.d_a", model.d_a),
      STONET_SIZE("model.a_hidden", model.a_hidden),
      STONET_SIZE("model.kappa_hidden", model.kappa_hidden),
      STONET_SIZE("model.layer_number", model.layer_number),
      STONET_SIZE("model.branch_width", model.branch_width),
      STONET_SIZE("model.trunk_width", model.trunk_width),
      STONET_SIZE("model.xi_hidden", model.xi_hidden),
      STONET_SIZE("model.trunk_hidden", model.trunk_hidden),
      STONET_SIZE("model.decoder_groups", model.decoder_groups),
      Field{"model.activation",
            [](RunConfig& c, const std::string& v) {
              c.model.activation = wrap("model.activation", v, parse_activation);
            },
            [](const RunConfig& c) { return activation_name(c.model.activation); }},
      Field{"model.branch_norm",
            [](RunConfig& c, const std::string& v) {
              c.model.branch_norm = wrap("model.branch_norm", v, parse_branch_norm);
            },
            [](const RunConfig& c) { return branch_norm_name(c.model.branch_norm); }},
      Field{"model.interpolation",
            [](RunConfig& c, const std::string& v) {
              c.model.interpolation = to_bool("model.interpolation", v);
            },
            [](const RunConfig& c) { return std::string(c.model.interpolation ? "true" : "false"); }},
      STONET_SIZE("model.history", model.n_in),
      STONET_REAL("loss.alpha", loss.alpha),
      STONET_REAL("optimizer.lr", optimizer.lr),
      STONET_SIZE("optimizer.batch", optimizer.batch),
      STONET_SIZE("optimizer.epochs", optimizer.epochs),
      STONET_SIZE("optimizer.patience", optimizer.patience),
      STONET_SIZE("optimizer.window_stride", optimizer.window_stride),
      STONET_SIZE("optimizer.windows_per_epoch", optimizer.windows_per_epoch),
      STONET_REAL("optimizer.node_fraction", optimizer.node_fraction),
      STONET_SIZE("optimizer.eval_batch", optimizer.eval_batch),
      STONET_REAL("eval.inductive_ratio", inductive_ratio),
      STONET_REAL("eval.missing_ratio", missing_ratio),
      STONET_SIZE("eval.horizon", model.n_out),
  };
  return table;
}

#undef STONET_UINT
#undef STONET_SIZE
#undef STONET_REAL

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.name);
  return out;
}

RunConfig parse_config(const std::string& text) {
  std::map<std::string, const Field*> index;
  std::set<std::string> sections;
  for (const auto& f : fields()) {
    index[f.name] = &f;
    const auto dot = f.name.find('.');
    if (dot != std::string::npos) sections.insert(f.name.substr(0, dot));
  }
  RunConfig config;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    std::string line = raw;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']', where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      require(sections.count(section) == 1, where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string name = section.empty() ? key : section + "." + key;
    const auto it = index.find(name);
    require(it != index.end(), where + "unknown key '" + name + "'");
    require(seen.insert(name).second, where + "duplicate key '" + name + "'");
    try {
      it->second->set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  validate_config(config);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_config(const RunConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.name.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.name.substr(0, dot);
    const std::string key = dot == std::string::npos ? f.name : f.name.substr(dot + 1);
    if (sec != section) {
      os << "\n[" << sec << "]\n";
      section = sec;
    }
    os << key << " = " << f.get(config) << "\n";
  }
  return os.str();
}

void validate_config(const RunConfig& c) {
  const auto& m = c.model;
  const auto& d = c.dataset;
  require(m.d >= 1 && m.d_t >= 1 && m.d_a >= 1 && m.a_hidden >= 1, "model widths must be positive");
  require(m.d >= m.channels, "model.d must be at least the channel count");
  require(m.layer_number >= 1, "model.layer_number must be >= 1");
  require(m.levels >= 1, "graph.levels must be >= 1");
  require(m.levels <= static_cast<int>(d.nodes), "graph.levels cannot exceed dataset.nodes");
  require(m.branch_width >= 1 && m.xi_hidden >= 1, "decoder widths must be positive");
  require(m.trunk_width == 0 || m.trunk_width == m.d, "model.trunk_width must be 0 or equal model.d");
  require(m.decoder_groups >= 1, "model.decoder_groups must be >= 1");
  require(m.n_in >= 1 && m.n_out >= 1, "model.history and eval.horizon must be >= 1");
  require(c.eps >= 0.0, "graph.eps must be >= 0 (0 selects the default)");
  require(c.loss.alpha >= 0.0, "loss.alpha must be >= 0");
  require(c.optimizer.lr > 0.0, "optimizer.lr must be positive");
  require(c.optimizer.batch >= 1 && c.optimizer.eval_batch >= 1, "batch sizes must be >= 1");
  require(c.optimizer.window_stride >= 1, "optimizer.window_stride must be >= 1");
  require(c.optimizer.node_fraction > 0.0 && c.optimizer.node_fraction <= 1.0,
          "optimizer.node_fraction must lie in (0, 1]");
  require(c.inductive_ratio >= 0.0 && c.inductive_ratio <= 1.0, "eval.inductive_ratio must lie in [0, 1]");
  require(c.missing_ratio >= 0.0 && c.missing_ratio < 1.0, "eval.missing_ratio must lie in [0, 1)");
  require(d.nodes >= 1, "dataset.nodes must be >= 1");
  require(d.stride >= 1 && d.steps / d.stride >= m.n_in + m.n_out,
          "dataset.steps / dataset.stride must hold at least one window");
  require(d.stride >= 1 && d.spinup % d.stride == 0, "dataset.spinup must be a multiple of dataset.stride");
  require(d.pde.nx >= 3, "dataset.grid must be >= 3");
  require(d.pde.length > 0.0 && d.pde.dt_sim > 0.0, "dataset.length and dataset.dt_sim must be positive");
  require(d.pde.diffusivity >= 0.0 && d.pde.wave_speed >= 0.0, "PDE coefficients must be >= 0");
  require(d.pde.source.width > 0.0 && d.pde.source.period > 0.0,
          "dataset.source_width and dataset.source_period must be positive");
  require(d.init.width > 0.0, "dataset.init_width must be positive");
  require(d.pde.stability_number() <= d.pde.stability_limit(),
          "dataset.dt_sim is unstable: stability number " + fmt(d.pde.stability_number()) +
              " exceeds " + fmt(d.pde.stability_limit()));
}

}  // namespace stonet
