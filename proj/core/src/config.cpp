#include "frlfi/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

namespace frlfi::config {

using faultinj::FaultLocation;
using harness::ExperimentSpec;

namespace {

[[noreturn]] void fail(std::string_view source, const std::string& what) {
  throw ConfigError(std::string(source) + ": " + what);
}

void check_keys(const toml::table& t, std::string_view where, std::initializer_list<std::string_view> allowed,
                std::string_view source) {
  const std::set<std::string_view> ok(allowed);
  for (auto&& [k, v] : t) {
    (void)v;
    if (!ok.contains(k.str())) {
      fail(source, "unknown key '" + std::string(k.str()) + "' in " + std::string(where));
    }
  }
}

template <class T>
void read(const toml::table& t, std::string_view key, T& out, std::string_view source) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return;
  if constexpr (std::is_same_v<T, bool>) {
    if (!n->is_boolean()) fail(source, "'" + std::string(key) + "' must be a boolean");
    out = *n->value<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!n->is_string()) fail(source, "'" + std::string(key) + "' must be a string");
    out = *n->value<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!n->is_number()) fail(source, "'" + std::string(key) + "' must be a number");
    out = *n->value<double>();
  } else {
    if (!n->is_integer()) fail(source, "'" + std::string(key) + "' must be an integer");
    const auto v = *n->value<std::int64_t>();
    if constexpr (std::is_unsigned_v<T>) {
      if (v < 0) fail(source, "'" + std::string(key) + "' must be non-negative");
    }
    out = static_cast<T>(v);
  }
}

template <class T, class Convert>
void read_list(const toml::table& t, std::string_view key, std::vector<T>& out, Convert convert,
               std::string_view source) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return;
  const toml::array* arr = n->as_array();
  if (arr == nullptr) fail(source, "'" + std::string(key) + "' must be an array");
  out.clear();
  for (const auto& item : *arr) {
    try {
      out.push_back(convert(item));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      fail(source, "bad entry in '" + std::string(key) + "': " + e.what());
    }
  }
}

std::string as_string(const toml::node& n) {
  if (!n.is_string()) throw std::invalid_argument("expected a string");
  return *n.value<std::string>();
}

double as_double(const toml::node& n) {
  if (!n.is_number()) throw std::invalid_argument("expected a number");
  return *n.value<double>();
}

int as_int(const toml::node& n) {
  if (!n.is_integer()) throw std::invalid_argument("expected an integer");
  return static_cast<int>(*n.value<std::int64_t>());
}

bool as_bool(const toml::node& n) {
  if (!n.is_boolean()) throw std::invalid_argument("expected a boolean");
  return *n.value<bool>();
}

const toml::table* sub(const toml::table& root, std::string_view key, std::string_view source) {
  const toml::node* n = root.get(key);
  if (n == nullptr) return nullptr;
  if (!n->is_table()) fail(source, "'" + std::string(key) + "' must be a table");
  return n->as_table();
}

void read_train(const toml::table& t, fedtrain::TrainConfig& c, std::string_view source) {
  check_keys(t, "[train]",
             {"n_agents", "episodes", "comm_interval", "interval_multiplier", "multiplier_after", "gamma", "lr",
              "lr_min", "lr_decay", "epsilon0", "epsilon_min", "epsilon_decay", "alpha0", "tau", "seed", "max_steps", "layers", "format"},
             source);
  read(t, "n_agents", c.n_agents, source);
  read(t, "episodes", c.episodes, source);
  read(t, "comm_interval", c.comm_interval, source);
  read(t, "interval_multiplier", c.interval_multiplier, source);
  read(t, "multiplier_after", c.multiplier_after, source);
  read(t, "gamma", c.gamma, source);
  read(t, "lr", c.lr, source);
  read(t, "lr_min", c.lr_min, source);
  read(t, "lr_decay", c.lr_decay, source);
  read(t, "epsilon0", c.epsilon0, source);
  read(t, "epsilon_min", c.epsilon_min, source);
  read(t, "epsilon_decay", c.epsilon_decay, source);
  read(t, "alpha0", c.alpha0, source);
  read(t, "tau", c.tau, source);
  read(t, "seed", c.seed, source);
  read(t, "max_steps", c.max_steps, source);
  read_list(t, "layers", c.layer_dims, as_int, source);
  std::string fmt;
  read(t, "format", fmt, source);
  if (!fmt.empty()) {
    try {
      c.fmt = fxp::QFormat::parse(fmt);
    } catch (const std::exception& e) {
      fail(source, e.what());
    }
  }
}

faultinj::FaultSpec read_fault(const toml::table& t, std::string_view source) {
  check_keys(t, "[[faults]]", {"location", "ber", "mode", "episode", "step", "persistence", "seed"}, source);
  faultinj::FaultSpec f;
  std::string loc, mode = "Both", persistence = "PersistentMemory";
  read(t, "location", loc, source);
  if (loc.empty()) fail(source, "[[faults]] entry without location");
  read(t, "ber", f.ber, source);
  read(t, "mode", mode, source);
  read(t, "episode", f.episode, source);
  read(t, "step", f.step, source);
  read(t, "persistence", persistence, source);
  read(t, "seed", f.seed, source);
  try {
    f.location = parse_location(loc);
    if (f.location.is_agent_side() && f.location.agent == harness::kAnyAgent) {
      throw std::invalid_argument("single faults need an explicit agent id");
    }
    f.mode = faultinj::flip_mode_from_string(mode);
    f.persistence = faultinj::persistence_from_string(persistence);
  } catch (const std::exception& e) {
    fail(source, e.what());
  }
  return f;
}

}  // namespace

FaultLocation parse_location(std::string_view text) {
  const auto star = text.find("(*)");
  if (star != std::string_view::npos && star + 3 == text.size()) {
    auto loc = FaultLocation::parse(text.substr(0, star));
    if (!loc.is_agent_side()) throw std::invalid_argument("server location takes no agent id");
    loc.agent = harness::kAnyAgent;
    return loc;
  }
  return FaultLocation::parse(text);
}

std::string location_string(const FaultLocation& loc) {
  if (loc.is_agent_side() && loc.agent == harness::kAnyAgent) {
    auto s = FaultLocation{loc.kind, 0}.to_string();
    return s.substr(0, s.find('(')) + "(*)";
  }
  return loc.to_string();
}

ExperimentSpec parse_spec(std::string_view text, std::string_view source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << e.description() << " (line " << e.source().begin.line << ")";
    fail(source, os.str());
  }
  check_keys(root, "top level",
             {"name", "phase", "repetitions", "seed_base", "output_dir", "target_sr", "recovery_budget", "train",
              "sweep", "guard", "faults"},
             source);

  ExperimentSpec spec;
  read(root, "name", spec.name, source);
  std::string phase = "training";
  read(root, "phase", phase, source);
  std::string out = spec.output_dir.string();
  read(root, "output_dir", out, source);
  spec.output_dir = out;
  read(root, "repetitions", spec.repetitions, source);
  read(root, "seed_base", spec.seed_base, source);
  read(root, "target_sr", spec.target_sr, source);
  read(root, "recovery_budget", spec.recovery_budget, source);

  try {
    spec.phase = harness::phase_from_string(phase);
  } catch (const std::exception& e) {
    fail(source, e.what());
  }

  if (const auto* t = sub(root, "train", source)) read_train(*t, spec.train, source);

  if (const auto* t = sub(root, "sweep", source)) {
    check_keys(*t, "[sweep]",
               {"fault_episodes", "bers", "locations", "modes", "formats", "agent_counts", "interval_multipliers",
                "inference_kinds", "guard"},
               source);
    read_list(*t, "fault_episodes", spec.fault_episodes, as_int, source);
    read_list(*t, "bers", spec.bers, as_double, source);
    read_list(*t, "locations", spec.locations, [](const toml::node& n) { return parse_location(as_string(n)); },
              source);
    read_list(*t, "modes", spec.modes,
              [](const toml::node& n) { return faultinj::flip_mode_from_string(as_string(n)); }, source);
    read_list(*t, "formats", spec.formats, [](const toml::node& n) { return fxp::QFormat::parse(as_string(n)); },
              source);
    read_list(*t, "agent_counts", spec.agent_counts, as_int, source);
    read_list(*t, "interval_multipliers", spec.interval_multipliers, as_int, source);
    read_list(*t, "inference_kinds", spec.inference_kinds,
              [](const toml::node& n) { return harness::inference_kind_from_string(as_string(n)); }, source);
    read_list(*t, "guard", spec.guard, as_bool, source);
  }

  if (const auto* t = sub(root, "guard", source)) {
    check_keys(*t, "[guard]",
               {"enabled", "drop_percent", "consecutive", "window", "checkpoint_every", "history", "range_margin"},
               source);
    read(*t, "enabled", spec.train_guard, source);
    read(*t, "drop_percent", spec.detector.drop_percent, source);
    read(*t, "consecutive", spec.detector.consecutive, source);
    read(*t, "window", spec.detector.window, source);
    read(*t, "checkpoint_every", spec.detector.checkpoint_every, source);
    read(*t, "history", spec.detector.history, source);
    read(*t, "range_margin", spec.range_margin, source);
  }

  if (const toml::node* n = root.get("faults")) {
    const toml::array* arr = n->as_array();
    if (arr == nullptr) fail(source, "'faults' must be an array of tables");
    for (const auto& item : *arr) {
      const toml::table* t = item.as_table();
      if (t == nullptr) fail(source, "'faults' must be an array of tables");
      spec.faults.push_back(read_fault(*t, source));
    }
  }

  // Sweep axes are checked by the runner that uses them.
  try {
    spec.train.validate();
    spec.detector.validate();
    if (spec.repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  } catch (const std::invalid_argument& e) {
    fail(source, e.what());
  }
  return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str(), path.string());
}

std::string to_toml(const ExperimentSpec& spec) {
  const auto strings = [](const auto& items, auto fn) {
    toml::array a;
    for (const auto& x : items) a.push_back(fn(x));
    return a;
  };
  const auto& c = spec.train;
  toml::table train{{"n_agents", c.n_agents},
                    {"episodes", c.episodes},
                    {"comm_interval", c.comm_interval},
                    {"interval_multiplier", c.interval_multiplier},
                    {"multiplier_after", c.multiplier_after},
                    {"gamma", c.gamma},
                    {"lr", c.lr},
                    {"lr_min", c.lr_min},
                    {"lr_decay", c.lr_decay},
                    {"epsilon0", c.epsilon0},
                    {"epsilon_min", c.epsilon_min},
                    {"epsilon_decay", c.epsilon_decay},
                    {"alpha0", c.alpha0},
                    {"tau", c.tau},
                    {"seed", static_cast<std::int64_t>(c.seed)},
                    {"max_steps", c.max_steps},
                    {"layers", strings(c.layer_dims, [](int d) { return d; })},
                    {"format", c.fmt.to_string()}};
  toml::table sweep{
      {"fault_episodes", strings(spec.fault_episodes, [](int e) { return e; })},
      {"bers", strings(spec.bers, [](double b) { return b; })},
      {"locations", strings(spec.locations, [](const FaultLocation& l) { return location_string(l); })},
      {"modes", strings(spec.modes, [](faultinj::FlipMode m) { return std::string(faultinj::to_string(m)); })},
      {"formats", strings(spec.formats, [](const fxp::QFormat& f) { return f.to_string(); })},
      {"agent_counts", strings(spec.agent_counts, [](int n) { return n; })},
      {"interval_multipliers", strings(spec.interval_multipliers, [](int m) { return m; })},
      {"inference_kinds",
       strings(spec.inference_kinds, [](harness::InferenceKind k) { return std::string(harness::to_string(k)); })},
      {"guard", strings(spec.guard, [](bool g) { return g; })}};
  toml::table guard{{"enabled", spec.train_guard},
                    {"drop_percent", spec.detector.drop_percent},
                    {"consecutive", spec.detector.consecutive},
                    {"window", spec.detector.window},
                    {"checkpoint_every", spec.detector.checkpoint_every},
                    {"history", spec.detector.history},
                    {"range_margin", spec.range_margin}};
  toml::table root{{"name", spec.name},
                   {"phase", std::string(harness::to_string(spec.phase))},
                   {"repetitions", spec.repetitions},
                   {"seed_base", static_cast<std::int64_t>(spec.seed_base)},
                   {"output_dir", spec.output_dir.string()},
                   {"target_sr", spec.target_sr},
                   {"recovery_budget", spec.recovery_budget},
                   {"train", std::move(train)},
                   {"sweep", std::move(sweep)},
                   {"guard", std::move(guard)}};
  if (!spec.faults.empty()) {
    toml::array faults;
    for (const auto& f : spec.faults) {
      faults.push_back(toml::table{{"location", location_string(f.location)},
                                   {"ber", f.ber},
                                   {"mode", std::string(faultinj::to_string(f.mode))},
                                   {"episode", f.episode},
                                   {"step", f.step},
                                   {"persistence", std::string(faultinj::to_string(f.persistence))},
                                   {"seed", static_cast<std::int64_t>(f.seed)}});
    }
    root.insert("faults", std::move(faults));
  }
  std::ostringstream os;
  os << root << '\n';
  return os.str();
}

}  // namespace frlfi::config
