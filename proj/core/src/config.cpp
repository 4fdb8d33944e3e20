#include "dmh/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace dmh {

namespace {

enum class FieldType { kInt, kFloat, kBool, kString };

struct Field {
  std::string key;  // "section.name"
  FieldType type;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t x = std::stoll(v, &pos);
    DMH_CHECK_T(ConfigError, pos == v.size(), "");
    return x;
  } catch (...) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_float(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    DMH_CHECK_T(ConfigError, pos == v.size(), "");
    return x;
  } catch (...) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("key '" + key + "' expects true or false, got '" + v + "'");
}

std::string fmt_float(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

#define FIELD_INT(section, name)                                                      \
  Field{#section "." #name, FieldType::kInt,                                          \
        [](RunConfig& c, const std::string& k, const std::string& v) {                \
          c.section.name = parse_int(k, v);                                           \
        },                                                                            \
        [](const RunConfig& c) { return std::to_string(c.section.name); }}
#define FIELD_FLOAT(section, name)                                                    \
  Field{#section "." #name, FieldType::kFloat,                                        \
        [](RunConfig& c, const std::string& k, const std::string& v) {                \
          c.section.name = parse_float(k, v);                                         \
        },                                                                            \
        [](const RunConfig& c) { return fmt_float(c.section.name); }}
#define FIELD_BOOL(section, name)                                                     \
  Field{#section "." #name, FieldType::kBool,                                         \
        [](RunConfig& c, const std::string& k, const std::string& v) {                \
          c.section.name = parse_bool(k, v);                                          \
        },                                                                            \
        [](const RunConfig& c) { return c.section.name ? "true" : "false"; }}
#define FIELD_STR(section, name)                                                      \
  Field{#section "." #name, FieldType::kString,                                       \
        [](RunConfig& c, const std::string&, const std::string& v) {                  \
          c.section.name = v;                                                         \
        },                                                                            \
        [](const RunConfig& c) { return c.section.name; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      FIELD_STR(model, kind),
      FIELD_INT(model, c),
      FIELD_INT(model, n),
      FIELD_INT(model, embed_dim),
      FIELD_INT(model, mamba_layers),
      FIELD_INT(model, state_size),
      FIELD_INT(model, tf_layers),
      FIELD_INT(model, tf_heads),
      FIELD_FLOAT(model, dropout),
      FIELD_INT(model, segments_per_item),
      FIELD_BOOL(model, use_valuable_subgoals),
      FIELD_FLOAT(model, action_temperature),
      FIELD_STR(data, env),
      FIELD_INT(data, tasks),
      FIELD_INT(data, steps_per_task),
      FIELD_INT(data, tmaze_horizon),
      FIELD_INT(data, tmaze_episodes),
      FIELD_FLOAT(data, optimal_fraction),
      FIELD_INT(train, iterations),
      FIELD_INT(train, batch_size),
      FIELD_FLOAT(train, lr),
      FIELD_FLOAT(train, weight_decay),
      FIELD_FLOAT(train, clip_norm),
      FIELD_INT(train, warmup_steps),
      FIELD_INT(train, seed),
      FIELD_INT(eval, episodes),
      FIELD_INT(eval, tasks),
      FIELD_INT(eval, seed),
  };
  return f;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown configuration key '" + key + "'");
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string unquote(const std::string& key, const std::string& v) {
  if (v.size() >= 2 && v.front() == '"') {
    DMH_CHECK_T(ConfigError, v.back() == '"', "unterminated string for key '", key, "'");
    return v.substr(1, v.size() - 2);
  }
  return v;
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& raw) {
  const Field& f = find_field(key);
  f.set(cfg, key, unquote(key, raw));
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides,
                            const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      DMH_CHECK_T(ConfigError, line.back() == ']', origin, ":", line_no,
                  ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      DMH_CHECK_T(ConfigError,
                  section == "model" || section == "data" || section == "train" ||
                      section == "eval",
                  origin, ":", line_no, ": unknown section [", section, "]");
      continue;
    }
    auto eq = line.find('=');
    DMH_CHECK_T(ConfigError, eq != std::string::npos, origin, ":", line_no,
                ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    DMH_CHECK_T(ConfigError, !section.empty(), origin, ":", line_no,
                ": key '", key, "' outside any section");
    apply_key(cfg, section + "." + key, value);
  }
  for (const auto& ov : overrides) {
    auto eq = ov.find('=');
    DMH_CHECK_T(ConfigError, eq != std::string::npos,
                "override '", ov, "' must be section.key=value");
    apply_key(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  DMH_CHECK_T(ConfigError, in.good(), "cannot open config file ", path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), overrides, path);
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    auto dot = f.key.find('.');
    std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << "\n";
      os << "[" << sec << "]\n";
      section = sec;
    }
    std::string v = f.get(cfg);
    if (f.type == FieldType::kString) v = "\"" + v + "\"";
    os << f.key.substr(dot + 1) << " = " << v << "\n";
  }
  return os.str();
}

}  // namespace dmh
