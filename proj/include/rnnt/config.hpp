#pragma once

// Flat `[section] key = value` experiment files.
//
// Every recognised key has a default; keys that are absent are filled in and
// reported as notices, unknown keys are rejected. `dump_config` writes every
// key, so its output re-parses to the same effective configuration.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <functional>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "rnnt/trainer.hpp"

namespace rnnt {

struct ParsedConfig {
  TrainConfig config;
  std::vector<std::string> notices;  // one per defaulted key
};

namespace detail {

struct ConfigField {
  std::string key;  // "section.name"
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ConfigError("config: '" + key + "' has invalid value '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + text + "'");
}

/// Shortest representation that parses back to the same double.
inline std::string exact_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<ConfigField> config_fields() {
  using C = TrainConfig;
  auto sz = [](std::string key, auto getter) {
    return ConfigField{key,
                       [key, getter](C& c, const std::string& s) {
                         auto& ref = getter(c);
                         ref = parse_number<std::remove_reference_t<decltype(ref)>>(key, s);
                       },
                       [getter](const C& c) { return std::to_string(getter(const_cast<C&>(c))); }};
  };
  auto real = [](std::string key, auto getter) {
    return ConfigField{key, [key, getter](C& c, const std::string& s) { getter(c) = parse_number<double>(key, s); },
                       [getter](const C& c) { return exact_number(getter(const_cast<C&>(c))); }};
  };
  auto flag = [](std::string key, auto getter) {
    return ConfigField{key, [key, getter](C& c, const std::string& s) { getter(c) = parse_bool(key, s); },
                       [getter](const C& c) { return std::string(getter(const_cast<C&>(c)) ? "true" : "false"); }};
  };

  return {
      sz("task.vocab_size", [](C& c) -> auto& { return c.task.vocab_size; }),
      sz("task.feature_width", [](C& c) -> auto& { return c.task.feature_width; }),
      sz("task.frames_min", [](C& c) -> auto& { return c.task.frames_min; }),
      sz("task.frames_max", [](C& c) -> auto& { return c.task.frames_max; }),
      real("task.noise_std", [](C& c) -> auto& { return c.task.noise_std; }),
      real("task.silence_prob", [](C& c) -> auto& { return c.task.silence_prob; }),
      sz("task.label_min", [](C& c) -> auto& { return c.task.label_min; }),
      sz("task.label_max", [](C& c) -> auto& { return c.task.label_max; }),
      sz("task.n_train", [](C& c) -> auto& { return c.n_train; }),
      sz("task.n_dev", [](C& c) -> auto& { return c.n_dev; }),

      sz("model.stack", [](C& c) -> auto& { return c.model.stack; }),
      sz("model.encoder_layers", [](C& c) -> auto& { return c.model.encoder_layers; }),
      sz("model.encoder_hidden", [](C& c) -> auto& { return c.model.encoder_hidden; }),
      sz("model.prediction_layers", [](C& c) -> auto& { return c.model.prediction_layers; }),
      sz("model.prediction_hidden", [](C& c) -> auto& { return c.model.prediction_hidden; }),
      sz("model.embed_dim", [](C& c) -> auto& { return c.model.embed_dim; }),
      sz("model.d_enc", [](C& c) -> auto& { return c.model.fusion.d_enc; }),
      sz("model.d_pred", [](C& c) -> auto& { return c.model.fusion.d_pred; }),

      ConfigField{"fusion.kind",
                  [](C& c, const std::string& s) { c.model.fusion.kind = parse_fusion_kind(s); },
                  [](const C& c) { return std::string(to_string(c.model.fusion.kind)); }},
      sz("fusion.d_joint", [](C& c) -> auto& { return c.model.fusion.d_joint; }),
      sz("fusion.d_rank", [](C& c) -> auto& { return c.model.fusion.d_rank; }),
      flag("fusion.bias", [](C& c) -> auto& { return c.model.fusion.bias; }),

      sz("train.seed", [](C& c) -> auto& { return c.seed; }),
      real("train.learning_rate", [](C& c) -> auto& { return c.adam.learning_rate; }),
      real("train.beta1", [](C& c) -> auto& { return c.adam.beta1; }),
      real("train.beta2", [](C& c) -> auto& { return c.adam.beta2; }),
      real("train.epsilon", [](C& c) -> auto& { return c.adam.epsilon; }),
      sz("train.batch_size", [](C& c) -> auto& { return c.batch_size; }),
      sz("train.total_steps", [](C& c) -> auto& { return c.total_steps; }),
      sz("train.eval_every", [](C& c) -> auto& { return c.eval_every; }),
      sz("train.max_symbols", [](C& c) -> auto& { return c.max_symbols; }),
      real("train.clip_norm", [](C& c) -> auto& { return c.clip_norm; }),

      flag("reg.enabled", [](C& c) -> auto& { return c.regularize; }),
      sz("reg.m1", [](C& c) -> auto& { return c.schedule.m1; }),
      sz("reg.m2", [](C& c) -> auto& { return c.schedule.m2; }),
  };
}

}  // namespace detail

/// Defaults used for keys absent from a config file.
inline TrainConfig default_train_config() {
  TrainConfig c;
  c.task.vocab_size = 8;
  c.task.feature_width = 0;
  c.model.fusion = FusionSpec{FusionKind::kFcAdd, 32, 32, 32, 32, false};
  return c;
}

/// Derives dependent fields (model vocabulary and feature width from the task;
/// D_rank is dropped for kinds that do not use it) and validates.
inline void finalize(TrainConfig& c) {
  c.model.vocab_size = c.task.vocab_size;
  c.model.feature_width = c.task.features();
  if (!requires_rank(c.model.fusion.kind)) c.model.fusion.d_rank = 0;
  c.validate();
}

inline ParsedConfig parse_config(std::istream& is) {
  // Boost's INI reader only knows ';' comments; accept '#' as well.
  std::ostringstream cleaned;
  for (std::string line; std::getline(is, line);) {
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos && line[first] == '#') continue;
    cleaned << line << '\n';
  }
  boost::property_tree::ptree tree;
  std::istringstream in(cleaned.str());
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }

  const auto fields = detail::config_fields();
  std::set<std::string> known;
  for (const auto& f : fields) known.insert(f.key);

  ParsedConfig out{default_train_config(), {}};
  std::set<std::string> seen;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key '" + section + "' must be inside a [section]");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (!known.contains(full)) throw ConfigError("config: unknown key '" + full + "'");
      seen.insert(full);
    }
  }
  for (const auto& f : fields) {
    const auto dot = f.key.find('.');
    const auto section = tree.get_child_optional(f.key.substr(0, dot));
    if (seen.contains(f.key)) f.set(out.config, section->get<std::string>(f.key.substr(dot + 1)));
  }
  for (const auto& f : fields)
    if (!seen.contains(f.key)) out.notices.push_back("config: '" + f.key + "' not set, using default " + f.get(out.config));
  finalize(out.config);
  return out;
}

inline ParsedConfig parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline void dump_config(std::ostream& os, const TrainConfig& c) {
  std::string section;
  for (const auto& f : detail::config_fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << '\n';
      os << '[' << s << "]\n";
      section = s;
    }
    os << f.key.substr(dot + 1) << " = " << f.get(c) << '\n';
  }
}

}  // namespace rnnt
