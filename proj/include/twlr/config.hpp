#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "twlr/encoder.hpp"
#include "twlr/error.hpp"
#include "twlr/synthgen.hpp"
#include "twlr/trainer.hpp"
#include "twlr/vessel_repair.hpp"

namespace twlr {

/// Carries every problem found in a config, not just the first.
class ConfigError : public InvalidInput {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : InvalidInput(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid config:";
    for (const auto& x : p) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> problems_;
};

enum class VesselSource { GroundTruth, File, Ridge };
enum class InpainterKind { Harmonic, External };

struct RunConfig {
  std::optional<std::uint64_t> seed;

  // Paths; empty means "derive from output_dir".
  std::string output_dir = "out";
  std::string data_dir;
  std::string checkpoint;
  std::string descriptions;  // empty: built-in descriptions

  SynthConfig synth;
  std::array<int, kNumGrades> train_counts{30, 30, 30, 30, 30};
  std::array<int, kNumGrades> test_counts{10, 10, 10, 10, 10};

  EncoderConfig encoder = [] {
    EncoderConfig e;
    e.patch_size = 8;
    return e;
  }();
  TrainHyper train = [] {
    TrainHyper h;
    h.optimizer = Optimizer::Adam;
    h.lr = 0.002;
    h.epochs = 150;
    h.batch_size = 16;
    h.weight_decay = 0.05;
    h.augment = true;
    return h;
  }();

  ColorParams color;
  int max_iterations = 10;
  bool dilate_mask = true;
  bool repair_vessels = true;
  VesselSource vessels = VesselSource::GroundTruth;
  std::string vessel_pattern;  // FileVessels pattern, `{id}` substituted
  InpainterKind inpainter = InpainterKind::Harmonic;
  std::string inpaint_command;
  double inpaint_timeout = 60.0;
  int inpaint_max_sweeps = 500;
  int workers = 1;
  int montage_images = 4;

  std::filesystem::path out() const { return output_dir; }
  std::filesystem::path data_path() const { return data_dir.empty() ? out() / "data" : std::filesystem::path(data_dir); }
  std::filesystem::path checkpoint_path() const {
    return checkpoint.empty() ? out() / "model.ckpt" : std::filesystem::path(checkpoint);
  }
  std::filesystem::path run_path() const { return out() / "run"; }
  std::filesystem::path eval_path() const { return out() / "eval"; }
  std::filesystem::path report_path() const { return out() / "report"; }

  /// Subsystem seed from the single config seed.
  std::uint64_t seed_for(std::string_view subsystem) const { return derive_seed(seed.value_or(0), subsystem); }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t pos = 0;
      out = static_cast<T>(std::stod(s, &pos));
      return pos == s.size() && std::isfinite(static_cast<double>(out));
    } catch (...) {
      return false;
    }
  } else {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
  }
}

inline bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return out = true, true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return out = false, true;
  return false;
}

inline std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

inline std::string counts_string(const std::array<int, kNumGrades>& c) {
  std::string s;
  for (int g = 0; g < kNumGrades; ++g) s += (g ? "," : "") + std::to_string(c[g]);
  return s;
}

}  // namespace detail

/// Key table shared by the parser and the effective-config writer.
class ConfigSchema {
 public:
  using Setter = std::function<std::optional<std::string>(RunConfig&, const std::string&)>;
  using Getter = std::function<std::string(const RunConfig&)>;
  struct Key {
    std::string name;
    Setter set;
    Getter get;
  };

  static const std::vector<Key>& keys() {
    static const std::vector<Key> k = build();
    return k;
  }

 private:
  template <typename T>
  static Key number(std::string name, T RunConfig::*field) {
    return {name,
            [field](RunConfig& c, const std::string& v) -> std::optional<std::string> {
              if (!detail::parse_number(v, c.*field)) return "expected a number, got '" + v + "'";
              return std::nullopt;
            },
            [field](const RunConfig& c) {
              if constexpr (std::is_floating_point_v<T>) return detail::fmt_double(c.*field);
              else return std::to_string(c.*field);
            }};
  }
  template <typename S, typename T>
  static Key nested(std::string name, S RunConfig::*outer, T S::*field) {
    return {name,
            [outer, field](RunConfig& c, const std::string& v) -> std::optional<std::string> {
              if constexpr (std::is_same_v<T, bool>) {
                if (!detail::parse_bool(v, (c.*outer).*field)) return "expected true/false, got '" + v + "'";
              } else if (!detail::parse_number(v, (c.*outer).*field)) {
                return "expected a number, got '" + v + "'";
              }
              return std::nullopt;
            },
            [outer, field](const RunConfig& c) -> std::string {
              if constexpr (std::is_same_v<T, bool>) return (c.*outer).*field ? "true" : "false";
              else if constexpr (std::is_floating_point_v<T>) return detail::fmt_double((c.*outer).*field);
              else return std::to_string((c.*outer).*field);
            }};
  }
  static Key text(std::string name, std::string RunConfig::*field) {
    return {name,
            [field](RunConfig& c, const std::string& v) -> std::optional<std::string> {
              c.*field = v;
              return std::nullopt;
            },
            [field](const RunConfig& c) { return c.*field; }};
  }
  static Key flag(std::string name, bool RunConfig::*field) {
    return {name,
            [field](RunConfig& c, const std::string& v) -> std::optional<std::string> {
              if (!detail::parse_bool(v, c.*field)) return "expected true/false, got '" + v + "'";
              return std::nullopt;
            },
            [field](const RunConfig& c) -> std::string { return c.*field ? "true" : "false"; }};
  }
  static Key counts(std::string name, std::array<int, kNumGrades> RunConfig::*field) {
    return {name,
            [field](RunConfig& c, const std::string& v) -> std::optional<std::string> {
              std::array<int, kNumGrades> out{};
              std::stringstream ss(v);
              std::string item;
              int g = 0;
              while (std::getline(ss, item, ',')) {
                if (g >= kNumGrades || !detail::parse_number(detail::trim(item), out[g]) || out[g] < 0)
                  return "expected 5 comma-separated non-negative counts, got '" + v + "'";
                ++g;
              }
              if (g != kNumGrades) return "expected 5 comma-separated non-negative counts, got '" + v + "'";
              c.*field = out;
              return std::nullopt;
            },
            [field](const RunConfig& c) { return detail::counts_string(c.*field); }};
  }

  static std::vector<Key> build() {
    std::vector<Key> k;
    k.push_back({"seed",
                 [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
                   std::uint64_t s;
                   if (!detail::parse_number(v, s)) return "expected a non-negative integer, got '" + v + "'";
                   c.seed = s;
                   return std::nullopt;
                 },
                 [](const RunConfig& c) { return c.seed ? std::to_string(*c.seed) : std::string(); }});
    k.push_back(text("paths.output_dir", &RunConfig::output_dir));
    k.push_back(text("paths.data_dir", &RunConfig::data_dir));
    k.push_back(text("paths.checkpoint", &RunConfig::checkpoint));
    k.push_back(text("paths.descriptions", &RunConfig::descriptions));

    k.push_back(nested("synth.image_size", &RunConfig::synth, &SynthConfig::image_size));
    k.push_back(nested("synth.vessel_count", &RunConfig::synth, &SynthConfig::vessel_count));
    k.push_back(nested("synth.disc_radius", &RunConfig::synth, &SynthConfig::disc_radius));
    k.push_back(counts("synth.train_counts", &RunConfig::train_counts));
    k.push_back(counts("synth.test_counts", &RunConfig::test_counts));
    for (int g = 0; g < kNumGrades; ++g)
      for (int l = 0; l < kNumLesions; ++l) {
        const std::string name = "synth.budget.grade" + std::to_string(g) + "." + kLesionNames[l];
        k.push_back({name,
                     [g, l](RunConfig& c, const std::string& v) -> std::optional<std::string> {
                       const auto dash = v.find('-');
                       CountRange r;
                       if (dash == std::string::npos || !detail::parse_number(detail::trim(v.substr(0, dash)), r.min) ||
                           !detail::parse_number(detail::trim(v.substr(dash + 1)), r.max))
                         return "expected a range 'lo-hi', got '" + v + "'";
                       c.synth.lesion_budget[g][l] = r;
                       return std::nullopt;
                     },
                     [g, l](const RunConfig& c) {
                       const auto& r = c.synth.lesion_budget[g][l];
                       return std::to_string(r.min) + "-" + std::to_string(r.max);
                     }});
      }

    k.push_back(nested("encoder.patch_size", &RunConfig::encoder, &EncoderConfig::patch_size));
    k.push_back(nested("encoder.dim", &RunConfig::encoder, &EncoderConfig::dim));
    k.push_back(nested("encoder.layers", &RunConfig::encoder, &EncoderConfig::layers));
    k.push_back(nested("encoder.heads", &RunConfig::encoder, &EncoderConfig::heads));
    k.push_back(nested("encoder.ffn_dim", &RunConfig::encoder, &EncoderConfig::ffn_dim));
    k.push_back(nested("encoder.temperature", &RunConfig::encoder, &EncoderConfig::temperature));

    k.push_back(nested("train.lr", &RunConfig::train, &TrainHyper::lr));
    k.push_back(nested("train.epochs", &RunConfig::train, &TrainHyper::epochs));
    k.push_back(nested("train.batch_size", &RunConfig::train, &TrainHyper::batch_size));
    k.push_back(nested("train.weight_decay", &RunConfig::train, &TrainHyper::weight_decay));
    k.push_back(nested("train.augment", &RunConfig::train, &TrainHyper::augment));
    k.push_back(nested("train.max_shift", &RunConfig::train, &TrainHyper::max_shift));
    k.push_back({"train.optimizer",
                 [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
                   if (v == "sgd") c.train.optimizer = Optimizer::SGD;
                   else if (v == "adam") c.train.optimizer = Optimizer::Adam;
                   else return "expected sgd or adam, got '" + v + "'";
                   return std::nullopt;
                 },
                 [](const RunConfig& c) -> std::string { return c.train.optimizer == Optimizer::Adam ? "adam" : "sgd"; }});

    k.push_back(nested("color.beta_dark", &RunConfig::color, &ColorParams::beta_dark));
    k.push_back(nested("color.gamma_distance", &RunConfig::color, &ColorParams::gamma_distance));
    k.push_back(nested("color.delta_noise", &RunConfig::color, &ColorParams::delta_noise));
    k.push_back(nested("color.alpha_vessel", &RunConfig::color, &ColorParams::alpha_vessel));
    k.push_back(nested("color.alpha_inter", &RunConfig::color, &ColorParams::alpha_inter));

    k.push_back(number("loop.max_iterations", &RunConfig::max_iterations));
    k.push_back(flag("loop.dilate_mask", &RunConfig::dilate_mask));
    k.push_back(flag("loop.repair_vessels", &RunConfig::repair_vessels));
    k.push_back({"loop.vessels",
                 [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
                   if (v == "ground_truth") c.vessels = VesselSource::GroundTruth;
                   else if (v == "file") c.vessels = VesselSource::File;
                   else if (v == "ridge") c.vessels = VesselSource::Ridge;
                   else return "expected ground_truth, file or ridge, got '" + v + "'";
                   return std::nullopt;
                 },
                 [](const RunConfig& c) -> std::string {
                   switch (c.vessels) {
                     case VesselSource::GroundTruth: return "ground_truth";
                     case VesselSource::File: return "file";
                     case VesselSource::Ridge: return "ridge";
                   }
                   return "";
                 }});
    k.push_back(text("loop.vessel_pattern", &RunConfig::vessel_pattern));
    k.push_back(number("loop.workers", &RunConfig::workers));

    k.push_back({"inpaint.method",
                 [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
                   if (v == "harmonic") c.inpainter = InpainterKind::Harmonic;
                   else if (v == "external") c.inpainter = InpainterKind::External;
                   else return "expected harmonic or external, got '" + v + "'";
                   return std::nullopt;
                 },
                 [](const RunConfig& c) -> std::string {
                   return c.inpainter == InpainterKind::External ? "external" : "harmonic";
                 }});
    k.push_back(number("inpaint.max_sweeps", &RunConfig::inpaint_max_sweeps));
    k.push_back(text("inpaint.command", &RunConfig::inpaint_command));
    k.push_back(number("inpaint.timeout", &RunConfig::inpaint_timeout));

    k.push_back(number("report.montage_images", &RunConfig::montage_images));
    return k;
  }
};

/// Range and cross-field checks; returns every problem found.
inline std::vector<std::string> config_problems(const RunConfig& c) {
  std::vector<std::string> p;
  if (!c.seed) p.push_back("seed: required");
  if (c.output_dir.empty()) p.push_back("paths.output_dir: must not be empty");
  if (!c.descriptions.empty() && !std::filesystem::exists(c.descriptions))
    p.push_back("paths.descriptions: file not found: " + c.descriptions);
  auto collect = [&](const char* section, auto&& check) {
    try {
      check();
    } catch (const std::exception& e) {
      p.push_back(std::string(section) + ": " + e.what());
    }
  };
  collect("encoder", [&] { c.encoder.validate(); });
  collect("synth", [&] { c.synth.validate(c.encoder.patch_size); });
  collect("train", [&] { c.train.validate(); });
  collect("color", [&] { c.color.validate(); });
  int train_total = 0;
  for (int n : c.train_counts) train_total += n;
  if (train_total == 0) p.push_back("synth.train_counts: at least one training sample is needed");
  if (c.max_iterations < 1) p.push_back("loop.max_iterations: must be >= 1");
  if (c.workers < 1) p.push_back("loop.workers: must be >= 1");
  if (c.vessels == VesselSource::File && c.vessel_pattern.empty())
    p.push_back("loop.vessel_pattern: required when loop.vessels = file");
  if (c.inpainter == InpainterKind::External && c.inpaint_command.empty())
    p.push_back("inpaint.command: required when inpaint.method = external");
  if (!(c.inpaint_timeout > 0)) p.push_back("inpaint.timeout: must be positive");
  if (c.inpaint_max_sweeps < 1) p.push_back("inpaint.max_sweeps: must be >= 1");
  if (c.montage_images < 0) p.push_back("report.montage_images: must be >= 0");
  return p;
}

/// Applies `key = value` lines on top of `base`. `#` starts a comment. Unknown
/// keys, malformed lines and bad values are all collected before throwing.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}, const std::string& source = "config") {
  std::map<std::string, const ConfigSchema::Key*> table;
  for (const auto& k : ConfigSchema::keys()) table[k.name] = &k;
  std::vector<std::string> problems;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + ": expected 'key = value'");
      continue;
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = table.find(key);
    if (it == table.end()) {
      problems.push_back(where + ": unknown key '" + key + "'");
      continue;
    }
    if (auto err = it->second->set(base, value)) problems.push_back(where + ": " + key + ": " + *err);
  }
  if (!problems.empty()) throw ConfigError(problems);
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file " + path.string()});
  return parse_config(in, RunConfig{}, path.string());
}

inline void validate_config(RunConfig& c) {
  c.encoder.image_size = c.synth.image_size;
  auto p = config_problems(c);
  if (!p.empty()) throw ConfigError(p);
}

/// Every key with its effective value; parsing this text reproduces the config.
inline std::string effective_config(const RunConfig& c) {
  std::string out;
  for (const auto& k : ConfigSchema::keys()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

inline void write_effective_config(const std::filesystem::path& dir, const RunConfig& c) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.effective");
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.effective").string());
  out << effective_config(c);
}

}  // namespace twlr
