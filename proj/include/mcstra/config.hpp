#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "mcstra/model.hpp"

namespace mcstra {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

inline std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(trim(item)));
  return out;
}

}  // namespace detail

// Flat "key = value" text. '#' starts a comment; unknown keys are
// errors.
inline McstraConfig parse_config_text(const std::string& text) {
  McstraConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key == "height") cfg.height = std::stoi(val);
    else if (key == "width") cfg.width = std::stoi(val);
    else if (key == "cascade_length") cfg.cascade_length = std::stoi(val);
    else if (key == "branch_dim") cfg.branch_dim = std::stoi(val);
    else if (key == "cascade_dim") cfg.cascade_dim = std::stoi(val);
    else if (key == "tail_dim") cfg.tail_dim = std::stoi(val);
    else if (key == "dc_lambda") {
      cfg.dc_lambda = (val == "inf" || val == "infinite") ? DcWeight::infinite()
                                                          : DcWeight::finite(std::stod(val));
    } else if (key == "dc_lambda_trainable") cfg.dc_lambda_trainable = detail::parse_bool(val, key);
    else if (key == "alpha_l") cfg.alpha_l = std::stod(val);
    else if (key == "alpha_h") cfg.alpha_h = std::stod(val);
    else if (key == "gamma_branch") cfg.gamma_branch = std::stod(val);
    else if (key == "gamma_cas") cfg.gamma_cas = std::stod(val);
    else if (key == "gamma_tail") cfg.gamma_tail = std::stod(val);
    else if (key == "accel") cfg.accel = std::stod(val);
    else if (key == "center_frac") cfg.center_frac = std::stod(val);
    else if (key == "mask_kind") {
      if (val == "random") cfg.mask_kind = MaskKind::random;
      else if (val == "equispaced") cfg.mask_kind = MaskKind::equispaced;
      else throw std::invalid_argument("config: unknown mask_kind: " + val);
    } else if (key == "patch") cfg.patch = std::stoi(val);
    else if (key == "window") cfg.window = std::stoi(val);
    else if (key == "heads") cfg.heads = std::stoi(val);
    else if (key == "depths") cfg.depths = detail::parse_int_list(val);
    else if (key == "bottleneck_depth") cfg.bottleneck_depth = std::stoi(val);
    else if (key == "ablation") cfg.ablation = parse_ablation(val);
    else if (key == "pe_per_stage") cfg.pe_per_stage = detail::parse_bool(val, key);
    else if (key == "psf_feed") {
      if (val == "magnitude") cfg.psf_feed = PsfFeed::magnitude;
      else if (val == "real") cfg.psf_feed = PsfFeed::real;
      else if (val == "complex") cfg.psf_feed = PsfFeed::complex_pair;
      else throw std::invalid_argument("config: unknown psf_feed: " + val);
    } else if (key == "cascade_final_loss_only") {
      cfg.cascade_final_loss_only = detail::parse_bool(val, key);
    } else if (key == "lr") cfg.lr = std::stod(val);
    else if (key == "rmsprop_rho") cfg.rmsprop_rho = std::stod(val);
    else if (key == "rmsprop_eps") cfg.rmsprop_eps = std::stod(val);
    else if (key == "clip_norm") cfg.clip_norm = std::stod(val);
    else if (key == "fixed_masks") cfg.fixed_masks = detail::parse_bool(val, key);
    else if (key == "phantom_phase") cfg.phantom_phase = detail::parse_bool(val, key);
    else throw std::invalid_argument("config: unknown key: " + key);
  }
  cfg.validate();
  return cfg;
}

inline McstraConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

inline std::string config_text(const McstraConfig& cfg) {
  std::ostringstream os;
  os << "height = " << cfg.height << "\n";
  os << "width = " << cfg.width << "\n";
  os << "cascade_length = " << cfg.cascade_length << "\n";
  os << "branch_dim = " << cfg.branch_dim << "\n";
  os << "cascade_dim = " << cfg.cascade_dim << "\n";
  os << "tail_dim = " << cfg.tail_dim << "\n";
  if (cfg.dc_lambda.is_infinite) {
    os << "dc_lambda = inf\n";
  } else {
    os << "dc_lambda = " << cfg.dc_lambda.lambda << "\n";
  }
  os << "dc_lambda_trainable = " << (cfg.dc_lambda_trainable ? 1 : 0) << "\n";
  os << "alpha_l = " << cfg.alpha_l << "\n";
  os << "alpha_h = " << cfg.alpha_h << "\n";
  os << "gamma_branch = " << cfg.gamma_branch << "\n";
  os << "gamma_cas = " << cfg.gamma_cas << "\n";
  os << "gamma_tail = " << cfg.gamma_tail << "\n";
  os << "accel = " << cfg.accel << "\n";
  os << "center_frac = " << cfg.center_frac << "\n";
  os << "mask_kind = " << (cfg.mask_kind == MaskKind::random ? "random" : "equispaced") << "\n";
  os << "patch = " << cfg.patch << "\n";
  os << "window = " << cfg.window << "\n";
  os << "heads = " << cfg.heads << "\n";
  os << "depths = ";
  for (size_t i = 0; i < cfg.depths.size(); ++i) os << (i ? "," : "") << cfg.depths[i];
  os << "\n";
  os << "bottleneck_depth = " << cfg.bottleneck_depth << "\n";
  os << "ablation = " << ablation_tag(cfg.ablation) << "\n";
  os << "pe_per_stage = " << (cfg.pe_per_stage ? 1 : 0) << "\n";
  os << "psf_feed = "
     << (cfg.psf_feed == PsfFeed::magnitude
             ? "magnitude"
             : (cfg.psf_feed == PsfFeed::real ? "real" : "complex"))
     << "\n";
  os << "cascade_final_loss_only = " << (cfg.cascade_final_loss_only ? 1 : 0) << "\n";
  os << "lr = " << cfg.lr << "\n";
  os << "rmsprop_rho = " << cfg.rmsprop_rho << "\n";
  os << "rmsprop_eps = " << cfg.rmsprop_eps << "\n";
  os << "clip_norm = " << cfg.clip_norm << "\n";
  os << "fixed_masks = " << (cfg.fixed_masks ? 1 : 0) << "\n";
  os << "phantom_phase = " << (cfg.phantom_phase ? 1 : 0) << "\n";
  return os.str();
}

inline void save_config(const McstraConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << config_text(cfg);
}

}  // namespace mcstra
