#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vwapsig/kan.hpp"
#include "vwapsig/market.hpp"

namespace vwapsig {

enum class Variant { AFD, GFD, GFT, GFTSig };

inline Variant parse_variant(const std::string& s) {
  if (s == "AFD") return Variant::AFD;
  if (s == "GFD") return Variant::GFD;
  if (s == "GFT") return Variant::GFT;
  if (s == "GFT-Sig" || s == "GFTSig") return Variant::GFTSig;
  throw std::invalid_argument("unknown variant '" + s + "' (AFD|GFD|GFT|GFT-Sig)");
}

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::AFD: return "AFD";
    case Variant::GFD: return "GFD";
    case Variant::GFT: return "GFT";
    case Variant::GFTSig: return "GFT-Sig";
  }
  return "?";
}

inline bool variant_transformer(Variant v) { return v == Variant::GFT || v == Variant::GFTSig; }
inline bool variant_signature(Variant v) { return v == Variant::GFTSig; }
inline bool variant_per_asset(Variant v) { return v == Variant::AFD; }

struct RunConfig {
  Variant variant = Variant::GFTSig;
  std::string profile = "tiny";
  std::uint64_t seed = 1;
  std::size_t workers = 1;

  // model geometry
  std::size_t lookback = 24;      // l
  std::size_t sig_lookback = 48;  // l_s
  std::size_t horizon = 12;       // h
  std::size_t d_model = 33;       // divisible by heads; full profile uses 198
  std::size_t heads = 3;
  std::size_t embed_width = 3;  // VSN embedding size E
  std::size_t sig_depth = 3;    // signature truncation k
  std::size_t tkan_depth = 2;
  std::size_t rkan_sublayers = 2;
  std::size_t kan_grid_intervals = 8;
  double kan_grid_limit = 3.0;

  // data pipeline
  std::size_t median_window = 336;  // two weeks of hourly bars
  std::size_t median_shift = 12;    // = horizon, prevents look-ahead
  double train_frac = 0.8;
  double val_frac = 0.2;
  std::size_t train_stride = 1;
  std::size_t eval_stride = 1;
  std::size_t window_offset = 0;

  // optimization
  std::size_t batch = 64;
  std::size_t epochs = 40;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t plateau_patience = 5;
  std::size_t early_stop_patience = 10;
  double bn_momentum = 0.99;

  KanGrid grid() const { return KanGrid{kan_grid_limit, kan_grid_intervals}; }
  std::size_t steps() const { return lookback + horizon - 1; }
};

inline void apply_profile(RunConfig& c, const std::string& profile) {
  if (profile == "tiny") {
    c.lookback = 24;
    c.sig_lookback = 48;
    c.horizon = 12;
    c.d_model = 33;  // 32 rounded up so three heads divide it
    c.batch = 64;
  } else if (profile == "full") {
    c.lookback = 60;
    c.sig_lookback = 400;
    c.horizon = 12;
    c.d_model = 198;  // 200 rounded down so three heads divide it
    c.batch = 1024;
  } else {
    throw std::invalid_argument("unknown profile '" + profile + "' (tiny|full)");
  }
  c.profile = profile;
  c.median_shift = c.horizon;
}

// ---- flat key=value config ---------------------------------------------

namespace detail {

template <typename T>
inline T parse_num(const std::string& v) {
  if constexpr (std::is_floating_point_v<T>) return static_cast<T>(std::stod(v));
  else return static_cast<T>(std::stoull(v));
}

}  // namespace detail

// Applies one key=value pair; unknown keys throw. Every documented key maps
// onto exactly one RunConfig field.
inline void apply_config_key(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_num;
  if (key == "variant") c.variant = parse_variant(value);
  else if (key == "profile") apply_profile(c, value);
  else if (key == "seed") c.seed = parse_num<std::uint64_t>(value);
  else if (key == "workers") c.workers = parse_num<std::size_t>(value);
  else if (key == "lookback") c.lookback = parse_num<std::size_t>(value);
  else if (key == "sig_lookback") c.sig_lookback = parse_num<std::size_t>(value);
  else if (key == "horizon") c.horizon = parse_num<std::size_t>(value);
  else if (key == "d_model") c.d_model = parse_num<std::size_t>(value);
  else if (key == "heads") c.heads = parse_num<std::size_t>(value);
  else if (key == "embed_width") c.embed_width = parse_num<std::size_t>(value);
  else if (key == "sig_depth") c.sig_depth = parse_num<std::size_t>(value);
  else if (key == "tkan_depth") c.tkan_depth = parse_num<std::size_t>(value);
  else if (key == "rkan_sublayers") c.rkan_sublayers = parse_num<std::size_t>(value);
  else if (key == "kan_grid_intervals") c.kan_grid_intervals = parse_num<std::size_t>(value);
  else if (key == "kan_grid_limit") c.kan_grid_limit = parse_num<double>(value);
  else if (key == "median_window") c.median_window = parse_num<std::size_t>(value);
  else if (key == "median_shift") c.median_shift = parse_num<std::size_t>(value);
  else if (key == "train_frac") c.train_frac = parse_num<double>(value);
  else if (key == "val_frac") c.val_frac = parse_num<double>(value);
  else if (key == "train_stride") c.train_stride = parse_num<std::size_t>(value);
  else if (key == "eval_stride") c.eval_stride = parse_num<std::size_t>(value);
  else if (key == "window_offset") c.window_offset = parse_num<std::size_t>(value);
  else if (key == "batch") c.batch = parse_num<std::size_t>(value);
  else if (key == "epochs") c.epochs = parse_num<std::size_t>(value);
  else if (key == "lr") c.lr = parse_num<double>(value);
  else if (key == "adam_beta1") c.adam_beta1 = parse_num<double>(value);
  else if (key == "adam_beta2") c.adam_beta2 = parse_num<double>(value);
  else if (key == "adam_eps") c.adam_eps = parse_num<double>(value);
  else if (key == "plateau_patience") c.plateau_patience = parse_num<std::size_t>(value);
  else if (key == "early_stop_patience") c.early_stop_patience = parse_num<std::size_t>(value);
  else if (key == "bn_momentum") c.bn_momentum = parse_num<double>(value);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "variant", "profile", "seed", "workers", "lookback", "sig_lookback", "horizon", "d_model",
      "heads", "embed_width", "sig_depth", "tkan_depth", "rkan_sublayers", "kan_grid_intervals",
      "kan_grid_limit", "median_window", "median_shift", "train_frac", "val_frac", "train_stride",
      "eval_stride", "window_offset", "batch", "epochs", "lr", "adam_beta1", "adam_beta2",
      "adam_eps", "plateau_patience", "early_stop_patience", "bn_momentum"};
  return keys;
}

// Parses `key=value` lines ('#' comments allowed), then environment overrides
// (VWAPSIG_<KEY>, uppercased). All problems are reported together.
inline RunConfig load_config(const std::string& path, std::vector<std::string>* errors) {
  RunConfig c;
  std::vector<std::string> errs;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) {
      errs.push_back("cannot open config file " + path);
    } else {
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(f, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::string trimmed = detail::trim(line);
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos) {
          errs.push_back(path + ":" + std::to_string(line_no) + ": expected key=value");
          continue;
        }
        const std::string key = detail::trim(trimmed.substr(0, eq));
        const std::string value = detail::trim(trimmed.substr(eq + 1));
        try {
          apply_config_key(c, key, value);
        } catch (const std::exception& e) {
          errs.push_back(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
      }
    }
  }
  for (const std::string& key : config_keys()) {
    std::string env = "VWAPSIG_";
    for (char ch : key) env += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (const char* v = std::getenv(env.c_str())) {
      try {
        apply_config_key(c, key, v);
      } catch (const std::exception& e) {
        errs.push_back(env + ": " + e.what());
      }
    }
  }
  if (errors) *errors = std::move(errs);
  else if (!errs.empty()) throw std::invalid_argument(errs.front());
  return c;
}

// Structural validation; collects every violation.
inline std::vector<std::string> validate_config(const RunConfig& c) {
  std::vector<std::string> errs;
  if (c.horizon < 2) errs.push_back("horizon must be >= 2");
  if (c.lookback < 1) errs.push_back("lookback must be >= 1");
  if (c.sig_lookback < c.lookback) errs.push_back("sig_lookback must be >= lookback");
  if (variant_transformer(c.variant) && (c.heads == 0 || c.d_model % c.heads != 0))
    errs.push_back("heads must divide d_model (" + std::to_string(c.d_model) + " % " +
                   std::to_string(c.heads) + " != 0)");
  if (!(c.train_frac > 0.0 && c.train_frac < 1.0)) errs.push_back("train_frac must be in (0,1)");
  if (!(c.val_frac > 0.0 && c.val_frac < 1.0)) errs.push_back("val_frac must be in (0,1)");
  if (c.sig_depth < 1 || c.sig_depth > 4) errs.push_back("sig_depth must be in 1..4");
  if (variant_signature(c.variant) && c.batch < 2)
    errs.push_back("batch must be >= 2 when signature features are on");
  if (c.train_stride < 1 || c.eval_stride < 1) errs.push_back("strides must be >= 1");
  if (c.tkan_depth < 1) errs.push_back("tkan_depth must be >= 1");
  if (c.rkan_sublayers < 1) errs.push_back("rkan_sublayers must be >= 1");
  if (c.kan_grid_intervals < 1) errs.push_back("kan_grid_intervals must be >= 1");
  if (!(c.kan_grid_limit > 0.0)) errs.push_back("kan_grid_limit must be > 0");
  return errs;
}

inline std::string config_to_string(const RunConfig& c) {
  std::ostringstream os;
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
  };
  os << "variant=" << variant_name(c.variant) << "\n";
  os << "profile=" << c.profile << "\n";
  os << "seed=" << c.seed << "\n";
  os << "workers=" << c.workers << "\n";
  os << "lookback=" << c.lookback << "\n";
  os << "sig_lookback=" << c.sig_lookback << "\n";
  os << "horizon=" << c.horizon << "\n";
  os << "d_model=" << c.d_model << "\n";
  os << "heads=" << c.heads << "\n";
  os << "embed_width=" << c.embed_width << "\n";
  os << "sig_depth=" << c.sig_depth << "\n";
  os << "tkan_depth=" << c.tkan_depth << "\n";
  os << "rkan_sublayers=" << c.rkan_sublayers << "\n";
  os << "kan_grid_intervals=" << c.kan_grid_intervals << "\n";
  os << "kan_grid_limit=" << num(c.kan_grid_limit) << "\n";
  os << "median_window=" << c.median_window << "\n";
  os << "median_shift=" << c.median_shift << "\n";
  os << "train_frac=" << num(c.train_frac) << "\n";
  os << "val_frac=" << num(c.val_frac) << "\n";
  os << "train_stride=" << c.train_stride << "\n";
  os << "eval_stride=" << c.eval_stride << "\n";
  os << "window_offset=" << c.window_offset << "\n";
  os << "batch=" << c.batch << "\n";
  os << "epochs=" << c.epochs << "\n";
  os << "lr=" << num(c.lr) << "\n";
  os << "adam_beta1=" << num(c.adam_beta1) << "\n";
  os << "adam_beta2=" << num(c.adam_beta2) << "\n";
  os << "adam_eps=" << num(c.adam_eps) << "\n";
  os << "plateau_patience=" << c.plateau_patience << "\n";
  os << "early_stop_patience=" << c.early_stop_patience << "\n";
  os << "bn_momentum=" << num(c.bn_momentum) << "\n";
  return os.str();
}

}  // namespace vwapsig
