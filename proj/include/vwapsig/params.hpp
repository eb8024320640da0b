#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vwapsig/rng.hpp"
#include "vwapsig/tape.hpp"
#include "vwapsig/tensor.hpp"

namespace vwapsig {

// Single home of every learnable array: value, gradient slot and Adam
// moments, addressed by stable name. Non-trainable entries (batch-norm
// running stats) are persisted but skipped by the optimizer.
class ParameterStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
    Tensor m;  // first moment
    Tensor s;  // second moment
    bool trainable = true;
  };

  Tensor& add(const std::string& name, Tensor init, bool trainable = true) {
    if (entries_.count(name)) throw std::invalid_argument("param exists: " + name);
    Entry e;
    e.grad = Tensor(init.rows(), init.cols());
    e.m = Tensor(init.rows(), init.cols());
    e.s = Tensor(init.rows(), init.cols());
    e.value = std::move(init);
    e.trainable = trainable;
    order_.push_back(name);
    return entries_.emplace(name, std::move(e)).first->second.value;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor& value(const std::string& name) { return at(name).value; }
  const Tensor& value(const std::string& name) const { return at(name).value; }
  Tensor& grad(const std::string& name) { return at(name).grad; }
  Entry& entry(const std::string& name) { return at(name); }
  const std::vector<std::string>& names() const { return order_; }

  void zero_grad() {
    for (auto& name : order_) {
      Tensor& g = entries_.at(name).grad;
      std::fill(g.v.begin(), g.v.end(), 0.0);
    }
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (auto& name : order_) n += entries_.at(name).value.size();
    return n;
  }

  // ---- tape binding -----------------------------------------------------

  // Leaf on the tape for a named parameter. collect_grads() later adds the
  // tape gradients back into the store slots.
  Var use(Tape& t, const std::string& name) {
    Var v = t.leaf(value(name), true);
    bound_.emplace_back(v, name);
    return v;
  }

  void collect_grads(Tape& t) {
    for (auto& [var, name] : bound_) {
      const Tensor& g = t.grad(var);
      Tensor& dst = entries_.at(name).grad;
      for (std::size_t i = 0; i < dst.size(); ++i) dst.v[i] += g.v[i];
    }
    bound_.clear();
  }

  void drop_bindings() { bound_.clear(); }

  // ---- optimizer --------------------------------------------------------

  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (auto& name : order_) {
      Entry& e = entries_.at(name);
      if (!e.trainable) continue;
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = e.grad.v[i];
        e.m.v[i] = beta1 * e.m.v[i] + (1.0 - beta1) * g;
        e.s.v[i] = beta2 * e.s.v[i] + (1.0 - beta2) * g * g;
        const double mhat = e.m.v[i] / bc1;
        const double shat = e.s.v[i] / bc2;
        e.value.v[i] -= lr * mhat / (std::sqrt(shat) + eps);
      }
    }
  }

  std::uint64_t adam_steps() const { return step_; }

  // ---- serialization ----------------------------------------------------
  // manifest: versioned header then one line per tensor
  //   <name> rows=<r> cols=<c> offset=<o> count=<n> trainable=<0|1>
  // blob: flat little-endian IEEE-754 doubles at the stated offsets

  static constexpr const char* kFormatVersion = "vwapsig-params v1";

  void save(const std::string& manifest_path, const std::string& blob_path) const {
    std::ofstream mf(manifest_path, std::ios::trunc);
    if (!mf) throw std::runtime_error("cannot write " + manifest_path);
    std::ofstream bf(blob_path, std::ios::trunc | std::ios::binary);
    if (!bf) throw std::runtime_error("cannot write " + blob_path);
    mf << kFormatVersion << "\n";
    std::size_t off = 0;
    for (auto& name : order_) {
      const Entry& e = entries_.at(name);
      mf << name << " rows=" << e.value.rows() << " cols=" << e.value.cols()
         << " offset=" << off << " count=" << e.value.size()
         << " trainable=" << (e.trainable ? 1 : 0) << "\n";
      write_le(bf, e.value.v);
      off += e.value.size();
    }
  }

  static ParameterStore load(const std::string& manifest_path, const std::string& blob_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot read " + manifest_path);
    std::string header;
    std::getline(mf, header);
    if (header != kFormatVersion)
      throw std::runtime_error("bad checkpoint header: '" + header + "'");
    std::ifstream bf(blob_path, std::ios::binary);
    if (!bf) throw std::runtime_error("cannot read " + blob_path);
    ParameterStore st;
    std::string line;
    while (std::getline(mf, line)) {
      if (line.empty()) continue;
      std::istringstream is(line);
      std::string name;
      is >> name;
      std::size_t r = 0, c = 0, off = 0, cnt = 0;
      int tr = 1;
      std::string tok;
      while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw std::runtime_error("bad manifest line: " + line);
        const std::string key = tok.substr(0, eq);
        const std::string val = tok.substr(eq + 1);
        if (key == "rows") r = std::stoull(val);
        else if (key == "cols") c = std::stoull(val);
        else if (key == "offset") off = std::stoull(val);
        else if (key == "count") cnt = std::stoull(val);
        else if (key == "trainable") tr = std::stoi(val);
        else throw std::runtime_error("bad manifest key: " + key);
      }
      if (cnt != r * c) throw std::runtime_error("manifest count mismatch for " + name);
      Tensor t(r, c);
      bf.seekg(static_cast<std::streamoff>(off * sizeof(double)));
      read_le(bf, t.v);
      if (!bf) throw std::runtime_error("blob truncated at " + name);
      st.add(name, std::move(t), tr != 0);
    }
    return st;
  }

  bool same_shapes(const ParameterStore& o) const {
    if (order_ != o.order_) return false;
    for (auto& name : order_)
      if (!entries_.at(name).value.same_shape(o.entries_.at(name).value)) return false;
    return true;
  }

  void copy_values_from(const ParameterStore& o) {
    if (!same_shapes(o)) throw std::invalid_argument("parameter store shape mismatch");
    for (auto& name : order_) entries_.at(name).value = o.entries_.at(name).value;
  }

 private:
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
  std::vector<std::pair<Var, std::string>> bound_;
  std::uint64_t step_ = 0;

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no such param: " + name);
    return it->second;
  }
  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("no such param: " + name);
    return it->second;
  }

  static void write_le(std::ofstream& f, const std::vector<double>& xs) {
    for (double x : xs) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &x, sizeof(bits));
      if constexpr (std::endian::native == std::endian::big) bits = byteswap64(bits);
      char buf[8];
      std::memcpy(buf, &bits, 8);
      f.write(buf, 8);
    }
  }

  static void read_le(std::ifstream& f, std::vector<double>& xs) {
    for (double& x : xs) {
      char buf[8];
      f.read(buf, 8);
      std::uint64_t bits = 0;
      std::memcpy(&bits, buf, 8);
      if constexpr (std::endian::native == std::endian::big) bits = byteswap64(bits);
      std::memcpy(&x, &bits, sizeof(x));
    }
  }

  static std::uint64_t byteswap64(std::uint64_t x) {
    x = ((x & 0x00000000FFFFFFFFull) << 32) | ((x & 0xFFFFFFFF00000000ull) >> 32);
    x = ((x & 0x0000FFFF0000FFFFull) << 16) | ((x & 0xFFFF0000FFFF0000ull) >> 16);
    x = ((x & 0x00FF00FF00FF00FFull) << 8) | ((x & 0xFF00FF00FF00FF00ull) >> 8);
    return x;
  }
};

// ---- initialization policy ----------------------------------------------

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t r,
                             std::size_t c, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(r, c);
  for (double& x : t.v) x = rng.uniform(-a, a);
  return t;
}

// recurrent matrices: rows roughly unit-norm via scaled uniform
inline Tensor recurrent_uniform(std::size_t n_rows, std::size_t n_cols, Rng& rng) {
  const double a = std::sqrt(3.0 / static_cast<double>(n_cols));
  Tensor t(n_rows, n_cols);
  for (double& x : t.v) x = rng.uniform(-a, a);
  return t;
}

}  // namespace vwapsig
