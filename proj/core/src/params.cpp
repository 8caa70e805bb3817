#include "mstdp/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace mstdp {

Tensor& ParameterStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  auto [it, inserted] = entries_.try_emplace(name);
  if (!inserted) throw ContractError("params: duplicate parameter " + name);
  Entry& e = it->second;
  e.value = Tensor::Zero(rows, cols);
  e.grad = Tensor::Zero(rows, cols);
  e.m = Tensor::Zero(rows, cols);
  e.v = Tensor::Zero(rows, cols);
  return e.value;
}

bool ParameterStore::has(const std::string& name) const { return entries_.count(name) > 0; }

ParameterStore::Entry& ParameterStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("params: unknown parameter " + name);
  return it->second;
}

const ParameterStore::Entry& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("params: unknown parameter " + name);
  return it->second;
}

Tensor& ParameterStore::value(const std::string& name) { return at(name).value; }
const Tensor& ParameterStore::value(const std::string& name) const { return at(name).value; }
Tensor& ParameterStore::grad(const std::string& name) { return at(name).grad; }

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& [name, e] : entries_) e.grad.setZero();
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& [name, e] : entries_) sq += e.grad.squaredNorm();
  return std::sqrt(sq);
}

void ParameterStore::scale_grads(double factor) {
  for (auto& [name, e] : entries_) e.grad *= factor;
}

void ParameterStore::adam_step(const AdamConfig& cfg) {
  ++adam_t_;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t_));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t_));
  for (auto& [name, e] : entries_) {
    e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * e.grad;
    e.v = cfg.beta2 * e.v.array().matrix() +
          (1.0 - cfg.beta2) * e.grad.array().square().matrix();
    Tensor m_hat = e.m / bc1;
    Tensor v_hat = e.v / bc2;
    e.value.array() -= cfg.lr * m_hat.array() / (v_hat.array().sqrt() + cfg.eps);
  }
}

namespace {

constexpr char kMagic[8] = {'M', 'S', 'T', 'D', 'P', 'C', 'K', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw ContractError("checkpoint: truncated file");
  return v;
}

void write_str(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& in, std::uint64_t max_len = 1ULL << 30) {
  std::uint64_t len = read_u64(in);
  if (len > max_len) throw ContractError("checkpoint: implausible string length");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw ContractError("checkpoint: truncated file");
  return s;
}

} // namespace

void save_params(const ParameterStore& store, const std::string& config_text,
                 const std::string& meta_text, const std::filesystem::path& file) {
  std::filesystem::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ContractError("checkpoint: cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    write_str(out, config_text);
    write_str(out, meta_text);
    auto names = store.names();
    write_u64(out, names.size());
    for (const auto& name : names) {
      const Tensor& t = store.value(name);
      write_str(out, name);
      write_u64(out, static_cast<std::uint64_t>(t.rows()));
      write_u64(out, static_cast<std::uint64_t>(t.cols()));
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
    }
    if (!out) throw ContractError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

LoadedParams load_params(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ContractError("checkpoint: cannot open " + file.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ContractError("checkpoint: bad magic in " + file.string());
  LoadedParams out;
  out.config_text = read_str(in);
  out.meta_text = read_str(in);
  std::uint64_t n = read_u64(in);
  if (n > 1'000'000) throw ContractError("checkpoint: implausible tensor count");
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = read_str(in, 4096);
    auto rows = static_cast<Eigen::Index>(read_u64(in));
    auto cols = static_cast<Eigen::Index>(read_u64(in));
    if (rows < 0 || cols < 0 || rows * cols > (1LL << 28))
      throw ContractError("checkpoint: implausible tensor shape");
    Tensor& t = out.store.create(name, rows, cols);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
    if (!in) throw ContractError("checkpoint: truncated tensor data");
  }
  return out;
}

GradCheckResult grad_check(const std::function<double(bool)>& loss, ParameterStore& store,
                           double eps) {
  store.zero_grads();
  loss(true);
  std::map<std::string, Tensor> analytic;
  for (const auto& name : store.names()) analytic[name] = store.grad(name);

  GradCheckResult result;
  for (const auto& name : store.names()) {
    Tensor& t = store.value(name);
    const Tensor& a = analytic[name];
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        double saved = t(r, c);
        t(r, c) = saved + eps;
        double up = loss(false);
        t(r, c) = saved - eps;
        double down = loss(false);
        t(r, c) = saved;
        double numeric = (up - down) / (2.0 * eps);
        double ana = a(r, c);
        double rel = std::abs(ana - numeric) /
                     std::max({1.0, std::abs(ana), std::abs(numeric)});
        if (rel > result.max_rel_err) {
          result.max_rel_err = rel;
          result.worst_param = name;
          result.worst_row = r;
          result.worst_col = c;
          result.analytic = ana;
          result.numeric = numeric;
        }
      }
    }
  }
  return result;
}

} // namespace mstdp
