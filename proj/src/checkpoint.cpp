#include "scfsgl/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace scfsgl {

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

void write_checkpoint(std::ostream& os, const NamedTensors& tensors) {
  bool first = true;
  for (const auto& [name, t] : tensors) {
    if (!first) os << "\n";
    first = false;
    os << name << " " << t.ndim();
    for (int64_t d : t.shape()) os << " " << d;
    os << "\n";
    for (int64_t i = 0; i < t.numel(); ++i) {
      if (i) os << " ";
      os << fmt_double(t[i]);
    }
    os << "\n";
  }
}

void write_checkpoint_file(const std::string& path, const NamedTensors& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  write_checkpoint(f, tensors);
  if (!f) throw std::runtime_error("write failed: " + path);
}

NamedTensors read_checkpoint(std::istream& is) {
  NamedTensors out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream hs(line);
    std::string name;
    int64_t ndim = -1;
    hs >> name >> ndim;
    if (name.empty() || ndim < 0) throw std::runtime_error("bad tensor header: '" + line + "'");
    std::vector<int64_t> shape(static_cast<size_t>(ndim));
    for (auto& d : shape) {
      if (!(hs >> d)) throw std::runtime_error("bad tensor header: '" + line + "'");
    }
    if (!std::getline(is, line))
      throw std::runtime_error("missing values for tensor '" + name + "'");
    std::istringstream vs(line);
    std::vector<double> data;
    data.reserve(static_cast<size_t>(Tensor::numel_of(shape)));
    std::string tok;
    while (vs >> tok) data.push_back(parse_double(tok));
    out.emplace_back(name, Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

NamedTensors read_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return read_checkpoint(f);
}

const Tensor* find_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

}  // namespace scfsgl
