#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "scfsgl/tensor.hpp"

namespace scfsgl {

// Shortest decimal string that round-trips the exact f64 value.
std::string fmt_double(double v);
double parse_double(const std::string& s);

// Named-tensor checkpoint: per tensor a header line `name ndim d1 d2 ...`,
// one line of space-separated values, tensors separated by blank lines.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_checkpoint(std::ostream& os, const NamedTensors& tensors);
void write_checkpoint_file(const std::string& path, const NamedTensors& tensors);
NamedTensors read_checkpoint(std::istream& is);
NamedTensors read_checkpoint_file(const std::string& path);

const Tensor* find_tensor(const NamedTensors& tensors, const std::string& name);

}  // namespace scfsgl
