#include "rcnnlab/checkpoint.hpp"

#include <cstdlib>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace rcnnlab {

namespace {

constexpr const char* kMagic = "rcnnlab-checkpoint";
constexpr int kVersion = 1;

double read_hex(std::istream& is, const std::string& section) {
  std::string tok;
  if (!(is >> tok)) throw std::runtime_error("checkpoint: truncated section " + section);
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) throw std::runtime_error("checkpoint: bad value '" + tok + "' in " + section);
  return v;
}

template <typename Array>
void read_array(std::istream& is, const std::string& expected, Array& a) {
  std::string header;
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> header >> rows >> cols)) throw std::runtime_error("checkpoint: missing section " + expected);
  if (header != "[" + expected + "]")
    throw std::runtime_error("checkpoint: expected section [" + expected + "], found " + header);
  if (rows < 0 || cols < 0) throw std::runtime_error("checkpoint: negative shape in " + expected);
  if constexpr (Array::RowsAtCompileTime == 1) {
    if (rows != 1) throw std::runtime_error("checkpoint: " + expected + " must have one row");
    a.resize(cols);
  } else {
    a.resize(rows, cols);
  }
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) a(r, c) = read_hex(is, expected);
}

}  // namespace

void save_checkpoint(std::ostream& os, const NetworkParams<double>& params) {
  fmt::print(os, "{} {}\nheads {}\n", kMagic, kVersion, params.heads.size());
  params.visit([&](const std::string& name, const auto& a) {
    fmt::print(os, "[{}] {} {}\n", name, a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      for (Eigen::Index c = 0; c < a.cols(); ++c) fmt::print(os, c ? " {:a}" : "{:a}", a(r, c));
      os << '\n';
    }
  });
}

NetworkParams<double> load_checkpoint(std::istream& is) {
  std::string magic, heads_tag;
  int version = 0;
  std::size_t heads = 0;
  if (!(is >> magic >> version) || magic != kMagic) throw std::runtime_error("checkpoint: bad header");
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  if (!(is >> heads_tag >> heads) || heads_tag != "heads") throw std::runtime_error("checkpoint: missing head count");
  NetworkParams<double> p;
  p.heads.resize(heads);
  p.visit([&](const std::string& name, auto& a) { read_array(is, name, a); });
  return p;
}

}  // namespace rcnnlab
