#include "rcnnlab/prm.hpp"

#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace rcnnlab {

void write_gradnorm_header(std::ostream& os, std::size_t num_heads) {
  os << "step";
  for (std::size_t h = 0; h < num_heads; ++h) os << ",norm_h" << h + 1;
  os << ",norm_sum,cosine\n";
}

void write_gradnorm_row(std::ostream& os, const GradNormRecord& r) {
  fmt::print(os, "{}", r.step);
  for (double n : r.head_norms) fmt::print(os, ",{:.17g}", n);
  fmt::print(os, ",{:.17g},{}\n", r.sum_norm, r.cosine ? fmt::format("{:.17g}", *r.cosine) : std::string());
}

}  // namespace rcnnlab
