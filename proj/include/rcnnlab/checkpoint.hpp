#pragma once

#include <iosfwd>

#include "rcnnlab/net.hpp"

namespace rcnnlab {

// Structured-text parameter dump. One named section per array:
//
//   rcnnlab-checkpoint 1
//   heads <K>
//   [backbone.weight] <rows> <cols>
//   <row 0 as hex floats>
//   ...
//   [head0.shared_weight] <rows> <cols>
//   ...
//
// Values are hex floats, so load(save(p)) reproduces p bit for bit.
void save_checkpoint(std::ostream& os, const NetworkParams<double>& params);
NetworkParams<double> load_checkpoint(std::istream& is);

}  // namespace rcnnlab
