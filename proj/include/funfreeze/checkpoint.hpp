#pragma once

#include <iosfwd>
#include <string>

#include "funfreeze/model.hpp"

namespace funfreeze {

// Text checkpoint format, one tensor per "tensor" stanza. Values are written
// as C hexfloats so save -> load -> save reproduces the file byte for byte.
//
//   funfreeze-checkpoint v1
//   layers <L> hidden <h> classes <C> bottleneck <r>
//   tensor <name> <rank> <dim...>
//   <one row of hexfloat values per line>
//   ...

void save_checkpoint(std::ostream& out, const AdapterStack& stack);
void save_checkpoint(const std::string& path, const AdapterStack& stack);

AdapterStack load_checkpoint(std::istream& in);
AdapterStack load_checkpoint(const std::string& path);

}  // namespace funfreeze
