#pragma once

#include <stdexcept>
#include <string>

namespace wav2pix {

// Runtime contract check; throws on violation.
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace wav2pix
