#include "ota/error.hpp"

namespace ota {

int exit_code(const std::exception& e) noexcept {
  if (dynamic_cast<const NumericalError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const IoError*>(&e) != nullptr) return 3;
  return 1;
}

}  // namespace ota
