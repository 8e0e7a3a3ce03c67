#include "ipart/tensor.hpp"

namespace ipart {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_same_shape(const Shape& a, const Shape& b, const char* where) {
  if (a != b) {
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + shape_string(a) + " vs " +
                                shape_string(b));
  }
}

}  // namespace ipart
