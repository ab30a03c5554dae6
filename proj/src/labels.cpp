#include "bvsviz/labels.hpp"

#include <stdexcept>
#include <string>

namespace bvsviz {

ClassLabel label_from_index(int i) {
  if (i < 0 || i >= kNumClasses) {
    throw std::out_of_range("class index " + std::to_string(i) + " out of range");
  }
  return static_cast<ClassLabel>(i);
}

std::string_view to_string(ClassLabel c) {
  switch (c) {
    case ClassLabel::MetalStent: return "metal";
    case ClassLabel::Bvs: return "bvs";
    case ClassLabel::NoDevice: return "none";
  }
  return "?";
}

ClassLabel parse_label(std::string_view s) {
  if (s == "metal" || s == "0") return ClassLabel::MetalStent;
  if (s == "bvs" || s == "1") return ClassLabel::Bvs;
  if (s == "none" || s == "2") return ClassLabel::NoDevice;
  throw std::invalid_argument("unknown class label '" + std::string(s) + "'");
}

}  // namespace bvsviz
