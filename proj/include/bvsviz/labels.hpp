#pragma once

#include <array>
#include <string>
#include <string_view>

namespace bvsviz {

/// Image-level device class. The integer values are persisted.
enum class ClassLabel : int { MetalStent = 0, Bvs = 1, NoDevice = 2 };

inline constexpr int kNumClasses = 3;
inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::MetalStent, ClassLabel::Bvs, ClassLabel::NoDevice};

inline int to_index(ClassLabel c) { return static_cast<int>(c); }
ClassLabel label_from_index(int i);

std::string_view to_string(ClassLabel c);
/// Accepts "metal", "bvs", "none" and the integer codes.
ClassLabel parse_label(std::string_view s);

}  // namespace bvsviz
