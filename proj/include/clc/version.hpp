#ifndef CLC_VERSION_HPP_
#define CLC_VERSION_HPP_

namespace clc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace clc

#endif  // CLC_VERSION_HPP_
