#ifndef TIMEDART_VERSION_HPP
#define TIMEDART_VERSION_HPP

namespace timedart {

inline constexpr const char* kVersionString = "timedart-0.1.0";

} // namespace timedart

#endif // TIMEDART_VERSION_HPP
