#include "nmhebb/tensor.hpp"

#include <cmath>

namespace nmhebb {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename T>
bool all_finite(std::span<const T> v) {
    for (T x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);

}  // namespace nmhebb
