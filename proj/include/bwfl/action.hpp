#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace bwfl {

// Joint device selection and shared bitwidth for one round.
struct Action {
  std::vector<std::uint8_t> u;
  int alpha = 32;

  std::size_t selected_count() const {
    return static_cast<std::size_t>(std::accumulate(u.begin(), u.end(), 0));
  }
  bool operator==(const Action&) const = default;
};

inline std::string selection_string(const Action& a) {
  std::string s;
  s.reserve(a.u.size());
  for (auto b : a.u) s.push_back(b ? '1' : '0');
  return s;
}

}  // namespace bwfl
