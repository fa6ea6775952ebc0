#pragma once

#include <compare>
#include <ostream>
#include <string>

namespace mordal {

// One (vision encoder, language model) combination.
struct Candidate {
  std::string ve;
  std::string llm;

  auto operator<=>(const Candidate&) const = default;
  bool operator==(const Candidate&) const = default;

  std::string id() const { return ve + "__" + llm; }
};

inline std::ostream& operator<<(std::ostream& os, const Candidate& c) { return os << c.id(); }

}  // namespace mordal
