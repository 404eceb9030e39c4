#include "nlreg/funcs.hpp"
#include "nlreg/errors.hpp"

#include <array>
#include <string>

namespace nlreg {

namespace {

const std::array<NonlinearFunction, 5>& registry() {
  static const std::array<NonlinearFunction, 5> entries{
      NonlinearFunction::identity(),
      NonlinearFunction::linear_plus_cosine("2x+cos(x)", 2.0, 1),
      NonlinearFunction::linear_plus_cosine("10x+cos(2x)", 10.0, 2),
      NonlinearFunction::linear_plus_cosine("10x+cos(3x)", 10.0, 3),
      NonlinearFunction::linear_plus_cosine("10x+cos(4x)", 10.0, 4),
  };
  return entries;
}

}  // namespace

std::span<const NonlinearFunction> registered_functions() { return registry(); }

const NonlinearFunction& get_function(std::string_view id) {
  for (const auto& f : registry())
    if (f.id() == id) return f;
  std::string known;
  for (const auto& f : registry()) known += (known.empty() ? "" : ", ") + f.id();
  throw UnknownFunctionError("unknown function id '" + std::string(id) + "' (known: " + known + ")");
}

}  // namespace nlreg
