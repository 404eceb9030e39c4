#pragma once

#include "nlreg/core.hpp"

#include <span>
#include <string_view>

namespace nlreg {

/// Statically registered nonlinearities. Ids are used verbatim on the command
/// line and in config files: identity, 2x+cos(x), 10x+cos(2x), 10x+cos(3x),
/// 10x+cos(4x).
std::span<const NonlinearFunction> registered_functions();

/// Throws UnknownFunctionError for ids that are not registered.
const NonlinearFunction& get_function(std::string_view id);

}  // namespace nlreg
