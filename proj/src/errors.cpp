#include "stratify/errors.hpp"

#include <iostream>

namespace stratify {

void stderr_warning(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

}  // namespace stratify
