// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace wmoe {

// Error taxonomy shared across modules. The CLI maps these onto exit codes:
// usage/config/data problems exit with 2, numeric failures with 3.
struct dim_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct contract_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct protocol_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace wmoe
