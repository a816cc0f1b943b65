// Copyright (c) 2026 the beyond authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace beyond {

// Domain error carrying the owning module and a short machine-readable kind.
// The CLI renders these as "error:<module>:<kind>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string module, std::string kind, const std::string& message)
      : std::runtime_error("error:" + module + ":" + kind + ": " + message),
        module_(std::move(module)),
        kind_(std::move(kind)),
        message_(message) {}

  const std::string& module() const { return module_; }
  const std::string& kind() const { return kind_; }
  const std::string& message() const { return message_; }

 private:
  std::string module_;
  std::string kind_;
  std::string message_;
};

}  // namespace beyond
