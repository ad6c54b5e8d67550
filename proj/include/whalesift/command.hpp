#pragma once

#include <map>
#include <string>

#include "whalesift/error.hpp"

namespace whalesift {

class CommandError : public Error {
public:
    using Error::Error;
};

/// Replaces each `{name}` in `tmpl` with the shell-quoted value from `vars`.
/// An unknown placeholder is an error so typos in configs fail early.
std::string expand_command(const std::string& tmpl, const std::map<std::string, std::string>& vars);

/// Runs through /bin/sh; returns the exit status (or 128 + signal).
int run_command(const std::string& command);

std::string shell_quote(const std::string& value);

}  // namespace whalesift
