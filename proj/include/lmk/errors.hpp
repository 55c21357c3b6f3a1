#pragma once

#include <stdexcept>
#include <string>

namespace lmk {

/// Invalid or inconsistent input data (bad counts, infeasible constraints,
/// malformed files). Maps to CLI exit code 2.
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Optimizer failed to produce a usable result. Maps to CLI exit code 3.
class convergence_error : public std::runtime_error {
public:
    explicit convergence_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration (unknown names, out-of-range settings). Exit code 4.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A transition builder was evaluated outside its numeric domain,
/// e.g. an exponent overflow in a logit term.
class builder_domain_error : public std::runtime_error {
public:
    explicit builder_domain_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace lmk
