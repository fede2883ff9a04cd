#pragma once

#include <functional>
#include <string>
#include <vector>

namespace hsfno {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

/// Deliberate defects for exercising the failure path of the suite.
struct VerifyOptions {
    std::vector<std::string> inject_faults;   // names of checks to corrupt, e.g. "gradient"

    bool faulty(const std::string& check) const;
};

struct VerifyCheck {
    std::string name;
    int criterion = 0;   // acceptance criterion the check backs
    std::string summary;
    std::function<CheckResult(const VerifyOptions&)> run;
};

/// Every named property check, in a fixed order.
const std::vector<VerifyCheck>& verify_checks();

/// Runs the checks whose name contains any of `filters` (all when empty).
/// Throws std::invalid_argument when a filter matches nothing.
std::vector<CheckResult> run_verify(const std::vector<std::string>& filters, const VerifyOptions& opts = {});

CheckResult run_check(const std::string& name, const VerifyOptions& opts = {});

}  // namespace hsfno
