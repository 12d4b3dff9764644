#pragma once

#include <functional>
#include <string>
#include <vector>

#include "redforge/autodiff.hpp"

namespace redforge::gradcheck {

using autodiff::TensorPtr;

struct FdReport {
    double max_rel_err = 0.0;
    std::string worst_input;
    bool pass = true;
};

// Central finite-difference check of d(f)/d(inputs). f must be scalar-valued
// and deterministic; it is re-evaluated with each input element perturbed in
// place by +/-h. Relative error uses a unit floor so near-zero gradients do
// not blow up the ratio.
FdReport finite_diff_check(const std::function<TensorPtr()>& f, const std::vector<TensorPtr>& inputs,
                           double h = 1e-4, double tol = 1e-6);

struct CheckResult {
    std::string name;
    std::string group;
    double max_rel_err = 0.0;
    bool pass = true;
};

// Named gradient checks, grouped so the CLI can run a subset. Groups in use:
// "autodiff", "losses", "nets".
class Registry {
public:
    using Fn = std::function<double()>;  // returns max relative error

    void add(std::string group, std::string name, Fn fn);
    std::vector<CheckResult> run(const std::string& group, double tol) const;

private:
    struct Entry {
        std::string group, name;
        Fn fn;
    };
    std::vector<Entry> entries_;
};

// Registry with every primitive and composite check used by `grad-check`
// and by the acceptance gradient suite.
Registry standard_registry();

}  // namespace redforge::gradcheck
