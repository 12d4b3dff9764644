#include "redforge/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace redforge::gradcheck {

FdReport finite_diff_check(const std::function<TensorPtr()>& f, const std::vector<TensorPtr>& inputs,
                           double h, double tol) {
    for (const auto& in : inputs) in->zero_grad();
    auto out = f();
    if (!out->is_scalar()) throw std::runtime_error("finite_diff_check: function must be scalar-valued");
    autodiff::backward(out);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& in : inputs) {
        in->ensure_grad();
        analytic.push_back(in->grad);
    }

    FdReport report;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto& x = inputs[t]->values;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double orig = x[i];
            x[i] = orig + h;
            const double fp = f()->scalar();
            x[i] = orig - h;
            const double fm = f()->scalar();
            x[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[t][i];
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_input = "input " + std::to_string(t) + "[" + std::to_string(i) + "]";
            }
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

void Registry::add(std::string group, std::string name, Fn fn) {
    entries_.push_back({std::move(group), std::move(name), std::move(fn)});
}

std::vector<CheckResult> Registry::run(const std::string& group, double tol) const {
    std::vector<CheckResult> out;
    for (const auto& e : entries_) {
        if (group != "all" && e.group != group) continue;
        CheckResult r;
        r.name = e.name;
        r.group = e.group;
        r.max_rel_err = e.fn();
        r.pass = r.max_rel_err < tol;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace redforge::gradcheck
