#pragma once

// Central finite-difference gradient checking, double precision. Modules
// expose parameters through their visit() hooks; the harness perturbs every
// entry and compares against the analytic gradient filled in by one backward
// pass.

#include <functional>
#include <string>
#include <vector>

#include "doctest.h"

namespace gradcheck {

struct ParamSlot {
    std::string name;
    std::vector<double>* w;
    std::vector<double>* g;
};

// relative error with an absolute floor so near-zero gradients compare sanely
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// loss() must rerun the full forward pass from current parameter values.
inline void check_params(std::vector<ParamSlot> slots, const std::function<double()>& loss,
                         double tol = 1e-4, double h = 1e-5) {
    for (auto& s : slots) {
        for (size_t i = 0; i < s.w->size(); i++) {
            double saved = (*s.w)[i];
            (*s.w)[i] = saved + h;
            double up = loss();
            (*s.w)[i] = saved - h;
            double dn = loss();
            (*s.w)[i] = saved;
            double fd = (up - dn) / (2 * h);
            double an = (*s.g)[i];
            INFO(s.name, "[", i, "] analytic=", an, " fd=", fd);
            CHECK(rel_err(an, fd) < tol);
        }
    }
}

// same treatment for an input buffer whose analytic gradient was accumulated
inline void check_input(std::vector<double>& x, const std::vector<double>& dx,
                        const std::function<double()>& loss, const std::string& label,
                        double tol = 1e-4, double h = 1e-5) {
    for (size_t i = 0; i < x.size(); i++) {
        double saved = x[i];
        x[i] = saved + h;
        double up = loss();
        x[i] = saved - h;
        double dn = loss();
        x[i] = saved;
        double fd = (up - dn) / (2 * h);
        INFO(label, "[", i, "] analytic=", dx[i], " fd=", fd);
        CHECK(rel_err(dx[i], fd) < tol);
    }
}

}  // namespace gradcheck
