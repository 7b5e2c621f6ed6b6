#pragma once

// Central-finite-difference oracle for reverse-mode gradients. Run models in
// double precision when using this; float rounding swamps the h^2 term.

#include <cmath>
#include <functional>
#include <vector>

#include "tinydpm/ops.hpp"
#include "tinydpm/tensor.hpp"

namespace tinydpm {

// f maps the current contents of x to a scalar tensor. Returns the max over
// coordinates of |autodiff - centraldiff| / (|centraldiff| + 1e-12).
template <class T>
double finite_diff_check(const std::function<TensorT<T>()>& f, TensorT<T>& x,
                         double h = 1e-5) {
    x.zero_grad();
    bool was_leafed = x.requires_grad();
    if (!was_leafed) x.set_requires_grad(true);
    TensorT<T> out = f();
    if (!out.all_finite()) throw NumericError("finite_diff_check: non-finite f(x)");
    backward(out);
    std::vector<T> ad = x.grad();

    double worst = 0;
    NoGradGuard ng;
    for (size_t i = 0; i < x.data().size(); ++i) {
        T keep = x.data()[i];
        x.data()[i] = static_cast<T>(static_cast<double>(keep) + h);
        double fp = static_cast<double>(f().item());
        x.data()[i] = static_cast<T>(static_cast<double>(keep) - h);
        double fm = static_cast<double>(f().item());
        x.data()[i] = keep;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_check: non-finite f(x +/- h)");
        double cd = (fp - fm) / (2.0 * h);
        double err = std::abs(static_cast<double>(ad[i]) - cd) / (std::abs(cd) + 1e-12);
        worst = std::max(worst, err);
    }
    if (!was_leafed) x.set_requires_grad(false);
    return worst;
}

}  // namespace tinydpm
