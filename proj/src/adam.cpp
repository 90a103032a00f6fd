#include "mrgr/adam.hpp"

#include <cmath>

#include "mrgr/errors.hpp"

namespace mrgr {

void AdamState::init(const std::vector<Tensor*>& params, AdamConfig cfg_in) {
    cfg = cfg_in;
    step = 0;
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Tensor* p : params) {
        m.emplace_back(p->shape());
        v.emplace_back(p->shape());
    }
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state) {
    if (params.size() != state.m.size() || params.size() != grads.size()) {
        throw ShapeError("adam_step: params/grads/state sizes disagree");
    }
    state.step += 1;
    const double b1 = state.cfg.beta1;
    const double b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = grads[k];
        if (!p.same_shape(g) || !p.same_shape(state.m[k])) {
            throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(k));
        }
        if (!g.all_finite()) throw NumericError("adam_step: non-finite gradient");
        double* pd = p.data();
        const double* gd = g.data();
        double* md = state.m[k].data();
        double* vd = state.v[k].data();
        for (int64_t i = 0; i < p.size(); ++i) {
            md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
            vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
            const double mhat = md[i] / bc1;
            const double vhat = vd[i] / bc2;
            pd[i] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
        }
    }
}

} // namespace mrgr
