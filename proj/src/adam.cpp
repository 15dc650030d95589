#include "lidarseg/adam.hpp"

#include <cmath>

#include "lidarseg/error.hpp"

namespace lidarseg::tensorcore {

AdamState AdamState::for_params(const TensorMap<float>& params, float learning_rate) {
    AdamState s;
    s.learning_rate = learning_rate;
    for (const auto& [name, p] : params) {
        s.first_moment.emplace(name, Tensor<float>(p.shape()));
        s.second_moment.emplace(name, Tensor<float>(p.shape()));
    }
    return s;
}

void adam_step(TensorMap<float>& params, const TensorMap<float>& grads, AdamState& state, double lr_scale) {
    for (const auto& [name, p] : params) {
        auto g = grads.find(name);
        if (g == grads.end()) throw TrainingError("adam_step: missing gradient for parameter '" + name + "'");
        if (g->second.shape() != p.shape())
            throw TrainingError("adam_step: gradient for '" + name + "' has shape " + shape_string(g->second.shape()) +
                                ", parameter has " + shape_string(p.shape()));
        auto m = state.first_moment.find(name);
        auto v = state.second_moment.find(name);
        if (m == state.first_moment.end() || v == state.second_moment.end() || m->second.shape() != p.shape() ||
            v->second.shape() != p.shape())
            throw TrainingError("adam_step: optimizer state does not match parameter '" + name + "'");
    }
    for (const auto& [name, g] : grads)
        if (!params.contains(name)) throw TrainingError("adam_step: gradient for unknown parameter '" + name + "'");

    const double t = static_cast<double>(state.step + 1);
    const double b1 = state.beta1, b2 = state.beta2, eps = state.epsilon;
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    const double lr = static_cast<double>(state.learning_rate) * lr_scale;

    for (auto& [name, p] : params) {
        const auto gd = grads.at(name).data();
        auto md = state.first_moment.at(name).data();
        auto vd = state.second_moment.at(name).data();
        auto pd = p.data();
        for (std::size_t i = 0; i < pd.size(); ++i) {
            const double gi = gd[i];
            const double mi = b1 * md[i] + (1.0 - b1) * gi;
            const double vi = b2 * vd[i] + (1.0 - b2) * gi * gi;
            md[i] = static_cast<float>(mi);
            vd[i] = static_cast<float>(vi);
            const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
            pd[i] = static_cast<float>(pd[i] - update);
        }
    }
    ++state.step;
}

}  // namespace lidarseg::tensorcore
