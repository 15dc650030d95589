#include "lidarseg/loss.hpp"

#include <algorithm>
#include <cmath>

#include "lidarseg/error.hpp"

namespace lidarseg::training {
namespace {

constexpr double kProbFloor = 1e-12;

template <typename T>
void require_finite(std::span<const T> values, const char* what) {
    for (T v : values)
        if (std::isnan(v)) throw TrainingError(std::string("total_loss: NaN in ") + what);
}

// Computes the loss and, when the gradient pointers are non-null, adds
// scale · dL/d(input) into them.
template <typename T>
LossBreakdown evaluate(const Tensor<T>& labels, const Tensor<T>* velocity, const projection::FrameTruth& truth,
                       const LossWeights& w, T* dlabels, T* dvelocity, double scale) {
    using projection::kBackground;
    using projection::kDefected;
    using projection::kHuman;
    w.validate();
    const auto& lab = truth.labels.labels;
    const std::size_t pixels = lab.size();
    if (labels.rank() != 3 || labels.dim(2) != 2 || labels.dim(0) * labels.dim(1) != pixels)
        throw ConfigError("total_loss: label prediction " + tensorcore::shape_string(labels.shape()) +
                          " does not match a truth of " + std::to_string(pixels) + " pixels");
    if (velocity && velocity->shape() != labels.shape())
        throw ConfigError("total_loss: velocity prediction " + tensorcore::shape_string(velocity->shape()) +
                          " does not match " + tensorcore::shape_string(labels.shape()));
    if (truth.velocity.velocity.size() != 2 * pixels) throw ConfigError("total_loss: truth velocity size mismatch");
    require_finite<T>(labels.data(), "pred_labels");
    if (velocity) require_finite<T>(velocity->data(), "pred_vel");
    require_finite<float>(truth.velocity.velocity, "truth velocity");

    LossBreakdown out;
    double ce = 0.0, vh = 0.0, vb = 0.0;
    const auto p = labels.data();
    for (std::size_t i = 0; i < pixels; ++i) {
        const auto l = lab[i];
        if (l == kDefected) continue;
        if (l != kBackground && l != kHuman) throw ConfigError("total_loss: unknown truth label code");
        ++out.valid_pixels;
        ce -= std::log(std::max<double>(p[2 * i + l], kProbFloor));
        if (!velocity) continue;
        const auto v = velocity->data();
        const double dx = static_cast<double>(v[2 * i]) - truth.velocity.velocity[2 * i];
        const double dy = static_cast<double>(v[2 * i + 1]) - truth.velocity.velocity[2 * i + 1];
        if (l == kHuman) {
            ++out.human_pixels;
            vh += dx * dx + dy * dy;
        } else {
            ++out.background_pixels;
            vb += dx * dx + dy * dy;
        }
    }
    const double nc = static_cast<double>(out.valid_pixels);
    const double nh = static_cast<double>(out.human_pixels);
    const double nb = static_cast<double>(out.background_pixels);
    if (out.valid_pixels) out.ce = ce / nc;
    if (out.human_pixels) out.vel_human = vh / nh;
    if (out.background_pixels) out.vel_background = vb / nb;
    out.total = w.lambda_c * out.ce + w.lambda_h * out.vel_human + w.lambda_b * out.vel_background;

    if (dlabels && out.valid_pixels) {
        for (std::size_t i = 0; i < pixels; ++i) {
            const auto l = lab[i];
            if (l == kDefected) continue;
            const double pi = p[2 * i + l];
            if (pi > kProbFloor) dlabels[2 * i + l] += static_cast<T>(-scale * w.lambda_c / (nc * pi));
        }
    }
    if (dvelocity && velocity) {
        const auto v = velocity->data();
        for (std::size_t i = 0; i < pixels; ++i) {
            const auto l = lab[i];
            if (l == kDefected) continue;
            const double coef = l == kHuman ? 2.0 * w.lambda_h / nh : 2.0 * w.lambda_b / nb;
            for (int k = 0; k < 2; ++k)
                dvelocity[2 * i + k] += static_cast<T>(
                    scale * coef * (static_cast<double>(v[2 * i + k]) - truth.velocity.velocity[2 * i + k]));
        }
    }
    return out;
}

}  // namespace

void LossWeights::validate() const {
    if (!(lambda_c >= 0.0 && lambda_h >= 0.0 && lambda_b >= 0.0))
        throw ConfigError("loss weights must be nonnegative");
}

template <typename T>
LossBreakdown total_loss(const Tensor<T>& labels, const Tensor<T>* velocity, const projection::FrameTruth& truth,
                         const LossWeights& weights) {
    return evaluate<T>(labels, velocity, truth, weights, nullptr, nullptr, 0.0);
}

template <typename T>
Var total_loss(tensorcore::Tape<T>& tape, Var labels, std::optional<Var> velocity,
               const projection::FrameTruth& truth, const LossWeights& weights, LossBreakdown* breakdown) {
    const Tensor<T>* vel = velocity ? &tape.value(*velocity) : nullptr;
    const auto b = evaluate<T>(tape.value(labels), vel, truth, weights, nullptr, nullptr, 0.0);
    if (breakdown) *breakdown = b;
    std::vector<Var> inputs{labels};
    if (velocity) inputs.push_back(*velocity);
    return tape.record(Tensor<T>({1}, static_cast<T>(b.total)), inputs,
                       [labels, velocity, truth, weights](tensorcore::Tape<T>& t, Var self) {
                           const double g = t.grad_ptr(self)[0];
                           const Tensor<T>* vel = velocity ? &t.value(*velocity) : nullptr;
                           T* dv = velocity ? t.grad_ptr(*velocity) : nullptr;
                           evaluate<T>(t.value(labels), vel, truth, weights, t.grad_ptr(labels), dv, g);
                       });
}

template LossBreakdown total_loss<float>(const Tensor<float>&, const Tensor<float>*, const projection::FrameTruth&,
                                         const LossWeights&);
template LossBreakdown total_loss<double>(const Tensor<double>&, const Tensor<double>*,
                                          const projection::FrameTruth&, const LossWeights&);
template Var total_loss<float>(tensorcore::Tape<float>&, Var, std::optional<Var>, const projection::FrameTruth&,
                               const LossWeights&, LossBreakdown*);
template Var total_loss<double>(tensorcore::Tape<double>&, Var, std::optional<Var>, const projection::FrameTruth&,
                                const LossWeights&, LossBreakdown*);

}  // namespace lidarseg::training
