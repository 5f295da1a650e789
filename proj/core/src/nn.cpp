#include "lab/nn.hpp"

#include <cmath>

#include "lab/error.hpp"

namespace lab {

template <class S>
void adam_update(AdamState<S>& state, ParamMap<S>& params,
                 const ParamMap<S>& grads, const AdamConfig& cfg) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const S c1 = static_cast<S>(1.0 - std::pow(cfg.beta1, t));
  const S c2 = static_cast<S>(1.0 - std::pow(cfg.beta2, t));
  const S b1 = static_cast<S>(cfg.beta1);
  const S b2 = static_cast<S>(cfg.beta2);
  const S lr = static_cast<S>(cfg.lr);
  const S eps = static_cast<S>(cfg.eps);
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    require(it != params.end(), Errc::ShapeMismatch, "adam: gradient for unknown parameter " + name);
    Mat<S>& p = it->second;
    require(p.rows() == g.rows() && p.cols() == g.cols(), Errc::ShapeMismatch,
            "adam: gradient shape differs for " + name);
    auto [mit, fresh_m] = state.m.try_emplace(name, Mat<S>::Zero(p.rows(), p.cols()));
    auto [vit, fresh_v] = state.v.try_emplace(name, Mat<S>::Zero(p.rows(), p.cols()));
    auto m = mit->second.array();
    auto v = vit->second.array();
    m = b1 * m + (S(1) - b1) * g.array();
    v = b2 * v + (S(1) - b2) * g.array().square();
    p.array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

template <class S>
double clip_global_norm(ParamMap<S>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) sq += static_cast<double>(g.squaredNorm());
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const S f = static_cast<S>(max_norm / norm);
    for (auto& [_, g] : grads) g *= f;
  }
  return norm;
}

template void adam_update(AdamState<float>&, ParamMap<float>&, const ParamMap<float>&, const AdamConfig&);
template void adam_update(AdamState<double>&, ParamMap<double>&, const ParamMap<double>&, const AdamConfig&);
template double clip_global_norm(ParamMap<float>&, double);
template double clip_global_norm(ParamMap<double>&, double);

}  // namespace lab
