#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "lab/ad.hpp"

namespace lab {

/// Named parameter tensors. Ordered by name so iteration (and therefore
/// serialization and optimizer updates) is deterministic.
template <class S>
using ParamMap = std::map<std::string, Mat<S>>;

template <class To, class From>
ParamMap<To> cast_params(const ParamMap<From>& in) {
  ParamMap<To> out;
  for (const auto& [name, m] : in) out.emplace(name, m.template cast<To>());
  return out;
}

/// Parameters registered on a tape, addressable by name.
template <class S>
class Bound {
 public:
  Bound(ad::Tape<S>& tape, const ParamMap<S>& params, bool trainable,
        const std::string& prefix = "") {
    for (const auto& [name, m] : params)
      vars_.emplace(prefix + name, trainable ? tape.param(m) : tape.constant(m));
  }

  ad::Var<S> operator()(const std::string& name) const;

  /// Gradients for every bound parameter; zeros where nothing flowed.
  ParamMap<S> grads(const std::string& prefix = "") const;

  const std::map<std::string, ad::Var<S>>& vars() const { return vars_; }

 private:
  std::map<std::string, ad::Var<S>> vars_;
};

template <class S>
ad::Var<S> Bound<S>::operator()(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("unbound parameter " + name);
  return it->second;
}

template <class S>
ParamMap<S> Bound<S>::grads(const std::string& prefix) const {
  ParamMap<S> out;
  for (const auto& [name, v] : vars_) {
    if (name.rfind(prefix, 0) != 0) continue;
    const auto& g = v.grad();
    out.emplace(name.substr(prefix.size()),
                g.size() ? g : Mat<S>::Zero(v.rows(), v.cols()));
  }
  return out;
}

struct AdamConfig {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
struct AdamState {
  std::int64_t step = 0;
  ParamMap<S> m;
  ParamMap<S> v;
};

/// One bias-corrected Adam step. Every gradient must name an existing
/// parameter of identical shape; parameters without a gradient are untouched.
template <class S>
void adam_update(AdamState<S>& state, ParamMap<S>& params,
                 const ParamMap<S>& grads, const AdamConfig& cfg);

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <class S>
double clip_global_norm(ParamMap<S>& grads, double max_norm);

template <class S>
bool all_finite(const ParamMap<S>& params) {
  for (const auto& [_, m] : params)
    if (!m.allFinite()) return false;
  return true;
}

}  // namespace lab
