#include "avword/optim.hpp"

#include <cmath>

namespace avword {

template <typename T>
void Adam<T>::step(ParamMap<T>& params) {
  ++step_count_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (auto& [name, p] : params) {
    if (!p->requires_grad || p->grad.numel() == 0) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.numel() == 0) {
      m = Tensor<T>(p->value.shape());
      v = Tensor<T>(p->value.shape());
    }
    AVW_CHECK(m.shape() == p->value.shape(),
              "optimizer moment shape mismatch for parameter " << name);
    T* pv = p->value.data();
    T* pg = p->grad.data();
    T* pm = m.data();
    T* pvv = v.data();
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double g = static_cast<double>(pg[i]);
      if (!std::isfinite(g)) AVW_FAIL_AS(NumericError, "NaN gradient in parameter " << name);
      const double mi = b1 * pm[i] + (1.0 - b1) * g;
      const double vi = b2 * pvv[i] + (1.0 - b2) * g * g;
      pm[i] = static_cast<T>(mi);
      pvv[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      pv[i] = static_cast<T>(pv[i] - lr_ * mhat / (std::sqrt(vhat) + cfg_.epsilon));
      pg[i] = T(0);
    }
  }
}

template <typename T>
AdamState Adam<T>::export_state() const {
  AdamState st;
  st.step_count = step_count_;
  st.lr = lr_;
  for (const auto& [name, t] : m_) st.m[name] = t.template cast<float>();
  for (const auto& [name, t] : v_) st.v[name] = t.template cast<float>();
  return st;
}

template <typename T>
void Adam<T>::import_state(const AdamState& st) {
  step_count_ = st.step_count;
  set_lr(st.lr);
  m_.clear();
  v_.clear();
  for (const auto& [name, t] : st.m) m_[name] = t.template cast<T>();
  for (const auto& [name, t] : st.v) v_[name] = t.template cast<T>();
}

template class Adam<float>;
template class Adam<double>;

double PlateauScheduler::observe(double val_metric) {
  if (val_metric < st_.best_val_metric) {
    st_.best_val_metric = val_metric;
    st_.epochs_since_improvement = 0;
    return st_.lr;
  }
  ++st_.epochs_since_improvement;
  if (st_.epochs_since_improvement >= patience_) {
    st_.epochs_since_improvement = 0;
    if (st_.lr <= floor_) {
      exhausted_ = true;
    } else {
      st_.lr = std::max(floor_, st_.lr * factor_);
    }
  }
  return st_.lr;
}

}  // namespace avword
