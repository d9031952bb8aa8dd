// ADAM with bias correction and the reduce-on-plateau learning-rate schedule.
#pragma once

#include <map>
#include <string>

#include "avword/layers.hpp"

namespace avword {

inline constexpr double kLrInitial = 3e-3;
inline constexpr double kLrFloor = 1e-5;

struct AdamConfig {
  double lr = kLrInitial;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::map<std::string, Tensor<float>> m;  // first moments, keyed by parameter name
  std::map<std::string, Tensor<float>> v;  // second moments
  std::size_t step_count = 0;
  double lr = kLrInitial;
};

template <typename T>
class Adam {
 public:
  explicit Adam(const AdamConfig& cfg = {}) : cfg_(cfg), lr_(cfg.lr) {
    set_lr(cfg.lr);
  }

  // One update over every parameter with an allocated gradient; gradients are
  // consumed (zeroed). NaN gradients abort with the parameter name.
  void step(ParamMap<T>& params);

  double lr() const { return lr_; }
  void set_lr(double lr) {
    AVW_CHECK(lr >= kLrFloor && lr <= kLrInitial,
              "learning rate " << lr << " outside [" << kLrFloor << ", " << kLrInitial << "]");
    lr_ = lr;
  }
  std::size_t step_count() const { return step_count_; }

  AdamState export_state() const;
  void import_state(const AdamState& st);

 private:
  AdamConfig cfg_;
  double lr_;
  std::size_t step_count_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

// Halves the learning rate after `patience` consecutive epochs without
// validation improvement, clipped at the floor. Lower metric is better.
struct PlateauState {
  double best_val_metric = 1e300;
  int epochs_since_improvement = 0;
  double lr = kLrInitial;
};

class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr = kLrInitial, int patience = 3, double factor = 0.5,
                   double floor = kLrFloor)
      : patience_(patience), factor_(factor), floor_(floor) {
    st_.lr = initial_lr;
  }

  // Feed one epoch's validation metric; returns the (possibly halved) lr.
  double observe(double val_metric);

  double lr() const { return st_.lr; }
  // true once the lr sits at the floor and patience has run out again
  bool exhausted() const { return exhausted_; }

  PlateauState state() const { return st_; }
  void restore(const PlateauState& st) { st_ = st; }

 private:
  int patience_;
  double factor_;
  double floor_;
  bool exhausted_ = false;
  PlateauState st_;
};

}  // namespace avword
