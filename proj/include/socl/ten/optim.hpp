#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "socl/errors.hpp"
#include "socl/ten/tape.hpp"

namespace socl::ten {

// Linear warm-up over the first `warmup_ratio` of steps, then linear decay to 0.
struct LinearWarmupDecay {
  std::size_t total_steps = 1;
  double warmup_ratio = 0.1;

  double factor(std::size_t step) const {
    const double total = static_cast<double>(std::max<std::size_t>(total_steps, 1));
    const double warm = std::floor(warmup_ratio * total);
    const double s = static_cast<double>(step);
    if (warm > 0.0 && s < warm) return (s + 1.0) / warm;
    const double rest = total - warm;
    if (rest <= 0.0) return 1.0;
    return std::max(0.0, (total - s) / rest);
  }
};

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam over a fixed parameter list. Frozen parameters
// are skipped.
class AdamW {
 public:
  AdamW(std::vector<Param*> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
    for (Param* p : params_) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }

  void zero_grad() {
    for (Param* p : params_) p->zero_grad();
  }

  // Applies one update with learning rate opts.lr * lr_scale.
  void step(double lr_scale = 1.0) {
    ++t_;
    const double lr = opts_.lr * lr_scale;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param& p = *params_[k];
      if (p.frozen) continue;
      Mat& m = m_[k];
      Mat& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        if (!std::isfinite(g)) throw NumericError("AdamW: non-finite gradient in " + p.name);
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        if (p.decay) p.value[i] -= lr * opts_.weight_decay * p.value[i];
        p.value[i] -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Param*> params_;
  AdamWOptions opts_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  std::size_t t_ = 0;
};

}  // namespace socl::ten
