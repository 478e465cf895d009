#pragma once

#include <Eigen/Core>

#include <cmath>

namespace cageadv {

/// Adaptive-moment gradient descent on a single dense parameter block.
class Adam {
public:
    explicit Adam(double step_size, double beta1 = 0.9, double beta2 = 0.999,
                  double epsilon = 1e-8)
        : step_size_(step_size), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

    template <typename Params, typename Grad>
    void step(Eigen::MatrixBase<Params>& params, const Eigen::MatrixBase<Grad>& grad) {
        if (m_.size() == 0) {
            m_.setZero(params.rows(), params.cols());
            v_.setZero(params.rows(), params.cols());
        }
        ++t_;
        m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
        v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        params -= (step_size_ / c1 * m_.array() / ((v_.array() / c2).sqrt() + epsilon_)).matrix();
    }

    [[nodiscard]] long steps() const { return t_; }

private:
    double step_size_;
    double beta1_;
    double beta2_;
    double epsilon_;
    long t_ = 0;
    Eigen::MatrixXd m_;
    Eigen::MatrixXd v_;
};

}  // namespace cageadv
