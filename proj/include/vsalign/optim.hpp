#pragma once

#include <cmath>
#include <vector>

#include "common.hpp"

namespace vsalign {

/// Piecewise-constant schedule: base_lr * factor^(number of decay epochs <= epoch).
/// Epochs are 0-based.
struct StepSchedule {
    double base_lr = 0.05;
    std::vector<int> decay_epochs{60, 80};
    double decay_factor = 0.1;

    double lr_at(int epoch) const {
        double lr = base_lr;
        for (int e : decay_epochs)
            if (epoch >= e) lr *= decay_factor;
        return lr;
    }
};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///   g += wd * p;  buf = momentum * buf + g;  p -= lr * buf
struct Sgd {
    double momentum = 0.9;
    double weight_decay = 0.0005;
    Vector buffer;

    void step(Vector& params, const Vector& grad, double lr) {
        if (buffer.size() != params.size()) buffer = Vector::Zero(params.size());
        const Vector g = grad + weight_decay * params;
        buffer = momentum * buffer + g;
        params -= lr * buffer;
    }
};

/// Adam with bias correction.
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    Vector m;
    Vector v;
    long long t = 0;

    void step(Vector& params, const Vector& grad, double lr) {
        if (m.size() != params.size()) {
            m = Vector::Zero(params.size());
            v = Vector::Zero(params.size());
        }
        ++t;
        m = beta1 * m + (1 - beta1) * grad;
        v = beta2 * v + (1 - beta2) * grad.cwiseProduct(grad);
        const double c1 = 1 - std::pow(beta1, double(t));
        const double c2 = 1 - std::pow(beta2, double(t));
        params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + epsilon);
    }
};

}  // namespace vsalign
