#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "blindac/merge_env.hpp"
#include "blindac/rng.hpp"

namespace blindac {

enum class Activation : std::uint8_t { linear = 0, tanh_fn = 1, relu = 2 };

struct MlpGrads {
    std::vector<Eigen::MatrixXd> w;
    std::vector<Eigen::VectorXd> b;
};

struct ForwardCache {
    Eigen::MatrixXd input;              // in x batch
    std::vector<Eigen::MatrixXd> pre;   // pre-activation per layer
    std::vector<Eigen::MatrixXd> post;  // post-activation per layer
};

// Dense feed-forward network, double precision. Columns are batch samples.
struct Mlp {
    std::vector<int> sizes;
    Activation hidden = Activation::tanh_fn;
    Activation output = Activation::linear;
    std::vector<Eigen::MatrixXd> w;  // w[l]: sizes[l+1] x sizes[l]
    std::vector<Eigen::VectorXd> b;

    static Mlp make(std::vector<int> sizes, Activation hidden, Activation output,
                    Rng& rng);

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, ForwardCache* cache) const;

    // Exact reverse-mode gradients of the forward map, summed over the batch.
    MlpGrads backward(const ForwardCache& cache,
                      const Eigen::MatrixXd& upstream) const;

    MlpGrads zero_grads() const;
    std::size_t param_count() const;
    bool same_shape(const Mlp& o) const;
    bool finite() const;
};

// target <- coeff * online + (1 - coeff) * target, elementwise.
void soft_update(Mlp& target, const Mlp& online, double coeff);

class Adam {
public:
    explicit Adam(const Mlp& shape, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    void step(Mlp& params, const MlpGrads& grads, double lr);
    std::int64_t steps() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    MlpGrads m_, v_;
};

// Ornstein-Uhlenbeck exploration noise, zero mean.
struct OuNoise {
    double x = 0.0;
    double theta = 0.2;
    double sigma = 0.4;

    void reset() { x = 0.0; }
    double step(double dt, Rng& rng) {
        if (dt <= 0.0) throw UsageError("ou_step: dt must be > 0");
        x += theta * (0.0 - x) * dt + sigma * std::sqrt(dt) * rng.normal();
        return x;
    }
};

// Replay record between two consecutive deliveries.
struct Transition {
    StateVector s;
    double a = 0.0;       // acceleration applied over the gap
    double r_prev = 0.0;  // reward delivered with s
    double r_next = 0.0;  // reward delivered with s_next
    double delta_t = 0.0;
    StateVector s_next;
    bool terminal = false;
};

class ReplayMemory {
public:
    explicit ReplayMemory(std::size_t capacity);

    void push(const Transition& t);
    std::size_t size() const { return buf_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool ready(std::size_t batch) const { return buf_.size() >= batch; }
    const Transition& at(std::size_t logical) const;  // 0 = oldest

    // Uniform without replacement within the batch. Throws when underfilled.
    std::vector<Transition> sample(std::size_t batch, Rng& rng) const;

private:
    std::size_t capacity_;
    std::vector<Transition> buf_;
    std::size_t head_ = 0;  // index of the oldest element once full
};

// Versioned little-endian binary serialization; round-trips bit-exact.
void save_mlp(std::ostream& os, const Mlp& m);
Mlp load_mlp(std::istream& is);

}  // namespace blindac
