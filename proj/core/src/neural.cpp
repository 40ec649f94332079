#include "blindac/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace blindac {

namespace {

Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& z) {
    switch (a) {
        case Activation::linear: return z;
        case Activation::tanh_fn: return z.array().tanh().matrix();
        case Activation::relu: return z.array().max(0.0).matrix();
    }
    return z;
}

// Derivative expressed through the post-activation value where possible.
Eigen::ArrayXXd activation_grad(Activation a, const Eigen::MatrixXd& pre,
                                const Eigen::MatrixXd& post) {
    switch (a) {
        case Activation::linear: return Eigen::ArrayXXd::Ones(pre.rows(), pre.cols());
        case Activation::tanh_fn: return 1.0 - post.array().square();
        case Activation::relu: return (pre.array() > 0.0).cast<double>();
    }
    return Eigen::ArrayXXd::Ones(pre.rows(), pre.cols());
}

void write_raw(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_raw(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("truncated model stream");
}

}  // namespace

Mlp Mlp::make(std::vector<int> sizes, Activation hidden, Activation output,
              Rng& rng) {
    if (sizes.size() < 2) throw UsageError("Mlp needs at least input and output sizes");
    for (int s : sizes)
        if (s <= 0) throw UsageError("Mlp layer sizes must be positive");
    Mlp m;
    m.sizes = std::move(sizes);
    m.hidden = hidden;
    m.output = output;
    const std::size_t layers = m.sizes.size() - 1;
    m.w.resize(layers);
    m.b.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const int fan_in = m.sizes[l];
        const int fan_out = m.sizes[l + 1];
        // Glorot-uniform hidden layers, small uniform output layer.
        const double limit = l + 1 == layers
                                 ? 3e-3
                                 : std::sqrt(6.0 / double(fan_in + fan_out));
        m.w[l].resize(fan_out, fan_in);
        for (int i = 0; i < fan_out; ++i)
            for (int j = 0; j < fan_in; ++j) m.w[l](i, j) = rng.uniform(-limit, limit);
        m.b[l] = Eigen::VectorXd::Zero(fan_out);
    }
    return m;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
    return forward(Eigen::MatrixXd(x), nullptr).col(0);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, ForwardCache* cache) const {
    if (x.rows() != sizes.front())
        throw UsageError("forward: input size mismatch");
    if (cache) {
        cache->input = x;
        cache->pre.resize(w.size());
        cache->post.resize(w.size());
    }
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < w.size(); ++l) {
        Eigen::MatrixXd z = (w[l] * h).colwise() + b[l];
        const Activation act = l + 1 == w.size() ? output : hidden;
        h = apply_activation(act, z);
        if (cache) {
            cache->pre[l] = std::move(z);
            cache->post[l] = h;
        }
    }
    return h;
}

MlpGrads Mlp::backward(const ForwardCache& cache,
                       const Eigen::MatrixXd& upstream) const {
    if (cache.pre.size() != w.size())
        throw UsageError("backward: cache does not match network");
    if (upstream.rows() != sizes.back() || upstream.cols() != cache.input.cols())
        throw UsageError("backward: upstream gradient shape mismatch");

    MlpGrads g = zero_grads();
    Eigen::MatrixXd delta = upstream;
    for (std::size_t li = w.size(); li-- > 0;) {
        const Activation act = li + 1 == w.size() ? output : hidden;
        delta = (delta.array() * activation_grad(act, cache.pre[li], cache.post[li]))
                    .matrix();
        const Eigen::MatrixXd& below =
            li == 0 ? cache.input : cache.post[li - 1];
        g.w[li] = delta * below.transpose();
        g.b[li] = delta.rowwise().sum();
        if (li > 0) delta = w[li].transpose() * delta;
    }
    return g;
}

MlpGrads Mlp::zero_grads() const {
    MlpGrads g;
    g.w.reserve(w.size());
    g.b.reserve(b.size());
    for (std::size_t l = 0; l < w.size(); ++l) {
        g.w.push_back(Eigen::MatrixXd::Zero(w[l].rows(), w[l].cols()));
        g.b.push_back(Eigen::VectorXd::Zero(b[l].size()));
    }
    return g;
}

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < w.size(); ++l)
        n += std::size_t(w[l].size()) + std::size_t(b[l].size());
    return n;
}

bool Mlp::same_shape(const Mlp& o) const {
    return sizes == o.sizes && hidden == o.hidden && output == o.output;
}

bool Mlp::finite() const {
    for (const auto& m : w)
        if (!m.allFinite()) return false;
    for (const auto& v : b)
        if (!v.allFinite()) return false;
    return true;
}

void soft_update(Mlp& target, const Mlp& online, double coeff) {
    if (!target.same_shape(online))
        throw UsageError("soft_update: shape mismatch");
    if (coeff < 0.0 || coeff > 1.0)
        throw UsageError("soft_update: coeff must lie in [0, 1]");
    for (std::size_t l = 0; l < target.w.size(); ++l) {
        target.w[l] = coeff * online.w[l] + (1.0 - coeff) * target.w[l];
        target.b[l] = coeff * online.b[l] + (1.0 - coeff) * target.b[l];
    }
}

Adam::Adam(const Mlp& shape, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(shape.zero_grads()),
      v_(shape.zero_grads()) {}

void Adam::step(Mlp& params, const MlpGrads& grads, double lr) {
    if (lr < 0.0) throw UsageError("Adam: learning rate must be >= 0");
    if (grads.w.size() != params.w.size())
        throw UsageError("Adam: gradient shape mismatch");
    for (const auto& gw : grads.w)
        if (!gw.allFinite())
            throw std::runtime_error("Adam: non-finite gradient encountered");
    for (const auto& gb : grads.b)
        if (!gb.allFinite())
            throw std::runtime_error("Adam: non-finite gradient encountered");

    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t l = 0; l < params.w.size(); ++l) {
        m_.w[l] = beta1_ * m_.w[l] + (1.0 - beta1_) * grads.w[l];
        v_.w[l] =
            (beta2_ * v_.w[l].array() + (1.0 - beta2_) * grads.w[l].array().square())
                .matrix();
        params.w[l].array() -= lr * (m_.w[l].array() / bc1) /
                               ((v_.w[l].array() / bc2).sqrt() + eps_);

        m_.b[l] = beta1_ * m_.b[l] + (1.0 - beta1_) * grads.b[l];
        v_.b[l] =
            (beta2_ * v_.b[l].array() + (1.0 - beta2_) * grads.b[l].array().square())
                .matrix();
        params.b[l].array() -= lr * (m_.b[l].array() / bc1) /
                               ((v_.b[l].array() / bc2).sqrt() + eps_);
    }
}

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw UsageError("replay capacity must be > 0");
}

void ReplayMemory::push(const Transition& t) {
    if (buf_.size() < capacity_) {
        buf_.push_back(t);
        return;
    }
    buf_[head_] = t;
    head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayMemory::at(std::size_t logical) const {
    if (logical >= buf_.size()) throw UsageError("replay index out of range");
    return buf_[(head_ + logical) % buf_.size()];
}

std::vector<Transition> ReplayMemory::sample(std::size_t batch, Rng& rng) const {
    if (!ready(batch))
        throw UsageError("replay memory not ready for the requested batch");
    const std::size_t n = buf_.size();
    // Floyd's algorithm: `batch` distinct indices, O(batch) draws.
    std::vector<std::size_t> picked;
    picked.reserve(batch);
    for (std::size_t i = n - batch; i < n; ++i) {
        const std::size_t j = std::size_t(rng.uniform_int(i + 1));
        if (std::find(picked.begin(), picked.end(), j) != picked.end())
            picked.push_back(i);
        else
            picked.push_back(j);
    }
    std::vector<Transition> out;
    out.reserve(batch);
    for (std::size_t idx : picked) out.push_back(buf_[idx]);
    return out;
}

namespace {
constexpr std::uint32_t kMlpMagic = 0x424d4c50;  // "BMLP"
constexpr std::uint32_t kMlpVersion = 1;
}  // namespace

void save_mlp(std::ostream& os, const Mlp& m) {
    write_raw(os, &kMlpMagic, 4);
    write_raw(os, &kMlpVersion, 4);
    const std::uint32_t n = std::uint32_t(m.sizes.size());
    write_raw(os, &n, 4);
    for (int s : m.sizes) {
        const std::int32_t v = s;
        write_raw(os, &v, 4);
    }
    const std::uint8_t h = std::uint8_t(m.hidden), o = std::uint8_t(m.output);
    write_raw(os, &h, 1);
    write_raw(os, &o, 1);
    for (std::size_t l = 0; l + 1 < m.sizes.size(); ++l) {
        // Eigen stores column-major; emit row-major for a layout-free format.
        for (Eigen::Index i = 0; i < m.w[l].rows(); ++i)
            for (Eigen::Index j = 0; j < m.w[l].cols(); ++j) {
                const double x = m.w[l](i, j);
                write_raw(os, &x, 8);
            }
        for (Eigen::Index i = 0; i < m.b[l].size(); ++i) {
            const double x = m.b[l](i);
            write_raw(os, &x, 8);
        }
    }
}

Mlp load_mlp(std::istream& is) {
    std::uint32_t magic = 0, version = 0, n = 0;
    read_raw(is, &magic, 4);
    read_raw(is, &version, 4);
    if (magic != kMlpMagic) throw std::runtime_error("not a model stream");
    if (version != kMlpVersion) throw std::runtime_error("unsupported model version");
    read_raw(is, &n, 4);
    if (n < 2 || n > 64) throw std::runtime_error("corrupt model stream");
    Mlp m;
    m.sizes.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::int32_t v;
        read_raw(is, &v, 4);
        if (v <= 0) throw std::runtime_error("corrupt model stream");
        m.sizes[i] = v;
    }
    std::uint8_t h, o;
    read_raw(is, &h, 1);
    read_raw(is, &o, 1);
    m.hidden = Activation(h);
    m.output = Activation(o);
    m.w.resize(n - 1);
    m.b.resize(n - 1);
    for (std::uint32_t l = 0; l + 1 < n; ++l) {
        m.w[l].resize(m.sizes[l + 1], m.sizes[l]);
        for (Eigen::Index i = 0; i < m.w[l].rows(); ++i)
            for (Eigen::Index j = 0; j < m.w[l].cols(); ++j) {
                double x;
                read_raw(is, &x, 8);
                m.w[l](i, j) = x;
            }
        m.b[l].resize(m.sizes[l + 1]);
        for (Eigen::Index i = 0; i < m.b[l].size(); ++i) {
            double x;
            read_raw(is, &x, 8);
            m.b[l](i) = x;
        }
    }
    return m;
}

}  // namespace blindac
