#pragma once

// Function-approximation substrate: a flat parameter store with named slices,
// tanh MLPs with range-constrained output heads, an Adam optimizer operating
// on store ranges, and diagonal-Gaussian / categorical policy heads.

#include "qcpo/autodiff.hpp"
#include "qcpo/rng.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace qcpo {

using ad::Mat;

struct SliceInfo {
    std::string name;
    int offset = 0;
    int rows = 0;
    int cols = 0;
    int size() const { return rows * cols; }
};

// Flat parameter vector; every named slice is disjoint and their concatenation
// covers the whole vector.
class ParamStore {
public:
    int add_slice(const std::string& name, int rows, int cols) {
        SliceInfo s{name, static_cast<int>(values.size()), rows, cols};
        slices_.push_back(s);
        values.resize(values.size() + s.size(), 0.0);
        return static_cast<int>(slices_.size()) - 1;
    }

    const SliceInfo& slice(int idx) const { return slices_.at(idx); }
    const std::vector<SliceInfo>& slices() const { return slices_; }
    int size() const { return static_cast<int>(values.size()); }

    Mat matrix(const SliceInfo& s) const {
        Mat m(s.rows, s.cols);
        for (int r = 0; r < s.rows; ++r)
            for (int c = 0; c < s.cols; ++c) m(r, c) = values[s.offset + r * s.cols + c];
        return m;
    }

    void set_matrix(const SliceInfo& s, const Mat& m) {
        if (m.rows() != s.rows || m.cols() != s.cols)
            throw std::invalid_argument("ParamStore::set_matrix: shape mismatch for " + s.name);
        for (int r = 0; r < s.rows; ++r)
            for (int c = 0; c < s.cols; ++c) values[s.offset + r * s.cols + c] = m(r, c);
    }

    const std::string& name_at(int flat_index) const {
        for (const SliceInfo& s : slices_)
            if (flat_index >= s.offset && flat_index < s.offset + s.size()) return s.name;
        throw std::out_of_range("ParamStore::name_at: index outside any slice");
    }

    std::vector<double> values;

private:
    std::vector<SliceInfo> slices_;
};

enum class Head { linear, exp, scaled_sigmoid4 };

struct MlpSpec {
    int input_dim = 1;
    std::vector<int> hidden = {64, 64};
    int output_dim = 1;
    Head head = Head::linear;
};

// Collects parameter leaves so their gradients can be scattered back into a
// flat gradient vector after Tape::backward.
struct GradBinder {
    ad::Tape* tape = nullptr;
    std::vector<std::pair<ad::Tape::Id, SliceInfo>> bound;

    ad::Tape::Id param_leaf(const ParamStore& store, const SliceInfo& s) {
        ad::Tape::Id id = tape->leaf(store.matrix(s));
        bound.push_back({id, s});
        return id;
    }

    void scatter(std::vector<double>& flat_grad) const {
        for (const auto& [id, s] : bound) {
            const Mat& g = tape->grad(id);
            for (int r = 0; r < s.rows; ++r)
                for (int c = 0; c < s.cols; ++c) flat_grad[s.offset + r * s.cols + c] += g(r, c);
        }
    }
};

// An MLP whose parameters live in a ParamStore as consecutive named slices.
class Mlp {
public:
    static Mlp create(ParamStore& store, const std::string& prefix, const MlpSpec& spec, Rng& rng,
                      double final_layer_scale = 1.0) {
        Mlp net;
        net.spec_ = spec;
        std::vector<int> dims;
        dims.push_back(spec.input_dim);
        for (int h : spec.hidden) dims.push_back(h);
        dims.push_back(spec.output_dim);
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            int in = dims[l], out = dims[l + 1];
            int wi = store.add_slice(prefix + ".W" + std::to_string(l), out, in);
            int bi = store.add_slice(prefix + ".b" + std::to_string(l), 1, out);
            bool last = (l + 2 == dims.size());
            double bound = std::sqrt(3.0 / in) * (last ? final_layer_scale : 1.0);
            Mat w(out, in);
            for (int r = 0; r < out; ++r)
                for (int c = 0; c < in; ++c) w(r, c) = rng.uniform(-bound, bound);
            store.set_matrix(store.slice(wi), w);
            net.weight_idx_.push_back(wi);
            net.bias_idx_.push_back(bi);
        }
        return net;
    }

    const MlpSpec& spec() const { return spec_; }

    // Plain forward pass, X: (n, input_dim).
    Mat forward(const ParamStore& store, const Mat& X) const {
        if (X.cols() != spec_.input_dim) throw std::invalid_argument("Mlp::forward: input dim mismatch");
        Mat h = X;
        for (std::size_t l = 0; l < weight_idx_.size(); ++l) {
            Mat w = store.matrix(store.slice(weight_idx_[l]));
            Mat b = store.matrix(store.slice(bias_idx_[l]));
            h = (h * w.transpose()).rowwise() + b.row(0);
            if (l + 1 < weight_idx_.size()) h = h.array().tanh().matrix();
        }
        return apply_head(h);
    }

    // Taped forward pass through binder.tape; parameter leaves are registered
    // in the binder for gradient scatter.
    ad::Tape::Id forward_taped(GradBinder& binder, const ParamStore& store, const Mat& X) const {
        if (X.cols() != spec_.input_dim)
            throw std::invalid_argument("Mlp::forward_taped: input dim mismatch");
        ad::Tape& t = *binder.tape;
        ad::Tape::Id h = t.leaf(X);
        for (std::size_t l = 0; l < weight_idx_.size(); ++l) {
            ad::Tape::Id w = binder.param_leaf(store, store.slice(weight_idx_[l]));
            ad::Tape::Id b = binder.param_leaf(store, store.slice(bias_idx_[l]));
            h = t.add_row(t.matmul_nt(h, w), b);
            if (l + 1 < weight_idx_.size()) h = t.tanh_op(h);
        }
        switch (spec_.head) {
            case Head::linear: return h;
            case Head::exp: return t.exp_op(h);
            case Head::scaled_sigmoid4: return t.scaled_sigmoid(h, 4.0);
        }
        throw std::logic_error("Mlp::forward_taped: unknown head");
    }

private:
    Mat apply_head(const Mat& h) const {
        switch (spec_.head) {
            case Head::linear: return h;
            case Head::exp: return h.array().min(40.0).exp().matrix();
            case Head::scaled_sigmoid4: return (4.0 / (1.0 + (-h.array()).exp())).matrix();
        }
        throw std::logic_error("Mlp::apply_head: unknown head");
    }

    MlpSpec spec_;
    std::vector<int> weight_idx_;
    std::vector<int> bias_idx_;
};

// Adam over a [offset, offset+length) range of a ParamStore.
struct Adam {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int offset = 0;
    int length = 0;
    long t = 0;
    std::vector<double> m, v;

    Adam() = default;
    Adam(double lr_, int offset_, int length_)
        : lr(lr_), offset(offset_), length(length_), m(length_, 0.0), v(length_, 0.0) {}

    void step(ParamStore& store, const std::vector<double>& grad) {
        if (static_cast<int>(grad.size()) != store.size())
            throw std::invalid_argument("Adam::step: gradient length mismatch");
        ++t;
        double c1 = 1.0 - std::pow(beta1, t);
        double c2 = 1.0 - std::pow(beta2, t);
        for (int i = 0; i < length; ++i) {
            double g = grad[offset + i];
            if (!std::isfinite(g))
                throw std::runtime_error("Adam::step: non-finite gradient in slice " +
                                         store.name_at(offset + i));
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            double mhat = m[i] / c1;
            double vhat = v[i] / c2;
            store.values[offset + i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
};

// ---------------------------------------------------------------------------
// Policy heads

struct GaussianPolicyOutput {
    Eigen::VectorXd mean;
    Eigen::VectorXd log_std;  // state-independent parameter
};

inline double gaussian_logprob(const GaussianPolicyOutput& out, const Eigen::VectorXd& action) {
    if (out.mean.size() != action.size() || out.log_std.size() != action.size())
        throw std::invalid_argument("gaussian_logprob: dimension mismatch");
    constexpr double log_2pi = 1.8378770664093454835606594728112;
    double lp = 0.0;
    for (Eigen::Index i = 0; i < action.size(); ++i) {
        double std = std::exp(out.log_std(i));
        double z = (action(i) - out.mean(i)) / std;
        lp += -0.5 * z * z - out.log_std(i) - 0.5 * log_2pi;
    }
    return lp;
}

inline double kl_diag_gaussian(const GaussianPolicyOutput& p, const GaussianPolicyOutput& q) {
    if (p.mean.size() != q.mean.size()) throw std::invalid_argument("kl_diag_gaussian: dim mismatch");
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.mean.size(); ++i) {
        double sp2 = std::exp(2.0 * p.log_std(i));
        double sq2 = std::exp(2.0 * q.log_std(i));
        double dm = p.mean(i) - q.mean(i);
        kl += q.log_std(i) - p.log_std(i) + (sp2 + dm * dm) / (2.0 * sq2) - 0.5;
    }
    return kl;
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

inline double categorical_logprob(const Eigen::VectorXd& logits, int action) {
    if (action < 0 || action >= logits.size())
        throw std::invalid_argument("categorical_logprob: action out of range");
    double mx = logits.maxCoeff();
    double lse = std::log((logits.array() - mx).exp().sum()) + mx;
    return logits(action) - lse;
}

inline double kl_categorical(const Eigen::VectorXd& logits_p, const Eigen::VectorXd& logits_q) {
    if (logits_p.size() != logits_q.size()) throw std::invalid_argument("kl_categorical: dim mismatch");
    Eigen::VectorXd p = softmax(logits_p);
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
        kl += p(i) * (categorical_logprob(logits_p, static_cast<int>(i)) -
                      categorical_logprob(logits_q, static_cast<int>(i)));
    return std::max(kl, 0.0);
}

}  // namespace qcpo
