#pragma once

// Reverse-mode automatic differentiation over dense matrices. The tape stores
// one node per vectorized operation; losses with awkward indexing (quantile
// Huber pairs, PPO surrogate, the Weibull log-quantile fit) are single fused
// nodes with hand-derived backward passes, validated against central finite
// differences in the test suite.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace qcpo::ad {

using Mat = Eigen::MatrixXd;

class Tape {
public:
    using Id = int;

    Id leaf(Mat v) { return push(std::move(v), {}); }

    const Mat& val(Id id) const { return nodes_.at(id).val; }
    const Mat& grad(Id id) const { return nodes_.at(id).grad; }

    // y = x * w^T, x: (n,i), w: (o,i)
    Id matmul_nt(Id x, Id w) {
        check_cols(x, w, "matmul_nt");
        Mat y = val(x) * val(w).transpose();
        return push(std::move(y), [this, x, w](Id self) {
            nodes_[x].grad.noalias() += nodes_[self].grad * nodes_[w].val;
            nodes_[w].grad.noalias() += nodes_[self].grad.transpose() * nodes_[x].val;
        });
    }

    // broadcast row vector b (1,o) over the rows of x (n,o)
    Id add_row(Id x, Id b) {
        if (val(b).rows() != 1 || val(b).cols() != val(x).cols())
            throw std::invalid_argument("add_row: bias shape mismatch");
        Mat y = val(x).rowwise() + val(b).row(0);
        return push(std::move(y), [this, x, b](Id self) {
            nodes_[x].grad += nodes_[self].grad;
            nodes_[b].grad += nodes_[self].grad.colwise().sum();
        });
    }

    Id add(Id a, Id b) {
        check_same(a, b, "add");
        Mat y = val(a) + val(b);
        return push(std::move(y), [this, a, b](Id self) {
            nodes_[a].grad += nodes_[self].grad;
            nodes_[b].grad += nodes_[self].grad;
        });
    }

    Id sub(Id a, Id b) {
        check_same(a, b, "sub");
        Mat y = val(a) - val(b);
        return push(std::move(y), [this, a, b](Id self) {
            nodes_[a].grad += nodes_[self].grad;
            nodes_[b].grad -= nodes_[self].grad;
        });
    }

    Id mul(Id a, Id b) {
        check_same(a, b, "mul");
        Mat y = val(a).cwiseProduct(val(b));
        return push(std::move(y), [this, a, b](Id self) {
            nodes_[a].grad += nodes_[self].grad.cwiseProduct(nodes_[b].val);
            nodes_[b].grad += nodes_[self].grad.cwiseProduct(nodes_[a].val);
        });
    }

    Id tanh_op(Id x) {
        Mat y = val(x).array().tanh().matrix();
        return push(std::move(y), [this, x](Id self) {
            nodes_[x].grad.array() +=
                nodes_[self].grad.array() * (1.0 - nodes_[self].val.array().square());
        });
    }

    // exp with a pre-activation clamp; gradients vanish in the clamped region
    Id exp_op(Id x, double max_exponent = 40.0) {
        Mat y = val(x).array().min(max_exponent).exp().matrix();
        return push(std::move(y), [this, x, max_exponent](Id self) {
            nodes_[x].grad.array() += nodes_[self].grad.array() * nodes_[self].val.array() *
                                      (nodes_[x].val.array() < max_exponent).cast<double>();
        });
    }

    // s * sigmoid(x), range (0, s)
    Id scaled_sigmoid(Id x, double s) {
        Mat y = (s / (1.0 + (-val(x).array()).exp())).matrix();
        return push(std::move(y), [this, x, s](Id self) {
            auto sig = nodes_[self].val.array() / s;
            nodes_[x].grad.array() += nodes_[self].grad.array() * s * sig * (1.0 - sig);
        });
    }

    Id log_op(Id x) {
        Mat y = val(x).array().log().matrix();
        return push(std::move(y), [this, x](Id self) {
            nodes_[x].grad.array() += nodes_[self].grad.array() / nodes_[x].val.array();
        });
    }

    Id square(Id x) {
        Mat y = val(x).array().square().matrix();
        return push(std::move(y), [this, x](Id self) {
            nodes_[x].grad.array() += 2.0 * nodes_[self].grad.array() * nodes_[x].val.array();
        });
    }

    Id scale(Id x, double c) {
        Mat y = c * val(x);
        return push(std::move(y), [this, x, c](Id self) { nodes_[x].grad += c * nodes_[self].grad; });
    }

    Id sum_all(Id x) {
        Mat y(1, 1);
        y(0, 0) = val(x).sum();
        return push(std::move(y), [this, x](Id self) {
            nodes_[x].grad.array() += nodes_[self].grad(0, 0);
        });
    }

    Id mean_all(Id x) {
        Mat y(1, 1);
        y(0, 0) = val(x).mean();
        return push(std::move(y), [this, x](Id self) {
            nodes_[x].grad.array() += nodes_[self].grad(0, 0) / nodes_[x].val.size();
        });
    }

    // Quantile-Huber TD loss: (1/(n*m*m')) sum_{n,i,j} |u_i - 1{d<0}| L_k(d)/k
    // with d = targets(n,j) - q(n,i). Targets are constants (old network).
    Id quantile_huber_td(Id q, Mat targets, std::vector<double> fractions, double kappa) {
        const Mat& Q = val(q);
        const int n = static_cast<int>(Q.rows()), m = static_cast<int>(Q.cols());
        const int mj = static_cast<int>(targets.cols());
        if (targets.rows() != n) throw std::invalid_argument("quantile_huber_td: row mismatch");
        if (static_cast<int>(fractions.size()) != m)
            throw std::invalid_argument("quantile_huber_td: fraction count mismatch");
        if (!(kappa > 0.0)) throw std::invalid_argument("quantile_huber_td: kappa must be > 0");

        double denom = static_cast<double>(n) * m * mj;
        double loss = 0.0;
        Mat dq = Mat::Zero(n, m);
        for (int r = 0; r < n; ++r) {
            for (int i = 0; i < m; ++i) {
                double qi = Q(r, i), u = fractions[i];
                double acc = 0.0, dacc = 0.0;
                for (int j = 0; j < mj; ++j) {
                    double d = targets(r, j) - qi;
                    double w = std::abs(u - (d < 0.0 ? 1.0 : 0.0));
                    double ad = std::abs(d);
                    acc += w * (ad <= kappa ? 0.5 * d * d : kappa * (ad - 0.5 * kappa)) / kappa;
                    dacc -= w * std::clamp(d / kappa, -1.0, 1.0);  // d(loss)/d(qi)
                }
                loss += acc;
                dq(r, i) = dacc / denom;
            }
        }
        Mat y(1, 1);
        y(0, 0) = loss / denom;
        return push(std::move(y), [this, q, dq = std::move(dq)](Id self) {
            nodes_[q].grad += nodes_[self].grad(0, 0) * dq;
        });
    }

    // 0.5 * mean_n (row_mean(x_n) - t_n)^2
    Id half_mse_rowmean(Id x, Eigen::VectorXd target) {
        const Mat& X = val(x);
        const int n = static_cast<int>(X.rows()), m = static_cast<int>(X.cols());
        if (target.size() != n) throw std::invalid_argument("half_mse_rowmean: target size");
        Eigen::VectorXd rm = X.rowwise().mean();
        Mat y(1, 1);
        y(0, 0) = 0.5 * (rm - target).squaredNorm() / n;
        return push(std::move(y), [this, x, rm, target = std::move(target), n, m](Id self) {
            Eigen::VectorXd d = (rm - target) / (static_cast<double>(n) * m);
            nodes_[x].grad += nodes_[self].grad(0, 0) * d.replicate(1, m);
        });
    }

    // 0.5 * mean_n (x_n - t_n)^2 for a column vector node
    Id half_mse(Id x, Eigen::VectorXd target) {
        const Mat& X = val(x);
        const int n = static_cast<int>(X.rows());
        if (X.cols() != 1 || target.size() != n) throw std::invalid_argument("half_mse: shape");
        Mat y(1, 1);
        y(0, 0) = 0.5 * (X.col(0) - target).squaredNorm() / n;
        return push(std::move(y), [this, x, target = std::move(target), n](Id self) {
            nodes_[x].grad.col(0) += nodes_[self].grad(0, 0) * (nodes_[x].val.col(0) - target) / n;
        });
    }

    // Log-scale Weibull quantile fit: (1/(n*k)) sum 0.5*(log b + log c_i / a - logq)^2.
    // alpha, beta: (n,1) nodes; log_cu: k fit fractions; log_q: (n,k) constants.
    Id weibull_logquantile_fit(Id alpha, Id beta, Eigen::RowVectorXd log_cu, Mat log_q) {
        const Mat& A = val(alpha);
        const Mat& B = val(beta);
        const int n = static_cast<int>(A.rows()), k = static_cast<int>(log_cu.size());
        if (A.cols() != 1 || B.cols() != 1 || B.rows() != n)
            throw std::invalid_argument("weibull_logquantile_fit: param shape");
        if (log_q.rows() != n || log_q.cols() != k)
            throw std::invalid_argument("weibull_logquantile_fit: target shape");
        Mat resid(n, k);
        for (int r = 0; r < n; ++r)
            for (int i = 0; i < k; ++i)
                resid(r, i) = std::log(B(r, 0)) + log_cu(i) / A(r, 0) - log_q(r, i);
        Mat y(1, 1);
        y(0, 0) = 0.5 * resid.squaredNorm() / (n * k);
        return push(std::move(y),
                    [this, alpha, beta, resid = std::move(resid), log_cu = std::move(log_cu), n, k](Id self) {
                        double g = nodes_[self].grad(0, 0) / (static_cast<double>(n) * k);
                        for (int r = 0; r < n; ++r) {
                            double a = nodes_[alpha].val(r, 0), b = nodes_[beta].val(r, 0);
                            double da = 0.0, db = 0.0;
                            for (int i = 0; i < k; ++i) {
                                da += resid(r, i) * (-log_cu(i) / (a * a));
                                db += resid(r, i) / b;
                            }
                            nodes_[alpha].grad(r, 0) += g * da;
                            nodes_[beta].grad(r, 0) += g * db;
                        }
                    });
    }

    // PPO clipped surrogate for a categorical policy:
    // loss = -mean_n min(ratio*adv, clip(ratio, 1 +- r_clip)*adv),
    // ratio = exp(log softmax(logits)[a_n] - logp_old_n).
    Id ppo_categorical(Id logits, std::vector<int> actions, Eigen::VectorXd logp_old,
                       Eigen::VectorXd adv, double r_clip) {
        const Mat& L = val(logits);
        const int n = static_cast<int>(L.rows()), na = static_cast<int>(L.cols());
        if (static_cast<int>(actions.size()) != n || logp_old.size() != n || adv.size() != n)
            throw std::invalid_argument("ppo_categorical: batch size mismatch");
        double loss = 0.0;
        Mat dlogits = Mat::Zero(n, na);
        for (int r = 0; r < n; ++r) {
            double mx = L.row(r).maxCoeff();
            Eigen::RowVectorXd ex = (L.row(r).array() - mx).exp();
            double z = ex.sum();
            Eigen::RowVectorXd p = ex / z;
            int a = actions[r];
            if (a < 0 || a >= na) throw std::invalid_argument("ppo_categorical: action out of range");
            double lp_new = L(r, a) - (mx + std::log(z));
            double ratio = std::exp(lp_new - logp_old(r));
            if (!std::isfinite(ratio)) throw std::runtime_error("ppo_categorical: non-finite ratio");
            double clipped = std::clamp(ratio, 1.0 - r_clip, 1.0 + r_clip);
            double s_plain = ratio * adv(r);
            double s_clip = clipped * adv(r);
            loss -= std::min(s_plain, s_clip);
            // subgradient of min: the plain branch wins ties
            double dmin_dratio;
            if (s_plain <= s_clip)
                dmin_dratio = adv(r);
            else
                dmin_dratio = (ratio > 1.0 - r_clip && ratio < 1.0 + r_clip) ? adv(r) : 0.0;
            double c = -dmin_dratio * ratio / n;  // d loss / d lp_new
            for (int j = 0; j < na; ++j) dlogits(r, j) += c * ((j == a ? 1.0 : 0.0) - p(j));
        }
        Mat y(1, 1);
        y(0, 0) = loss / n;
        return push(std::move(y), [this, logits, dlogits = std::move(dlogits)](Id self) {
            nodes_[logits].grad += nodes_[self].grad(0, 0) * dlogits;
        });
    }

    // mean over rows of the categorical entropy of softmax(logits)
    Id categorical_entropy_mean(Id logits) {
        const Mat& L = val(logits);
        const int n = static_cast<int>(L.rows()), na = static_cast<int>(L.cols());
        double total = 0.0;
        Mat dlogits = Mat::Zero(n, na);
        for (int r = 0; r < n; ++r) {
            double mx = L.row(r).maxCoeff();
            Eigen::RowVectorXd ex = (L.row(r).array() - mx).exp();
            double z = ex.sum();
            Eigen::RowVectorXd p = ex / z;
            double h = 0.0;
            for (int j = 0; j < na; ++j)
                if (p(j) > 0.0) h -= p(j) * std::log(p(j));
            total += h;
            for (int j = 0; j < na; ++j)
                if (p(j) > 0.0) dlogits(r, j) = -p(j) * (std::log(p(j)) + h) / n;
        }
        Mat y(1, 1);
        y(0, 0) = total / n;
        return push(std::move(y), [this, logits, dlogits = std::move(dlogits)](Id self) {
            nodes_[logits].grad += nodes_[self].grad(0, 0) * dlogits;
        });
    }

    void backward(Id loss) {
        if (val(loss).rows() != 1 || val(loss).cols() != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        for (Node& nd : nodes_) nd.grad = Mat::Zero(nd.val.rows(), nd.val.cols());
        nodes_[loss].grad(0, 0) = 1.0;
        for (int i = loss; i >= 0; --i)
            if (nodes_[i].back) nodes_[i].back(i);
    }

    int size() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Mat val;
        Mat grad;
        std::function<void(Id)> back;
    };

    Id push(Mat v, std::function<void(Id)> back) {
        nodes_.push_back({std::move(v), {}, std::move(back)});
        return static_cast<Id>(nodes_.size()) - 1;
    }

    void check_same(Id a, Id b, const char* op) const {
        if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
    void check_cols(Id a, Id b, const char* op) const {
        if (val(a).cols() != val(b).cols())
            throw std::invalid_argument(std::string(op) + ": inner dimension mismatch");
    }

    std::vector<Node> nodes_;
};

}  // namespace qcpo::ad
