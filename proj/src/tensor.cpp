#include "molr/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace molr {

namespace {

thread_local bool g_grad_enabled = true;

void check_finite(const Mat& m, const char* where) {
    if (!m.allFinite()) {
        throw std::invalid_argument(std::string(where) + ": non-finite values rejected");
    }
}

std::shared_ptr<TensorNode> make_node(Mat val) {
    auto n = std::make_shared<TensorNode>();
    n->val = std::move(val);
    return n;
}

// Records an op result. Parents and the closure are dropped in no-grad mode
// or when no parent needs gradients.
Tensor record(Mat val, std::vector<Tensor> parents,
              std::function<void(TensorNode&)> backward_fn) {
    auto n = make_node(std::move(val));
    bool need = false;
    for (const auto& p : parents) need = need || p.node()->requires_grad;
    if (g_grad_enabled && need) {
        n->requires_grad = true;
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(n);
}

} // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

Tensor Tensor::leaf(Mat value, bool requires_grad) {
    check_finite(value, "Tensor::leaf");
    auto n = make_node(std::move(value));
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::constant(Mat value) { return leaf(std::move(value), false); }

Tensor Tensor::scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

Tensor Tensor::random_gaussian(Eigen::Index rows, Eigen::Index cols, double stddev,
                               Rng& rng, bool requires_grad) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = stddev * rng.gaussian();
    return leaf(std::move(m), requires_grad);
}

Tensor Tensor::zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad) {
    return leaf(Mat::Zero(rows, cols), requires_grad);
}

const Mat& Tensor::grad() const {
    if (!node_->grad_ready) throw std::runtime_error("Tensor::grad: no gradient computed");
    return node_->grad;
}

double Tensor::item() const {
    if (rows() != 1 || cols() != 1) throw std::invalid_argument("Tensor::item: not scalar");
    return node_->val(0, 0);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()));
    }
    auto an = a.node(); auto bn = b.node();
    return record(a.value() * b.value(), {a, b}, [an, bn](TensorNode& out) {
        if (an->requires_grad) an->accumulate(out.grad * bn->val.transpose());
        if (bn->requires_grad) bn->accumulate(an->val.transpose() * out.grad);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("add: shape mismatch");
    auto an = a.node(); auto bn = b.node();
    return record(a.value() + b.value(), {a, b}, [an, bn](TensorNode& out) {
        if (an->requires_grad) an->accumulate(out.grad);
        if (bn->requires_grad) bn->accumulate(out.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("sub: shape mismatch");
    auto an = a.node(); auto bn = b.node();
    return record(a.value() - b.value(), {a, b}, [an, bn](TensorNode& out) {
        if (an->requires_grad) an->accumulate(out.grad);
        if (bn->requires_grad) bn->accumulate(-out.grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("mul: shape mismatch");
    auto an = a.node(); auto bn = b.node();
    return record(a.value().cwiseProduct(b.value()), {a, b}, [an, bn](TensorNode& out) {
        if (an->requires_grad) an->accumulate(out.grad.cwiseProduct(bn->val));
        if (bn->requires_grad) bn->accumulate(out.grad.cwiseProduct(an->val));
    });
}

Tensor scale(const Tensor& a, double s) {
    auto an = a.node();
    return record(a.value() * s, {a}, [an, s](TensorNode& out) {
        if (an->requires_grad) an->accumulate(out.grad * s);
    });
}

Tensor transpose(const Tensor& a) {
    auto an = a.node();
    return record(a.value().transpose(), {a}, [an](TensorNode& out) {
        if (an->requires_grad) an->accumulate(out.grad.transpose());
    });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index n) {
    if (start < 0 || n <= 0 || start + n > a.cols())
        throw std::invalid_argument("slice_cols: range out of bounds");
    auto an = a.node();
    return record(a.value().middleCols(start, n), {a}, [an, start, n](TensorNode& out) {
        if (!an->requires_grad) return;
        Mat g = Mat::Zero(an->val.rows(), an->val.cols());
        g.middleCols(start, n) = out.grad;
        an->accumulate(g);
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    Eigen::Index rows = parts[0].rows(), cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p.cols();
    }
    Mat y(rows, cols);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        y.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    std::vector<std::shared_ptr<TensorNode>> nodes;
    std::vector<Eigen::Index> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.cols());
    }
    return record(std::move(y), parts, [nodes, widths](TensorNode& out) {
        Eigen::Index off = 0;
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i]->requires_grad)
                nodes[i]->accumulate(out.grad.middleCols(off, widths[i]));
            off += widths[i];
        }
    });
}

Tensor sum(const Tensor& a) {
    auto an = a.node();
    return record(Mat::Constant(1, 1, a.value().sum()), {a}, [an](TensorNode& out) {
        if (an->requires_grad)
            an->accumulate(Mat::Constant(an->val.rows(), an->val.cols(), out.grad(0, 0)));
    });
}

Tensor mean(const Tensor& a) {
    double n = static_cast<double>(a.rows() * a.cols());
    auto an = a.node();
    return record(Mat::Constant(1, 1, a.value().sum() / n), {a}, [an, n](TensorNode& out) {
        if (an->requires_grad)
            an->accumulate(Mat::Constant(an->val.rows(), an->val.cols(), out.grad(0, 0) / n));
    });
}

Tensor gelu(const Tensor& a) {
    static constexpr double kInvSqrt2 = 0.7071067811865476;
    static constexpr double kInvSqrt2Pi = 0.3989422804014327;
    Mat y = a.value().unaryExpr([](double x) {
        return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    });
    auto an = a.node();
    return record(std::move(y), {a}, [an](TensorNode& out) {
        if (!an->requires_grad) return;
        Mat d = an->val.unaryExpr([](double x) {
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
        an->accumulate(out.grad.cwiseProduct(d));
    });
}

Tensor softmax(const Tensor& a, int axis) {
    if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
    if (a.rows() == 0 || a.cols() == 0) throw std::invalid_argument("softmax: empty axis");
    check_finite(a.value(), "softmax");
    Mat y;
    if (axis == 1) {
        y = a.value();
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
            Eigen::RowVectorXd row = y.row(i);
            row.array() -= row.maxCoeff();
            Eigen::RowVectorXd e = row.array().exp();
            y.row(i) = e / e.sum();
        }
    } else {
        y = a.value();
        for (Eigen::Index j = 0; j < y.cols(); ++j) {
            Eigen::VectorXd col = y.col(j);
            col.array() -= col.maxCoeff();
            Eigen::VectorXd e = col.array().exp();
            y.col(j) = e / e.sum();
        }
    }
    auto an = a.node();
    return record(std::move(y), {a}, [an, axis](TensorNode& out) {
        if (!an->requires_grad) return;
        // dL/dx = s .* (g - sum(g .* s)) per softmax slice
        Mat dx = out.grad;
        if (axis == 1) {
            for (Eigen::Index i = 0; i < dx.rows(); ++i) {
                double dot = out.grad.row(i).dot(out.val.row(i));
                dx.row(i) = out.val.row(i).cwiseProduct(
                    (out.grad.row(i).array() - dot).matrix());
            }
        } else {
            for (Eigen::Index j = 0; j < dx.cols(); ++j) {
                double dot = out.grad.col(j).dot(out.val.col(j));
                dx.col(j) = out.val.col(j).cwiseProduct(
                    (out.grad.col(j).array() - dot).matrix());
            }
        }
        an->accumulate(dx);
    });
}

Tensor rms_norm_rows(const Tensor& a, const Tensor& gain, double eps) {
    if (gain.rows() != 1 || gain.cols() != a.cols())
        throw std::invalid_argument("rms_norm_rows: gain must be 1 x cols(a)");
    Eigen::Index n = a.cols();
    Mat y(a.rows(), n);
    Eigen::VectorXd inv_rms(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        double ms = a.value().row(i).squaredNorm() / static_cast<double>(n);
        inv_rms(i) = 1.0 / std::sqrt(ms + eps);
        y.row(i) = a.value().row(i) * inv_rms(i);
    }
    Mat normed = y;
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        y.row(i) = y.row(i).cwiseProduct(gain.value().row(0));
    auto an = a.node(); auto gn = gain.node();
    return record(std::move(y), {a, gain},
                  [an, gn, normed, inv_rms, n](TensorNode& out) {
        if (gn->requires_grad) {
            Eigen::RowVectorXd gg = Eigen::RowVectorXd::Zero(normed.cols());
            for (Eigen::Index i = 0; i < normed.rows(); ++i)
                gg += out.grad.row(i).cwiseProduct(normed.row(i));
            gn->accumulate(gg);
        }
        if (an->requires_grad) {
            Mat dx(an->val.rows(), an->val.cols());
            for (Eigen::Index i = 0; i < dx.rows(); ++i) {
                Eigen::RowVectorXd gy = out.grad.row(i).cwiseProduct(gn->val.row(0));
                double dot = gy.dot(an->val.row(i)) * inv_rms(i) * inv_rms(i) /
                             static_cast<double>(n);
                dx.row(i) = inv_rms(i) * (gy - dot * an->val.row(i));
            }
            an->accumulate(dx);
        }
    });
}

Tensor row_broadcast_mul(const Tensor& a, const Tensor& g) {
    if (g.rows() != 1 || g.cols() != a.cols())
        throw std::invalid_argument("row_broadcast_mul: g must be 1 x cols(a)");
    Mat y = a.value();
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        y.row(i) = y.row(i).cwiseProduct(g.value().row(0));
    auto an = a.node(); auto gn = g.node();
    return record(std::move(y), {a, g}, [an, gn](TensorNode& out) {
        if (an->requires_grad) {
            Mat dx = out.grad;
            for (Eigen::Index i = 0; i < dx.rows(); ++i)
                dx.row(i) = dx.row(i).cwiseProduct(gn->val.row(0));
            an->accumulate(dx);
        }
        if (gn->requires_grad) {
            Eigen::RowVectorXd gg = Eigen::RowVectorXd::Zero(an->val.cols());
            for (Eigen::Index i = 0; i < an->val.rows(); ++i)
                gg += out.grad.row(i).cwiseProduct(an->val.row(i));
            gn->accumulate(gg);
        }
    });
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
    Mat y(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows())
            throw std::out_of_range("embed_rows: id out of range");
        y.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    }
    auto tn = table.node();
    return record(std::move(y), {table}, [tn, ids](TensorNode& out) {
        if (!tn->requires_grad) return;
        Mat g = Mat::Zero(tn->val.rows(), tn->val.cols());
        for (size_t i = 0; i < ids.size(); ++i)
            g.row(ids[i]) += out.grad.row(static_cast<Eigen::Index>(i));
        tn->accumulate(g);
    });
}

namespace {
// stable per-row log softmax
Mat log_softmax_rows(const Mat& logits) {
    Mat y = logits;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        double mx = y.row(i).maxCoeff();
        double lse = std::log((y.row(i).array() - mx).exp().sum()) + mx;
        y.row(i).array() -= lse;
    }
    return y;
}
} // namespace

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<bool>& mask) {
    if (static_cast<Eigen::Index>(targets.size()) != logits.rows() ||
        targets.size() != mask.size())
        throw std::invalid_argument("cross_entropy: length mismatch");
    size_t active = 0;
    for (bool b : mask) active += b ? 1 : 0;
    if (active == 0) throw std::invalid_argument("cross_entropy: all positions masked");
    for (size_t t = 0; t < targets.size(); ++t)
        if (targets[t] < 0 || targets[t] >= logits.cols())
            throw std::out_of_range("cross_entropy: target out of vocabulary");

    Mat lsm = log_softmax_rows(logits.value());
    double loss = 0.0;
    for (size_t t = 0; t < targets.size(); ++t)
        if (mask[t]) loss -= lsm(static_cast<Eigen::Index>(t), targets[t]);
    loss /= static_cast<double>(active);

    auto ln = logits.node();
    return record(Mat::Constant(1, 1, loss), {logits},
                  [ln, lsm, targets, mask, active](TensorNode& out) {
        if (!ln->requires_grad) return;
        double g = out.grad(0, 0) / static_cast<double>(active);
        Mat dx = Mat::Zero(lsm.rows(), lsm.cols());
        for (size_t t = 0; t < targets.size(); ++t) {
            if (!mask[t]) continue;
            Eigen::Index r = static_cast<Eigen::Index>(t);
            dx.row(r) = (lsm.row(r).array().exp() * g).matrix();
            dx(r, targets[t]) -= g;
        }
        ln->accumulate(dx);
    });
}

Tensor picked_log_probs(const Tensor& logits, const std::vector<int>& ids) {
    if (static_cast<Eigen::Index>(ids.size()) != logits.rows())
        throw std::invalid_argument("picked_log_probs: length mismatch");
    Mat lsm = log_softmax_rows(logits.value());
    Mat y(1, static_cast<Eigen::Index>(ids.size()));
    for (size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || ids[t] >= logits.cols())
            throw std::out_of_range("picked_log_probs: id out of vocabulary");
        y(0, static_cast<Eigen::Index>(t)) = lsm(static_cast<Eigen::Index>(t), ids[t]);
    }
    auto ln = logits.node();
    return record(std::move(y), {logits}, [ln, lsm, ids](TensorNode& out) {
        if (!ln->requires_grad) return;
        Mat dx = Mat::Zero(lsm.rows(), lsm.cols());
        for (size_t t = 0; t < ids.size(); ++t) {
            Eigen::Index r = static_cast<Eigen::Index>(t);
            double g = out.grad(0, r);
            dx.row(r) += (lsm.row(r).array().exp() * (-g)).matrix();
            dx(r, ids[t]) += g;
        }
        ln->accumulate(dx);
    });
}

void backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
        throw std::invalid_argument("backward: loss must be scalar");
    // topo order by DFS; reverse visit propagates grads once per node
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->accumulate(Mat::Constant(1, 1, 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn && n->grad_ready) n->backward_fn(*n);
    }
}

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg,
               double clip_norm) {
    if (cfg.lr <= 0.0) throw std::invalid_argument("adam_step: lr must be positive");
    if (state.m.empty()) {
        for (auto& p : params) {
            state.m.push_back(Mat::Zero(p.rows(), p.cols()));
            state.v.push_back(Mat::Zero(p.rows(), p.cols()));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state/params size mismatch");

    double gscale = 1.0;
    if (clip_norm > 0.0) {
        double sq = 0.0;
        for (auto& p : params)
            if (p.has_grad()) sq += p.grad().squaredNorm();
        double norm = std::sqrt(sq);
        if (norm > clip_norm) gscale = clip_norm / norm;
    }

    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) continue;
        Mat g = params[i].grad() * gscale;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        Mat mhat = state.m[i] / bc1;
        Mat vhat = state.v[i] / bc2;
        params[i].mutable_value() -=
            cfg.lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + cfg.eps).matrix());
    }
}

} // namespace molr
