#include "styleadapt/tensor.hpp"

#include "styleadapt/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace styleadapt {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local int g_no_grad_depth = 0;

Tensor make_node(Matrix value) {
    auto node = std::make_shared<TensorNode>();
    node->val = std::move(value);
    node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

bool any_requires_grad(const std::vector<Tensor>& parents) {
    for (const auto& p : parents) {
        if (p->requires_grad) return true;
    }
    return false;
}

// Attaches parents + backprop closure when recording is active.
Tensor finish(Tensor node, std::vector<Tensor> parents, std::function<void(TensorNode&)> fn) {
    if (g_no_grad_depth == 0 && any_requires_grad(parents)) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backprop = std::move(fn);
    }
    return node;
}

void ensure_grad(TensorNode& n) {
    if (n.grad.rows() != n.val.rows() || n.grad.cols() != n.val.cols()) {
        n.grad = Matrix::Zero(n.val.rows(), n.val.cols());
    }
}

void accum(TensorNode& n, const Matrix& g) {
    if (!n.requires_grad) return;
    ensure_grad(n);
    n.grad += g;
}

void require_shape(const Tensor& t, long rows, long cols, const char* what) {
    if (t->rows() != rows || t->cols() != cols) {
        throw ContractError("tensor/shape",
                            std::string(what) + ": expected " + std::to_string(rows) + "x" +
                                std::to_string(cols) + ", got " + std::to_string(t->rows()) + "x" +
                                std::to_string(t->cols()));
    }
}

}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

Tensor constant(Matrix value) { return make_node(std::move(value)); }

Tensor parameter(Matrix value, std::string name) {
    Tensor t = make_node(std::move(value));
    t->requires_grad = true;
    t->name = std::move(name);
    return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a->cols() != b->rows()) {
        throw ContractError("tensor/shape", "matmul: inner dimensions disagree");
    }
    Tensor out = make_node(a->val * b->val);
    TensorNode* pa = a.get();
    TensorNode* pb = b.get();
    return finish(out, {a, b}, [pa, pb](TensorNode& n) {
        accum(*pa, n.grad * pb->val.transpose());
        accum(*pb, pa->val.transpose() * n.grad);
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x->cols() != w->rows() || b->rows() != 1 || b->cols() != w->cols()) {
        throw ContractError("tensor/shape", "linear: dimension mismatch");
    }
    Matrix v = x->val * w->val;
    v.rowwise() += b->val.row(0);
    Tensor out = make_node(std::move(v));
    TensorNode* px = x.get();
    TensorNode* pw = w.get();
    TensorNode* pb = b.get();
    return finish(out, {x, w, b}, [px, pw, pb](TensorNode& n) {
        accum(*px, n.grad * pw->val.transpose());
        accum(*pw, px->val.transpose() * n.grad);
        accum(*pb, n.grad.colwise().sum());
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_shape(b, a->rows(), a->cols(), "add");
    Tensor out = make_node(a->val + b->val);
    TensorNode* pa = a.get();
    TensorNode* pb = b.get();
    return finish(out, {a, b}, [pa, pb](TensorNode& n) {
        accum(*pa, n.grad);
        accum(*pb, n.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_shape(b, a->rows(), a->cols(), "sub");
    Tensor out = make_node(a->val - b->val);
    TensorNode* pa = a.get();
    TensorNode* pb = b.get();
    return finish(out, {a, b}, [pa, pb](TensorNode& n) {
        accum(*pa, n.grad);
        accum(*pb, -n.grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_shape(b, a->rows(), a->cols(), "mul");
    Tensor out = make_node(a->val.cwiseProduct(b->val));
    TensorNode* pa = a.get();
    TensorNode* pb = b.get();
    return finish(out, {a, b}, [pa, pb](TensorNode& n) {
        accum(*pa, n.grad.cwiseProduct(pb->val));
        accum(*pb, n.grad.cwiseProduct(pa->val));
    });
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = make_node(a->val * s);
    TensorNode* pa = a.get();
    return finish(out, {a}, [pa, s](TensorNode& n) { accum(*pa, n.grad * s); });
}

Tensor relu(const Tensor& a) {
    Tensor out = make_node(a->val.cwiseMax(0.0));
    TensorNode* pa = a.get();
    auto mask = std::make_shared<Matrix>((a->val.array() > 0.0).cast<double>().matrix());
    return finish(out, {a}, [pa, mask](TensorNode& n) { accum(*pa, n.grad.cwiseProduct(*mask)); });
}

Tensor exp_elem(const Tensor& a) {
    Tensor out = make_node(a->val.array().exp().matrix());
    TensorNode* pa = a.get();
    auto saved = std::make_shared<Matrix>(out->val);
    return finish(out, {a}, [pa, saved](TensorNode& n) { accum(*pa, n.grad.cwiseProduct(*saved)); });
}

Tensor slice_rows(const Tensor& x, long start, long count) {
    if (start < 0 || count < 0 || start + count > x->rows()) {
        throw ContractError("tensor/shape", "slice_rows: range out of bounds");
    }
    Tensor out = make_node(x->val.middleRows(start, count));
    TensorNode* px = x.get();
    return finish(out, {x}, [px, start, count](TensorNode& n) {
        if (!px->requires_grad) return;
        ensure_grad(*px);
        px->grad.middleRows(start, count) += n.grad;
    });
}

Tensor vconcat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("tensor/shape", "vconcat: no parts");
    long rows = 0;
    long cols = parts.front()->cols();
    for (const auto& p : parts) {
        if (p->cols() != cols) throw ContractError("tensor/shape", "vconcat: column mismatch");
        rows += p->rows();
    }
    Matrix v(rows, cols);
    long r = 0;
    for (const auto& p : parts) {
        v.middleRows(r, p->rows()) = p->val;
        r += p->rows();
    }
    Tensor out = make_node(std::move(v));
    auto offsets = std::make_shared<std::vector<long>>();
    r = 0;
    for (const auto& p : parts) {
        offsets->push_back(r);
        r += p->rows();
    }
    return finish(out, parts, [offsets](TensorNode& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            TensorNode& p = *n.parents[i];
            if (!p.requires_grad) continue;
            ensure_grad(p);
            p.grad += n.grad.middleRows((*offsets)[i], p.val.rows());
        }
    });
}

Tensor hconcat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("tensor/shape", "hconcat: no parts");
    long rows = parts.front()->rows();
    long cols = 0;
    for (const auto& p : parts) {
        if (p->rows() != rows) throw ContractError("tensor/shape", "hconcat: row mismatch");
        cols += p->cols();
    }
    Matrix v(rows, cols);
    long c = 0;
    for (const auto& p : parts) {
        v.middleCols(c, p->cols()) = p->val;
        c += p->cols();
    }
    Tensor out = make_node(std::move(v));
    auto offsets = std::make_shared<std::vector<long>>();
    c = 0;
    for (const auto& p : parts) {
        offsets->push_back(c);
        c += p->cols();
    }
    return finish(out, parts, [offsets](TensorNode& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            TensorNode& p = *n.parents[i];
            if (!p.requires_grad) continue;
            ensure_grad(p);
            p.grad += n.grad.middleCols((*offsets)[i], p.val.cols());
        }
    });
}

Tensor gather_rows(const Tensor& x, std::vector<long> row_ids) {
    Matrix v(static_cast<long>(row_ids.size()), x->cols());
    for (std::size_t i = 0; i < row_ids.size(); ++i) {
        if (row_ids[i] < 0 || row_ids[i] >= x->rows()) {
            throw ContractError("tensor/shape", "gather_rows: index out of bounds");
        }
        v.row(static_cast<long>(i)) = x->val.row(row_ids[i]);
    }
    Tensor out = make_node(std::move(v));
    TensorNode* px = x.get();
    auto ids = std::make_shared<std::vector<long>>(std::move(row_ids));
    return finish(out, {x}, [px, ids](TensorNode& n) {
        if (!px->requires_grad) return;
        ensure_grad(*px);
        for (std::size_t i = 0; i < ids->size(); ++i) {
            px->grad.row((*ids)[i]) += n.grad.row(static_cast<long>(i));
        }
    });
}

Tensor window_concat(const Tensor& x, int window) {
    long t = x->rows();
    long e = x->cols();
    if (window < 1 || t < window) {
        throw ContractError("tensor/shape", "window_concat: sequence shorter than window");
    }
    long n_out = t - window + 1;
    Matrix v(n_out, window * e);
    for (long i = 0; i < n_out; ++i) {
        for (int w = 0; w < window; ++w) {
            v.block(i, w * e, 1, e) = x->val.row(i + w);
        }
    }
    Tensor out = make_node(std::move(v));
    TensorNode* px = x.get();
    return finish(out, {x}, [px, window, e](TensorNode& n) {
        if (!px->requires_grad) return;
        ensure_grad(*px);
        for (long i = 0; i < n.val.rows(); ++i) {
            for (int w = 0; w < window; ++w) {
                px->grad.row(i + w) += n.grad.block(i, w * e, 1, e);
            }
        }
    });
}

Tensor col_max(const Tensor& x) {
    long n = x->rows();
    long f = x->cols();
    if (n < 1) throw ContractError("tensor/shape", "col_max: empty input");
    Matrix v(1, f);
    auto argmax = std::make_shared<std::vector<long>>(f);
    for (long c = 0; c < f; ++c) {
        long best = 0;
        for (long r = 1; r < n; ++r) {
            if (x->val(r, c) > x->val(best, c)) best = r;
        }
        (*argmax)[c] = best;
        v(0, c) = x->val(best, c);
    }
    Tensor out = make_node(std::move(v));
    TensorNode* px = x.get();
    return finish(out, {x}, [px, argmax](TensorNode& n) {
        if (!px->requires_grad) return;
        ensure_grad(*px);
        for (long c = 0; c < n.val.cols(); ++c) {
            px->grad((*argmax)[c], c) += n.grad(0, c);
        }
    });
}

Tensor weighted_sum(const Tensor& x, const Matrix& weights) {
    if (weights.rows() != x->rows() || weights.cols() != x->cols()) {
        throw ContractError("tensor/shape", "weighted_sum: weight shape mismatch");
    }
    Matrix v(1, 1);
    v(0, 0) = x->val.cwiseProduct(weights).sum();
    Tensor out = make_node(std::move(v));
    TensorNode* px = x.get();
    auto w = std::make_shared<Matrix>(weights);
    return finish(out, {x}, [px, w](TensorNode& n) { accum(*px, *w * n.grad(0, 0)); });
}

Tensor sum_all(const Tensor& x) {
    return weighted_sum(x, Matrix::Ones(x->rows(), x->cols()));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    long n = x->rows();
    long d = x->cols();
    require_shape(gamma, 1, d, "layer_norm gamma");
    require_shape(beta, 1, d, "layer_norm beta");
    auto xhat = std::make_shared<Matrix>(n, d);
    auto inv_std = std::make_shared<Eigen::VectorXd>(n);
    Matrix v(n, d);
    for (long i = 0; i < n; ++i) {
        double mu = x->val.row(i).mean();
        double var = (x->val.row(i).array() - mu).square().mean();
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)(i) = inv;
        xhat->row(i) = (x->val.row(i).array() - mu).matrix() * inv;
        v.row(i) = xhat->row(i).cwiseProduct(gamma->val.row(0)) + beta->val.row(0);
    }
    Tensor out = make_node(std::move(v));
    TensorNode* px = x.get();
    TensorNode* pg = gamma.get();
    TensorNode* pb = beta.get();
    return finish(out, {x, gamma, beta}, [px, pg, pb, xhat, inv_std](TensorNode& n) {
        long rows = n.val.rows();
        long d2 = n.val.cols();
        accum(*pb, n.grad.colwise().sum());
        accum(*pg, n.grad.cwiseProduct(*xhat).colwise().sum());
        if (!px->requires_grad) return;
        ensure_grad(*px);
        for (long i = 0; i < rows; ++i) {
            Eigen::RowVectorXd dxhat = n.grad.row(i).cwiseProduct(pg->val.row(0));
            double m1 = dxhat.mean();
            double m2 = dxhat.cwiseProduct(xhat->row(i)).mean();
            px->grad.row(i) +=
                ((dxhat.array() - m1 - xhat->row(i).array() * m2) * (*inv_std)(i)).matrix();
        }
        (void)d2;
    });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    long v_size = table->rows();
    Matrix v(static_cast<long>(ids.size()), table->cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v_size) {
            throw ContractError("tensor/vocab", "embedding: token id out of range");
        }
        v.row(static_cast<long>(i)) = table->val.row(ids[i]);
    }
    Tensor out = make_node(std::move(v));
    TensorNode* pt = table.get();
    auto idx = std::make_shared<std::vector<int>>(ids);
    return finish(out, {table}, [pt, idx](TensorNode& n) {
        if (!pt->requires_grad) return;
        ensure_grad(*pt);
        for (std::size_t i = 0; i < idx->size(); ++i) {
            pt->grad.row((*idx)[i]) += n.grad.row(static_cast<long>(i));
        }
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, long batch, long t_q,
                 long t_k, int heads, bool causal, const Matrix& key_mask) {
    long d = q->cols();
    if (q->rows() != batch * t_q || k->rows() != batch * t_k || v->rows() != batch * t_k ||
        k->cols() != d || v->cols() != d) {
        throw ContractError("tensor/shape", "attention: input shapes disagree");
    }
    if (d % heads != 0) throw ContractError("tensor/shape", "attention: heads must divide dim");
    if (causal && t_q != t_k) throw ContractError("tensor/shape", "attention: causal needs square");
    if (key_mask.rows() != batch || key_mask.cols() != t_k) {
        throw ContractError("tensor/shape", "attention: key mask shape");
    }
    long dh = d / heads;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    constexpr double kNegInf = -1e30;

    auto probs = std::make_shared<std::vector<Matrix>>();
    bool record = grad_enabled() && (q->requires_grad || k->requires_grad || v->requires_grad);
    if (record) probs->reserve(static_cast<std::size_t>(batch * heads));

    Matrix out_v = Matrix::Zero(batch * t_q, d);
    for (long b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            auto qb = q->val.block(b * t_q, h * dh, t_q, dh);
            auto kb = k->val.block(b * t_k, h * dh, t_k, dh);
            auto vb = v->val.block(b * t_k, h * dh, t_k, dh);
            Matrix s = qb * kb.transpose() * inv_sqrt;
            for (long j = 0; j < t_k; ++j) {
                if (key_mask(b, j) == 0.0) s.col(j).setConstant(kNegInf);
            }
            if (causal) {
                for (long i = 0; i < t_q; ++i) {
                    for (long j = i + 1; j < t_k; ++j) s(i, j) = kNegInf;
                }
            }
            Matrix p(t_q, t_k);
            for (long i = 0; i < t_q; ++i) {
                double mx = s.row(i).maxCoeff();
                Eigen::RowVectorXd e = (s.row(i).array() - mx).exp();
                p.row(i) = e / e.sum();
            }
            out_v.block(b * t_q, h * dh, t_q, dh) = p * vb;
            if (record) probs->push_back(std::move(p));
        }
    }
    Tensor out = make_node(std::move(out_v));
    TensorNode* pq = q.get();
    TensorNode* pk = k.get();
    TensorNode* pv = v.get();
    return finish(out, {q, k, v},
                  [pq, pk, pv, probs, batch, t_q, t_k, heads, dh, inv_sqrt](TensorNode& n) {
                      if (pq->requires_grad) ensure_grad(*pq);
                      if (pk->requires_grad) ensure_grad(*pk);
                      if (pv->requires_grad) ensure_grad(*pv);
                      std::size_t pi = 0;
                      for (long b = 0; b < batch; ++b) {
                          for (int h = 0; h < heads; ++h, ++pi) {
                              const Matrix& p = (*probs)[pi];
                              auto dout = n.grad.block(b * t_q, h * dh, t_q, dh);
                              auto qb = pq->val.block(b * t_q, h * dh, t_q, dh);
                              auto kb = pk->val.block(b * t_k, h * dh, t_k, dh);
                              auto vb = pv->val.block(b * t_k, h * dh, t_k, dh);
                              Matrix dp = dout * vb.transpose();
                              Matrix ds(t_q, t_k);
                              for (long i = 0; i < t_q; ++i) {
                                  double dot = dp.row(i).cwiseProduct(p.row(i)).sum();
                                  ds.row(i) = p.row(i).cwiseProduct(
                                      (dp.row(i).array() - dot).matrix());
                              }
                              ds *= inv_sqrt;
                              if (pv->requires_grad) {
                                  pv->grad.block(b * t_k, h * dh, t_k, dh) +=
                                      p.transpose() * dout;
                              }
                              if (pq->requires_grad) {
                                  pq->grad.block(b * t_q, h * dh, t_q, dh) += ds * kb;
                              }
                              if (pk->requires_grad) {
                                  pk->grad.block(b * t_k, h * dh, t_k, dh) +=
                                      ds.transpose() * qb;
                              }
                          }
                      }
                  });
}

Tensor nll_rows(const Tensor& logits, const std::vector<int>& targets, double label_smoothing,
                const std::vector<bool>* ignore) {
    long n = logits->rows();
    long vocab = logits->cols();
    if (static_cast<long>(targets.size()) != n) {
        throw ContractError("tensor/shape", "nll_rows: target count mismatch");
    }
    if (ignore && static_cast<long>(ignore->size()) != n) {
        throw ContractError("tensor/shape", "nll_rows: ignore mask mismatch");
    }
    auto probs = std::make_shared<Matrix>(n, vocab);
    Matrix v = Matrix::Zero(n, 1);
    for (long i = 0; i < n; ++i) {
        if (ignore && (*ignore)[i]) {
            probs->row(i).setZero();
            continue;
        }
        int t = targets[i];
        if (t < 0 || t >= vocab) throw ContractError("tensor/vocab", "nll_rows: target out of range");
        double mx = logits->val.row(i).maxCoeff();
        Eigen::RowVectorXd shifted = logits->val.row(i).array() - mx;
        double lse = std::log(shifted.array().exp().sum());
        Eigen::RowVectorXd logp = shifted.array() - lse;
        probs->row(i) = logp.array().exp();
        if (label_smoothing == 0.0) {
            v(i, 0) = -logp(t);
        } else {
            double uniform_part = logp.mean();
            v(i, 0) = -((1.0 - label_smoothing) * logp(t) + label_smoothing * uniform_part);
        }
    }
    Tensor out = make_node(std::move(v));
    TensorNode* pl = logits.get();
    auto tgt = std::make_shared<std::vector<int>>(targets);
    auto ign = std::make_shared<std::vector<bool>>(ignore ? *ignore : std::vector<bool>());
    return finish(out, {logits}, [pl, probs, tgt, ign, label_smoothing, vocab](TensorNode& n) {
        if (!pl->requires_grad) return;
        ensure_grad(*pl);
        for (long i = 0; i < n.val.rows(); ++i) {
            if (!ign->empty() && (*ign)[i]) continue;
            double g = n.grad(i, 0);
            if (g == 0.0) continue;
            Eigen::RowVectorXd dlogit = probs->row(i);
            if (label_smoothing == 0.0) {
                dlogit((*tgt)[i]) -= 1.0;
            } else {
                dlogit((*tgt)[i]) -= (1.0 - label_smoothing);
                dlogit.array() -= label_smoothing / static_cast<double>(vocab);
            }
            pl->grad.row(i) += g * dlogit;
        }
    });
}

Eigen::VectorXd softmax_vector(const Eigen::VectorXd& logits) {
    double mx = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - mx).exp();
    return e / e.sum();
}

Eigen::VectorXd log_softmax_vector(const Eigen::VectorXd& logits) {
    double mx = logits.maxCoeff();
    Eigen::VectorXd shifted = logits.array() - mx;
    double lse = std::log(shifted.array().exp().sum());
    return shifted.array() - lse;
}

void backward(const Tensor& loss) {
    if (loss->rows() != 1 || loss->cols() != 1) {
        throw ContractError("tensor/shape", "backward: loss must be scalar");
    }
    if (!loss->requires_grad) return;

    // Collect the reachable recorded subgraph; creation ids give a valid
    // reverse topological order because parents always precede children.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<TensorNode*> stack{loss.get()};
    seen.insert(loss.get());
    while (!stack.empty()) {
        TensorNode* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](TensorNode* a, TensorNode* b) { return a->id > b->id; });

    ensure_grad(*loss);
    loss->grad(0, 0) += 1.0;
    for (TensorNode* n : order) {
        if (n->backprop && n->grad.size() != 0) n->backprop(*n);
    }
}

void zero_grad(const std::vector<Tensor>& params) {
    for (const auto& p : params) {
        p->grad = Matrix::Zero(p->val.rows(), p->val.cols());
    }
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double lr, double clip_norm, double beta1,
                             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), clip_norm_(clip_norm), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
    for (const auto& p : params_) {
        m_.push_back(Matrix::Zero(p->val.rows(), p->val.cols()));
        v_.push_back(Matrix::Zero(p->val.rows(), p->val.cols()));
    }
}

void AdamOptimizer::step() {
    ++t_;
    double sq_norm = 0.0;
    for (const auto& p : params_) {
        if (p->grad.size() != 0) sq_norm += p->grad.squaredNorm();
    }
    double norm = std::sqrt(sq_norm);
    double scale = (clip_norm_ > 0.0 && norm > clip_norm_) ? clip_norm_ / norm : 1.0;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        TensorNode& p = *params_[i];
        Matrix g = (p.grad.size() != 0) ? Matrix(p.grad * scale)
                                        : Matrix(Matrix::Zero(p.val.rows(), p.val.cols()));
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        Matrix mhat = m_[i] / bc1;
        Matrix vhat = v_[i] / bc2;
        p.val -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
    }
}

void AdamOptimizer::zero_grad() { styleadapt::zero_grad(params_); }

double Rng::uniform() {
    return std::generate_canonical<double, 53>(gen_);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen_);
}

int Rng::uniform_int(int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    return d(gen_);
}

int Rng::categorical(const Eigen::VectorXd& probs) {
    double u = uniform();
    double acc = 0.0;
    for (long i = 0; i < probs.size(); ++i) {
        acc += probs(i);
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
}

Rng Rng::derive(const std::string& tag) const {
    std::uint64_t h = fnv1a64(tag);
    return Rng(seed_ ^ (h * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull));
}

Matrix init_uniform(long rows, long cols, double bound, Rng& rng) {
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i) {
        for (long j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
    }
    return m;
}

Matrix init_normal(long rows, long cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i) {
        for (long j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
    }
    return m;
}

Matrix init_xavier(long rows, long cols, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    return init_uniform(rows, cols, bound, rng);
}

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::uint64_t matrix_checksum(const Matrix& m) {
    return fnv1a64(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

std::uint64_t params_checksum(const std::vector<Tensor>& params) {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& p : params) {
        h = fnv1a64(p->name.data(), p->name.size(), h);
        h = fnv1a64(p->val.data(), sizeof(double) * static_cast<std::size_t>(p->val.size()), h);
    }
    return h;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

void check_finite(const Matrix& m, const std::string& what) {
    if (!m.allFinite()) {
        throw NumericError("numeric/nonfinite", what + " contains NaN or Inf");
    }
}

}  // namespace styleadapt
