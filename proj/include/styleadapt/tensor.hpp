#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace styleadapt {

using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over 2-D double matrices. Dynamic tape: every op
// allocates a node holding its value, its parents, and a closure that pushes
// the node's gradient into the parents. Batched 3-D activations are stored
// flattened as (batch*time, dim) rows; fused ops (attention, layer norm,
// softmax losses) carry the extra shape information explicitly.
// ---------------------------------------------------------------------------

struct TensorNode;
using Tensor = std::shared_ptr<TensorNode>;

struct TensorNode {
    Matrix val;
    Matrix grad;  // sized on first accumulation of a backward pass
    bool requires_grad{false};
    bool grad_ready{false};
    std::uint64_t id{0};
    std::string name;  // set for parameters, empty for intermediates
    std::vector<Tensor> parents;
    std::function<void(TensorNode&)> backprop;

    long rows() const { return val.rows(); }
    long cols() const { return val.cols(); }
    double scalar() const { return val(0, 0); }
};

// Suppresses graph recording for everything created while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Leaf constructors.
Tensor constant(Matrix value);
Tensor parameter(Matrix value, std::string name);

// Elementwise / linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x*w + b (b is 1 x n)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor exp_elem(const Tensor& a);

// Structure.
Tensor slice_rows(const Tensor& x, long start, long count);
Tensor vconcat(const std::vector<Tensor>& parts);
Tensor hconcat(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, std::vector<long> row_ids);
Tensor window_concat(const Tensor& x, int window);  // (T,E) -> (T-w+1, w*E)
Tensor col_max(const Tensor& x);                    // (N,F) -> (1,F), max over rows

// Reductions.
Tensor weighted_sum(const Tensor& x, const Matrix& weights);  // scalar, weights constant
Tensor sum_all(const Tensor& x);

// Neural-net fused ops.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// Scaled dot-product attention over flattened rows. q is (B*Tq, d); k and v
// are (B*Tk, d). key_mask is (B, Tk) with entries in {0,1}. causal requires
// Tq == Tk and masks j > i within each sequence.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, long batch, long t_q,
                 long t_k, int heads, bool causal, const Matrix& key_mask);

// Per-row negative log-likelihood of the target ids under row softmax,
// optionally label-smoothed: returns (N,1). Rows listed in `ignore` get 0.
Tensor nll_rows(const Tensor& logits, const std::vector<int>& targets, double label_smoothing = 0.0,
                const std::vector<bool>* ignore = nullptr);

// Raw (no-grad) helpers used by decoding and classification paths.
Eigen::VectorXd softmax_vector(const Eigen::VectorXd& logits);
Eigen::VectorXd log_softmax_vector(const Eigen::VectorXd& logits);

// Runs reverse-mode on a scalar tensor, accumulating into .grad of every
// reachable node with requires_grad. Gradients of parameters accumulate
// across calls until zero_grad.
void backward(const Tensor& loss);
void zero_grad(const std::vector<Tensor>& params);

// ---------------------------------------------------------------------------
// Optimizer: Adam with global-norm gradient clipping.
// ---------------------------------------------------------------------------
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, double lr, double clip_norm = 1.0,
                  double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<Matrix> m_, v_;
    double lr_, clip_norm_, beta1_, beta2_, eps_;
    long t_{0};
};

// ---------------------------------------------------------------------------
// Seeded RNG. All randomness in the project flows through instances of this,
// derived from one master seed, so single-threaded runs are reproducible.
// ---------------------------------------------------------------------------
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed), seed_(seed) {}

    double uniform();                    // [0,1)
    double uniform(double lo, double hi);
    double normal(double mean = 0.0, double stddev = 1.0);
    int uniform_int(int lo, int hi);     // inclusive
    int categorical(const Eigen::VectorXd& probs);
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Deterministically derives an independent stream for a named sub-task.
    Rng derive(const std::string& tag) const;

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::uint64_t seed_{0};
};

// Parameter initializers.
Matrix init_uniform(long rows, long cols, double bound, Rng& rng);
Matrix init_normal(long rows, long cols, double stddev, Rng& rng);
Matrix init_xavier(long rows, long cols, Rng& rng);

// ---------------------------------------------------------------------------
// Checksums (FNV-1a over raw little-endian bytes). Bit-exact equality of
// parameter sets is asserted through these.
// ---------------------------------------------------------------------------
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 14695981039346656037ull);
std::uint64_t fnv1a64(const std::string& s);
std::uint64_t matrix_checksum(const Matrix& m);
std::uint64_t params_checksum(const std::vector<Tensor>& params);

bool all_finite(const Matrix& m);
void check_finite(const Matrix& m, const std::string& what);

}  // namespace styleadapt
