#pragma once

#include <span>
#include <vector>

#include "crl/gradcheck.hpp"
#include "crl/nn.hpp"
#include "crl/ops.hpp"

namespace crl {

// Finite-difference cases for every differentiable primitive and the neural
// composites built on them. Consumed by the test suite and `gradcheck`.

namespace detail {

inline Shape rand_shape(Rng& rng, int max_rank = 2, int max_dim = 5) {
    const int rank = 1 + rng.uniform_int(max_rank);
    Shape s;
    for (int i = 0; i < rank; ++i) s.push_back(1 + rng.uniform_int(max_dim));
    return s;
}

// Scalarize a non-scalar output with fixed random weights.
inline Tensor weighted_sum(Tape& tape, const Tensor& x, const std::vector<double>& w) {
    Tensor wt = constant(tape, x.shape(), w);
    return reduce_sum(mul(x, wt));
}

inline std::vector<double> rand_weights(Rng& rng, std::int64_t n) {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    return w;
}

template <class BinOp>
OpCheck binary_check(const std::string& name, BinOp op) {
    return {name, [op](Rng& rng) {
                GradCase c;
                Shape s = rand_shape(rng);
                c.shapes = {s, s};
                auto w = rand_weights(rng, numel(s));
                c.build = [op, w](Tape& t, const std::vector<Tensor>& in) {
                    return weighted_sum(t, op(in[0], in[1]), w);
                };
                return c;
            }};
}

template <class UnOp>
OpCheck unary_check(const std::string& name, UnOp op, double lo = -2.0, double hi = 2.0) {
    return {name, [op, lo, hi](Rng& rng) {
                GradCase c;
                Shape s = rand_shape(rng);
                c.shapes = {s};
                auto w = rand_weights(rng, numel(s));
                c.sample = [s, lo, hi](Rng& r) {
                    std::vector<double> v(static_cast<std::size_t>(numel(s)));
                    for (double& x : v) x = r.uniform(lo, hi);
                    return std::vector<std::vector<double>>{v};
                };
                c.build = [op, w](Tape& t, const std::vector<Tensor>& in) {
                    return weighted_sum(t, op(in[0]), w);
                };
                return c;
            }};
}

}  // namespace detail

inline std::vector<OpCheck> diffcore_checks() {
    using detail::rand_weights;
    using detail::weighted_sum;
    std::vector<OpCheck> checks;

    checks.push_back(detail::binary_check("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }));
    checks.push_back(detail::binary_check("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }));
    checks.push_back(detail::binary_check("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }));

    checks.push_back({"div", [](Rng& rng) {
                          GradCase c;
                          Shape s = detail::rand_shape(rng);
                          c.shapes = {s, s};
                          auto w = rand_weights(rng, numel(s));
                          c.sample = [s](Rng& r) {
                              std::vector<double> a(static_cast<std::size_t>(numel(s)));
                              std::vector<double> b(a.size());
                              for (double& x : a) x = r.uniform(-2.0, 2.0);
                              for (double& x : b) {
                                  const double mag = r.uniform(0.5, 2.5);
                                  x = r.uniform() < 0.5 ? mag : -mag;
                              }
                              return std::vector<std::vector<double>>{a, b};
                          };
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, div(in[0], in[1]), w);
                          };
                          return c;
                      }});

    checks.push_back({"add_n", [](Rng& rng) {
                          GradCase c;
                          Shape s = detail::rand_shape(rng);
                          const int k = 2 + rng.uniform_int(3);
                          c.shapes.assign(static_cast<std::size_t>(k), s);
                          auto w = rand_weights(rng, numel(s));
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, add_n(in), w);
                          };
                          return c;
                      }});

    checks.push_back({"scale", [](Rng& rng) {
                          GradCase c;
                          Shape s = detail::rand_shape(rng);
                          c.shapes = {s};
                          const double k = rng.uniform(-3.0, 3.0);
                          auto w = rand_weights(rng, numel(s));
                          c.build = [k, w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, scale(in[0], k), w);
                          };
                          return c;
                      }});

    checks.push_back({"add_scalar", [](Rng& rng) {
                          GradCase c;
                          Shape s = detail::rand_shape(rng);
                          c.shapes = {s};
                          const double k = rng.uniform(-3.0, 3.0);
                          auto w = rand_weights(rng, numel(s));
                          c.build = [k, w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, add_scalar(in[0], k), w);
                          };
                          return c;
                      }});

    checks.push_back({"add_bscalar", [](Rng& rng) {
                          GradCase c;
                          Shape s = detail::rand_shape(rng);
                          c.shapes = {s, {1}};
                          const double k = rng.uniform(-2.0, 2.0);
                          auto w = rand_weights(rng, numel(s));
                          c.build = [k, w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, add_bscalar(in[0], in[1], k), w);
                          };
                          return c;
                      }});

    checks.push_back(detail::unary_check("exp", [](const Tensor& a) { return exp(a); }));
    checks.push_back(detail::unary_check("log", [](const Tensor& a) { return log(a); }, 0.2, 3.0));
    checks.push_back(detail::unary_check("tanh", [](const Tensor& a) { return tanh(a); }));
    checks.push_back(detail::unary_check("sigmoid", [](const Tensor& a) { return sigmoid(a); }));
    checks.push_back(detail::unary_check("softplus", [](const Tensor& a) { return softplus(a); }));
    checks.push_back(detail::unary_check("square", [](const Tensor& a) { return square(a); }));

    checks.push_back({"matmul", [](Rng& rng) {
                          GradCase c;
                          const int M = 1 + rng.uniform_int(4);
                          const int N = 1 + rng.uniform_int(4);
                          const int K = 1 + rng.uniform_int(4);
                          const bool tA = rng.uniform() < 0.5, tB = rng.uniform() < 0.5;
                          c.shapes = {tA ? Shape{K, M} : Shape{M, K}, tB ? Shape{N, K} : Shape{K, N}};
                          auto w = rand_weights(rng, static_cast<std::int64_t>(M) * N);
                          c.build = [tA, tB, w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, matmul(in[0], in[1], tA, tB), w);
                          };
                          return c;
                      }});

    checks.push_back({"linear", [](Rng& rng) {
                          GradCase c;
                          const int din = 1 + rng.uniform_int(4);
                          const int dout = 1 + rng.uniform_int(4);
                          const bool vec = rng.uniform() < 0.5;
                          const int R = vec ? 1 : 1 + rng.uniform_int(3);
                          c.shapes = {vec ? Shape{din} : Shape{R, din}, {din, dout}, {dout}};
                          auto w = rand_weights(rng, static_cast<std::int64_t>(R) * dout);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, linear(in[0], in[1], in[2]), w);
                          };
                          return c;
                      }});

    checks.push_back({"softmax", [](Rng& rng) {
                          GradCase c;
                          const int R = 1 + rng.uniform_int(3);
                          const int k = 1 + rng.uniform_int(5);
                          c.shapes = {{R, k}};
                          auto w = rand_weights(rng, static_cast<std::int64_t>(R) * k);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, softmax(in[0]), w);
                          };
                          return c;
                      }});

    checks.push_back({"log_softmax", [](Rng& rng) {
                          GradCase c;
                          const int k = 2 + rng.uniform_int(5);
                          c.shapes = {{k}};
                          auto w = rand_weights(rng, k);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, log_softmax(in[0]), w);
                          };
                          return c;
                      }});

    checks.push_back({"categorical_entropy", [](Rng& rng) {
                          GradCase c;
                          c.shapes = {{2 + rng.uniform_int(5)}};
                          c.build = [](Tape&, const std::vector<Tensor>& in) {
                              return categorical_entropy(in[0]);
                          };
                          return c;
                      }});

    checks.push_back({"reduce_sum", [](Rng& rng) {
                          GradCase c;
                          c.shapes = {detail::rand_shape(rng)};
                          c.build = [](Tape&, const std::vector<Tensor>& in) {
                              return reduce_sum(in[0]);
                          };
                          return c;
                      }});

    checks.push_back({"reduce_mean", [](Rng& rng) {
                          GradCase c;
                          c.shapes = {detail::rand_shape(rng)};
                          c.build = [](Tape&, const std::vector<Tensor>& in) {
                              return reduce_mean(in[0]);
                          };
                          return c;
                      }});

    checks.push_back({"row_sum", [](Rng& rng) {
                          GradCase c;
                          const int m = 1 + rng.uniform_int(4), n = 1 + rng.uniform_int(4);
                          c.shapes = {{m, n}};
                          auto w = rand_weights(rng, m);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, row_sum(in[0]), w);
                          };
                          return c;
                      }});

    checks.push_back({"add_colvec", [](Rng& rng) {
                          GradCase c;
                          const int m = 1 + rng.uniform_int(4), n = 1 + rng.uniform_int(4);
                          c.shapes = {{m, n}, {m}};
                          auto w = rand_weights(rng, static_cast<std::int64_t>(m) * n);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, add_colvec(in[0], in[1]), w);
                          };
                          return c;
                      }});

    checks.push_back({"diag", [](Rng& rng) {
                          GradCase c;
                          const int n = 1 + rng.uniform_int(4);
                          c.shapes = {{n, n}};
                          auto w = rand_weights(rng, n);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, diag(in[0]), w);
                          };
                          return c;
                      }});

    checks.push_back({"row_slice", [](Rng& rng) {
                          GradCase c;
                          const int m = 1 + rng.uniform_int(4), n = 1 + rng.uniform_int(4);
                          const int row = rng.uniform_int(m);
                          c.shapes = {{m, n}};
                          auto w = rand_weights(rng, n);
                          c.build = [row, w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, row_slice(in[0], row), w);
                          };
                          return c;
                      }});

    checks.push_back({"stack_rows", [](Rng& rng) {
                          GradCase c;
                          const int k = 1 + rng.uniform_int(3);
                          const int n = 1 + rng.uniform_int(4);
                          c.shapes.assign(static_cast<std::size_t>(k), Shape{n});
                          auto w = rand_weights(rng, static_cast<std::int64_t>(k) * n);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, stack_rows(in), w);
                          };
                          return c;
                      }});

    checks.push_back({"concat1d", [](Rng& rng) {
                          GradCase c;
                          const int k = 1 + rng.uniform_int(3);
                          std::int64_t total = 0;
                          for (int i = 0; i < k; ++i) {
                              const int n = 1 + rng.uniform_int(4);
                              c.shapes.push_back({n});
                              total += n;
                          }
                          auto w = rand_weights(rng, total);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, concat1d(in), w);
                          };
                          return c;
                      }});

    checks.push_back({"gather_rows", [](Rng& rng) {
                          GradCase c;
                          const int V = 2 + rng.uniform_int(5), d = 1 + rng.uniform_int(4);
                          const int n = 1 + rng.uniform_int(4);
                          std::vector<int> ids;
                          for (int i = 0; i < n; ++i) ids.push_back(rng.uniform_int(V));
                          c.shapes = {{V, d}};
                          auto w = rand_weights(rng, static_cast<std::int64_t>(n) * d);
                          c.build = [ids, w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, gather_rows(in[0], ids), w);
                          };
                          return c;
                      }});

    checks.push_back({"select", [](Rng& rng) {
                          GradCase c;
                          Shape s = detail::rand_shape(rng);
                          const std::int64_t idx = rng.uniform_int(static_cast<int>(numel(s)));
                          c.shapes = {s};
                          c.build = [idx](Tape&, const std::vector<Tensor>& in) {
                              return select(in[0], idx);
                          };
                          return c;
                      }});

    checks.push_back({"conv2d_3x3", [](Rng& rng) {
                          GradCase c;
                          const int H = 2 + rng.uniform_int(3), W = 2 + rng.uniform_int(3);
                          const int Ci = 1 + rng.uniform_int(3), Co = 1 + rng.uniform_int(3);
                          c.shapes = {{H, W, Ci}, {3, 3, Ci, Co}, {Co}};
                          auto w = rand_weights(rng, static_cast<std::int64_t>(H) * W * Co);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, conv2d_3x3(in[0], in[1], in[2]), w);
                          };
                          return c;
                      }});

    checks.push_back({"gru_cell", [](Rng& rng) {
                          GradCase c;
                          const int B = 1 + rng.uniform_int(3);
                          const int din = 1 + rng.uniform_int(3), dh = 1 + rng.uniform_int(3);
                          c.shapes = {{B, din}, {B, dh}, {din, 3 * dh}, {dh, 3 * dh}, {3 * dh}};
                          auto w = rand_weights(rng, static_cast<std::int64_t>(B) * dh);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, gru_cell(in[0], in[1], in[2], in[3], in[4]), w);
                          };
                          return c;
                      }});

    checks.push_back({"gru_sequence", [](Rng& rng) {
                          GradCase c;
                          const int T = 1 + rng.uniform_int(4);
                          const int din = 1 + rng.uniform_int(3), dh = 1 + rng.uniform_int(3);
                          c.shapes = {{T, din}, {din, 3 * dh}, {dh, 3 * dh}, {3 * dh}};
                          auto w = rand_weights(rng, static_cast<std::int64_t>(T) * dh);
                          c.build = [w, dh](Tape& t, const std::vector<Tensor>& in) {
                              GruTensors g{in[1], in[2], in[3], dh};
                              return weighted_sum(t, gru_sequence(in[0], g).hiddens, w);
                          };
                          return c;
                      }});

    checks.push_back({"scaled_dot_attention", [](Rng& rng) {
                          GradCase c;
                          const int S = 1 + rng.uniform_int(4);
                          const int dk = 1 + rng.uniform_int(4), dv = 1 + rng.uniform_int(4);
                          c.shapes = {{dk}, {S, dk}, {S, dv}};
                          auto w = rand_weights(rng, dv);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(
                                  t, scaled_dot_attention(in[0], in[1], in[2]).context, w);
                          };
                          return c;
                      }});

    checks.push_back({"self_attention", [](Rng& rng) {
                          GradCase c;
                          const int n = 1 + rng.uniform_int(4);
                          const int dx = 1 + rng.uniform_int(4), dq = 1 + rng.uniform_int(4);
                          c.shapes = {{n, dx}, {dx, dq}, {dx, dq}, {dx, dq}};
                          auto w = rand_weights(rng, static_cast<std::int64_t>(n) * dq);
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, self_attention(in[0], in[1], in[2], in[3]), w);
                          };
                          return c;
                      }});

    checks.push_back({"gaussian_log_density", [](Rng& rng) {
                          GradCase c;
                          const int d = 1 + rng.uniform_int(4);
                          c.shapes = {{d}, {d}, {d}};
                          c.sample = [d](Rng& r) {
                              std::vector<double> x(static_cast<std::size_t>(d)),
                                  mu(static_cast<std::size_t>(d)), sg(static_cast<std::size_t>(d));
                              for (double& v : x) v = r.uniform(-2.0, 2.0);
                              for (double& v : mu) v = r.uniform(-2.0, 2.0);
                              for (double& v : sg) v = r.uniform(0.3, 2.0);
                              return std::vector<std::vector<double>>{x, mu, sg};
                          };
                          c.build = [](Tape&, const std::vector<Tensor>& in) {
                              return gaussian_log_density(in[0], in[1], in[2]);
                          };
                          return c;
                      }});

    checks.push_back({"kl_diag_gaussian_to_standard", [](Rng& rng) {
                          GradCase c;
                          const int d = 1 + rng.uniform_int(4);
                          c.shapes = {{d}, {d}};
                          c.sample = [d](Rng& r) {
                              std::vector<double> mu(static_cast<std::size_t>(d)),
                                  sg(static_cast<std::size_t>(d));
                              for (double& v : mu) v = r.uniform(-2.0, 2.0);
                              for (double& v : sg) v = r.uniform(0.3, 2.0);
                              return std::vector<std::vector<double>>{mu, sg};
                          };
                          c.build = [](Tape&, const std::vector<Tensor>& in) {
                              return kl_diag_gaussian_to_standard(in[0], in[1]);
                          };
                          return c;
                      }});

    // reparameterize with pinned noise so the finite differences and the
    // analytic path see the same draw
    checks.push_back({"reparameterize", [](Rng& rng) {
                          GradCase c;
                          const int d = 1 + rng.uniform_int(4);
                          std::vector<double> eps(static_cast<std::size_t>(d));
                          for (double& e : eps) e = rng.normal();
                          c.shapes = {{d}, {d}};
                          c.sample = [d](Rng& r) {
                              std::vector<double> mu(static_cast<std::size_t>(d)),
                                  sg(static_cast<std::size_t>(d));
                              for (double& v : mu) v = r.uniform(-2.0, 2.0);
                              for (double& v : sg) v = r.uniform(0.3, 2.0);
                              return std::vector<std::vector<double>>{mu, sg};
                          };
                          auto w = rand_weights(rng, d);
                          c.build = [eps, w, d](Tape& t, const std::vector<Tensor>& in) {
                              Tensor e = constant(t, {d}, eps);
                              return weighted_sum(t, add(in[0], mul(in[1], e)), w);
                          };
                          return c;
                      }});

    checks.push_back({"sigma_positive", [](Rng& rng) {
                          GradCase c;
                          c.shapes = {detail::rand_shape(rng)};
                          auto w = rand_weights(rng, numel(c.shapes[0]));
                          c.build = [w](Tape& t, const std::vector<Tensor>& in) {
                              return weighted_sum(t, sigma_positive(in[0]), w);
                          };
                          return c;
                      }});

    return checks;
}

}  // namespace crl
