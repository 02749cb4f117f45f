// SPDX-License-Identifier: Apache-2.0
#include "ddghm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ddghm {

namespace {

const Tensor& val(Var v) { return v.tape->value(v); }

void require_vector(const Tensor& t, const char* op) {
  if (t.rows() != 1 && t.cols() != 1) {
    throw std::invalid_argument(std::string(op) + ": expected a vector, got " + shape_str(t));
  }
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(val(a), val(b), "add");
  Tensor out = val(a) + val(b);
  return a.tape->make(std::move(out), false,
                      [a, b](Tape& t, const Tensor& g) {
                        t.accum(a.id, g);
                        t.accum(b.id, g);
                      },
                      {a, b});
}

Var sub(Var a, Var b) {
  require_same_shape(val(a), val(b), "sub");
  Tensor out = val(a) - val(b);
  return a.tape->make(std::move(out), false,
                      [a, b](Tape& t, const Tensor& g) {
                        t.accum(a.id, g);
                        t.accum(b.id, Tensor(-g));
                      },
                      {a, b});
}

Var mul(Var a, Var b) {
  require_same_shape(val(a), val(b), "mul");
  Tensor out = val(a).cwiseProduct(val(b));
  return a.tape->make(std::move(out), false,
                      [a, b](Tape& t, const Tensor& g) {
                        t.accum(a.id, g.cwiseProduct(t.value(b)));
                        t.accum(b.id, g.cwiseProduct(t.value(a)));
                      },
                      {a, b});
}

Var scale(Var a, double c) {
  Tensor out = c * val(a);
  return a.tape->make(std::move(out), false,
                      [a, c](Tape& t, const Tensor& g) { t.accum(a.id, Tensor(c * g)); },
                      {a});
}

Var shift(Var a, double c) {
  Tensor out = val(a).array() + c;
  return a.tape->make(std::move(out), false,
                      [a](Tape& t, const Tensor& g) { t.accum(a.id, g); }, {a});
}

Var add_rowvec(Var m, Var v) {
  const Tensor& mv = val(m);
  const Tensor& vv = val(v);
  if (vv.rows() != 1 || vv.cols() != mv.cols()) {
    throw std::invalid_argument("add_rowvec: want 1x" + std::to_string(mv.cols()) +
                                ", got " + shape_str(vv));
  }
  Tensor out = mv.rowwise() + vv.row(0);
  return m.tape->make(std::move(out), false,
                      [m, v](Tape& t, const Tensor& g) {
                        t.accum(m.id, g);
                        t.accum(v.id, Tensor(g.colwise().sum()));
                      },
                      {m, v});
}

Var mul_scalar(Var s, Var a) {
  if (!is_scalar(val(s))) {
    throw std::invalid_argument("mul_scalar: scalar operand is " + shape_str(val(s)));
  }
  Tensor out = val(s)(0, 0) * val(a);
  return a.tape->make(std::move(out), false,
                      [s, a](Tape& t, const Tensor& g) {
                        Tensor gs(1, 1);
                        gs(0, 0) = g.cwiseProduct(t.value(a)).sum();
                        t.accum(s.id, gs);
                        t.accum(a.id, Tensor(t.value(s)(0, 0) * g));
                      },
                      {s, a});
}

Var sigmoid(Var a) {
  Tensor y = val(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return a.tape->make(Tensor(y), false,
                      [a, y](Tape& t, const Tensor& g) {
                        Tensor dy = y.cwiseProduct(Tensor(Tensor::Ones(y.rows(), y.cols()) - y));
                        t.accum(a.id, Tensor(g.cwiseProduct(dy)));
                      },
                      {a});
}

Var tanh_(Var a) {
  Tensor y = val(a).array().tanh().matrix();
  return a.tape->make(Tensor(y), false,
                      [a, y](Tape& t, const Tensor& g) {
                        t.accum(a.id, Tensor(g.cwiseProduct((1.0 - y.array().square()).matrix())));
                      },
                      {a});
}

Var exp_(Var a) {
  Tensor y = val(a).array().exp().matrix();
  return a.tape->make(Tensor(y), false,
                      [a, y](Tape& t, const Tensor& g) {
                        t.accum(a.id, Tensor(g.cwiseProduct(y)));
                      },
                      {a});
}

Var log_(Var a) {
  Tensor out = val(a).array().log().matrix();
  return a.tape->make(std::move(out), false,
                      [a](Tape& t, const Tensor& g) {
                        t.accum(a.id, Tensor(g.cwiseQuotient(t.value(a))));
                      },
                      {a});
}

Var relu(Var a) {
  Tensor out = val(a).cwiseMax(0.0);
  return a.tape->make(std::move(out), false,
                      [a](Tape& t, const Tensor& g) {
                        Tensor mask = (t.value(a).array() > 0.0).cast<double>().matrix();
                        t.accum(a.id, Tensor(g.cwiseProduct(mask)));
                      },
                      {a});
}

Var matmul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: inner dims " + shape_str(av) + " * " + shape_str(bv));
  }
  Tensor out = av * bv;
  // dA = G * B^T, dB = A^T * G
  return a.tape->make(std::move(out), false,
                      [a, b](Tape& t, const Tensor& g) {
                        t.accum(a.id, Tensor(g * t.value(b).transpose()));
                        t.accum(b.id, Tensor(t.value(a).transpose() * g));
                      },
                      {a, b});
}

Var transpose(Var a) {
  Tensor out = val(a).transpose();
  return a.tape->make(std::move(out), false,
                      [a](Tape& t, const Tensor& g) { t.accum(a.id, Tensor(g.transpose())); },
                      {a});
}

Var reshape(Var a, Eigen::Index r, Eigen::Index c) {
  const Tensor& av = val(a);
  if (av.size() != r * c) {
    throw std::invalid_argument("reshape: " + shape_str(av) + " has " +
                                std::to_string(av.size()) + " entries, want " +
                                std::to_string(r * c));
  }
  const Eigen::Index r0 = av.rows(), c0 = av.cols();
  Tensor out(r, c);
  for (Eigen::Index k = 0; k < av.size(); ++k) out(k / c, k % c) = av(k / c0, k % c0);
  return a.tape->make(std::move(out), false,
                      [a, r0, c0, c](Tape& t, const Tensor& g) {
                        Tensor back(r0, c0);
                        for (Eigen::Index k = 0; k < g.size(); ++k)
                          back(k / c0, k % c0) = g(k / c, k % c);
                        t.accum(a.id, back);
                      },
                      {a});
}

Var concat_rows(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (av.cols() != bv.cols()) {
    throw std::invalid_argument("concat_rows: " + shape_str(av) + " vs " + shape_str(bv));
  }
  Tensor out(av.rows() + bv.rows(), av.cols());
  out.topRows(av.rows()) = av;
  out.bottomRows(bv.rows()) = bv;
  const Eigen::Index ra = av.rows(), rb = bv.rows();
  return a.tape->make(std::move(out), false,
                      [a, b, ra, rb](Tape& t, const Tensor& g) {
                        t.accum(a.id, Tensor(g.topRows(ra)));
                        t.accum(b.id, Tensor(g.bottomRows(rb)));
                      },
                      {a, b});
}

Var concat_cols(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (av.rows() != bv.rows()) {
    throw std::invalid_argument("concat_cols: " + shape_str(av) + " vs " + shape_str(bv));
  }
  Tensor out(av.rows(), av.cols() + bv.cols());
  out.leftCols(av.cols()) = av;
  out.rightCols(bv.cols()) = bv;
  const Eigen::Index ca = av.cols(), cb = bv.cols();
  return a.tape->make(std::move(out), false,
                      [a, b, ca, cb](Tape& t, const Tensor& g) {
                        t.accum(a.id, Tensor(g.leftCols(ca)));
                        t.accum(b.id, Tensor(g.rightCols(cb)));
                      },
                      {a, b});
}

Var rows(Var a, const std::vector<int>& idx) {
  const Tensor& av = val(a);
  if (idx.empty()) throw std::invalid_argument("rows: empty index list");
  Tensor out(static_cast<Eigen::Index>(idx.size()), av.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= av.rows()) {
      throw std::invalid_argument("rows: index " + std::to_string(idx[i]) +
                                  " out of range for " + shape_str(av));
    }
    out.row(static_cast<Eigen::Index>(i)) = av.row(idx[i]);
  }
  return a.tape->make(std::move(out), false,
                      [a, idx](Tape& t, const Tensor& g) {
                        Tensor back = Tensor::Zero(t.value(a).rows(), t.value(a).cols());
                        for (std::size_t i = 0; i < idx.size(); ++i)
                          back.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                        t.accum(a.id, back);
                      },
                      {a});
}

Var scatter_rows(Var base, const std::vector<int>& idx, Var repl) {
  const Tensor& bv = val(base);
  const Tensor& rv = val(repl);
  if (rv.rows() != static_cast<Eigen::Index>(idx.size()) || rv.cols() != bv.cols()) {
    throw std::invalid_argument("scatter_rows: replacement " + shape_str(rv) + " vs base " +
                                shape_str(bv) + " with " + std::to_string(idx.size()) +
                                " indices");
  }
  std::set<int> seen;
  for (int i : idx) {
    if (i < 0 || i >= bv.rows()) {
      throw std::invalid_argument("scatter_rows: index " + std::to_string(i) +
                                  " out of range for " + shape_str(bv));
    }
    if (!seen.insert(i).second) {
      throw std::invalid_argument("scatter_rows: duplicate index " + std::to_string(i));
    }
  }
  Tensor out = bv;
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(idx[i]) = rv.row(static_cast<Eigen::Index>(i));
  return base.tape->make(std::move(out), false,
                         [base, repl, idx](Tape& t, const Tensor& g) {
                           Tensor gb = g;
                           Tensor gr(static_cast<Eigen::Index>(idx.size()), g.cols());
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                             gr.row(static_cast<Eigen::Index>(i)) = g.row(idx[i]);
                             gb.row(idx[i]).setZero();
                           }
                           t.accum(base.id, gb);
                           t.accum(repl.id, gr);
                         },
                         {base, repl});
}

Var element(Var a, Eigen::Index i, Eigen::Index j) {
  const Tensor& av = val(a);
  if (i < 0 || i >= av.rows() || j < 0 || j >= av.cols()) {
    throw std::invalid_argument("element: (" + std::to_string(i) + "," + std::to_string(j) +
                                ") out of range for " + shape_str(av));
  }
  Tensor out(1, 1);
  out(0, 0) = av(i, j);
  return a.tape->make(std::move(out), false,
                      [a, i, j](Tape& t, const Tensor& g) {
                        Tensor back = Tensor::Zero(t.value(a).rows(), t.value(a).cols());
                        back(i, j) = g(0, 0);
                        t.accum(a.id, back);
                      },
                      {a});
}

Var sum(Var a) {
  Tensor out(1, 1);
  out(0, 0) = val(a).sum();
  return a.tape->make(std::move(out), false,
                      [a](Tape& t, const Tensor& g) {
                        t.accum(a.id, Tensor(Tensor::Constant(t.value(a).rows(),
                                                              t.value(a).cols(), g(0, 0))));
                      },
                      {a});
}

Var dot(Var a, Var b) {
  require_same_shape(val(a), val(b), "dot");
  Tensor out(1, 1);
  out(0, 0) = val(a).cwiseProduct(val(b)).sum();
  return a.tape->make(std::move(out), false,
                      [a, b](Tape& t, const Tensor& g) {
                        t.accum(a.id, Tensor(g(0, 0) * t.value(b)));
                        t.accum(b.id, Tensor(g(0, 0) * t.value(a)));
                      },
                      {a, b});
}

Var softmax(Var a) {
  const Tensor& av = val(a);
  require_vector(av, "softmax");
  const double mx = av.maxCoeff();
  Tensor e = (av.array() - mx).exp().matrix();
  Tensor y = e / e.sum();
  return a.tape->make(Tensor(y), false,
                      [a, y](Tape& t, const Tensor& g) {
                        const double gy = g.cwiseProduct(y).sum();
                        t.accum(a.id, Tensor(y.cwiseProduct((g.array() - gy).matrix())));
                      },
                      {a});
}

Var logsumexp(Var a) {
  const Tensor& av = val(a);
  require_vector(av, "logsumexp");
  const double mx = av.maxCoeff();
  const double s = (av.array() - mx).exp().sum();
  Tensor out(1, 1);
  out(0, 0) = mx + std::log(s);
  return a.tape->make(std::move(out), false,
                      [a](Tape& t, const Tensor& g) {
                        const Tensor& x = t.value(a);
                        const double m2 = x.maxCoeff();
                        Tensor e = (x.array() - m2).exp().matrix();
                        t.accum(a.id, Tensor((g(0, 0) / e.sum()) * e));
                      },
                      {a});
}

double grad_check(const std::function<Var(Tape&, ParameterStore&)>& loss_builder,
                  ParameterStore& store, double eps) {
  if (eps < 1e-7 || eps > 1e-3) {
    throw std::invalid_argument("grad_check: eps must be in [1e-7, 1e-3]");
  }
  store.zero_grads();
  {
    Tape tape;
    Var loss = loss_builder(tape, store);
    tape.backward(loss);
  }
  std::map<std::string, Tensor> analytic;
  for (const auto& [name, p] : store.params()) analytic[name] = p.grad;
  store.zero_grads();

  auto eval = [&]() {
    Tape tape;
    Var loss = loss_builder(tape, store);
    return tape.value(loss)(0, 0);
  };

  double worst = 0.0;
  for (auto& [name, p] : store.params()) {
    const Tensor& ga = analytic[name];
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
        const double saved = p.value(i, j);
        p.value(i, j) = saved + eps;
        const double fp = eval();
        p.value(i, j) = saved - eps;
        const double fm = eval();
        p.value(i, j) = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = ga(i, j);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
        worst = std::max(worst, std::abs(a - numeric) / denom);
      }
    }
  }
  return worst;
}

}  // namespace ddghm
