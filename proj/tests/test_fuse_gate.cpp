// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"

#include "ddghm/fuse_gate.hpp"

using namespace ddghm;

namespace {

Tensor sig(const Tensor& x) {
  return ((1.0 + (-x.array()).exp()).inverse()).matrix();
}

Tensor softmax_col(const Tensor& x) {
  Tensor e = ((x.array() - x.maxCoeff()).exp()).matrix();
  return e / e.sum();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("gate parameter registration: full vs plain") {
  ParameterStore full(1);
  add_gate_params(full, 2, true);
  // w_gen 16, b_gen 4, w_self 4, v 2, w_nei 4, three GRU blocks of 8
  CHECK(full.parameter_count() == 54);
  CHECK(full.contains("gate.w_gen"));

  ParameterStore plain(1);
  add_gate_params(plain, 2, false);
  CHECK(plain.parameter_count() == 24);
  CHECK(!plain.contains("gate.w_self"));
}

TEST_CASE("sequence_fusion reshapes the generated matrix row-major") {
  const int dim = 2;
  ParameterStore store(17);
  add_gate_params(store, dim, true);
  Tensor seg(1, 2), sel(1, 2);
  seg << 1.0, 2.0;
  sel << 3.0, 4.0;

  Tape tape;
  GateParams p = gate_refs(tape, store, true);
  Var w_att = sequence_fusion(tape, tape.constant(seg), tape.constant(sel), p.w_gen,
                              p.b_gen, dim);

  Tensor both(1, 4);
  both << seg, sel;
  Tensor flat = both * store.at("gate.w_gen").value + store.at("gate.b_gen").value;
  Tensor expect(2, 2);
  expect << flat(0, 0), flat(0, 1), flat(0, 2), flat(0, 3);
  CHECK(max_abs_diff(tape.value(w_att), expect) < 1e-14);
}

TEST_CASE("self_attentive blends the two states by their scalar scores") {
  ParameterStore store(31);
  add_gate_params(store, 2, true);
  Tensor hl(1, 2), hg(1, 2), watt(2, 2);
  hl << 0.4, -0.6;
  hg << -0.2, 0.9;
  watt << 0.3, -0.5, 0.7, 0.1;

  Tape tape;
  GateParams p = gate_refs(tape, store, true);
  Var out = self_attentive(tape, tape.constant(hl), tape.constant(hg),
                           tape.constant(watt), p.w_self, p.v);

  const Tensor& ws = store.at("gate.w_self").value;
  const Tensor& v = store.at("gate.v").value;
  Tensor self_term = hl * ws;
  double a_l = (sig(hl * watt + self_term) * v)(0, 0);
  double a_g = (sig(hg * watt + self_term) * v)(0, 0);
  Tensor expect = a_l * hl + a_g * hg;
  CHECK(max_abs_diff(tape.value(out), expect) < 1e-14);
}

TEST_CASE("neighbour_attentive softmax-weights projected neighbours") {
  Tensor hl(1, 2), hn(3, 2), watt(2, 2), wnei(2, 2);
  hl << 0.5, -1.0;
  hn << 1.0, 0.0, 0.0, 1.0, 0.5, 0.5;
  watt << 0.2, -0.3, 0.4, 0.6;
  wnei << 1.0, 0.0, 0.0, -1.0;

  Tape tape;
  Var out = neighbour_attentive(tape, tape.constant(hl), tape.constant(hn),
                                tape.constant(watt), tape.constant(wnei));
  Tensor alpha = softmax_col(hn * wnei * hl.transpose());
  Tensor expect = alpha.transpose() * (hn * watt);
  CHECK(max_abs_diff(tape.value(out), expect) < 1e-14);

  // A single neighbour gets full weight no matter the score.
  Var one = neighbour_attentive(tape, tape.constant(hl),
                                tape.constant(Tensor(hn.topRows(1))),
                                tape.constant(watt), tape.constant(wnei));
  CHECK(max_abs_diff(tape.value(one), Tensor(hn.topRows(1) * watt)) < 1e-14);
}

TEST_CASE("gru_fuse with zero weights halves the blended state") {
  ParameterStore store(5);
  add_gate_params(store, 3, false);
  for (auto& [name, p] : store.params()) p.value.setZero();
  Tensor hhat(1, 3), htilde(1, 3);
  hhat << 9.0, -9.0, 9.0;  // must not leak through when z gates to a zero candidate
  htilde << 0.4, -0.8, 1.2;

  Tape tape;
  GateParams p = gate_refs(tape, store, false);
  Var out = gru_fuse(tape, tape.constant(hhat), tape.constant(htilde), p.w_gz, p.w_gr,
                     p.w_gh);
  CHECK(max_abs_diff(tape.value(out), Tensor(0.5 * htilde)) < 1e-15);
}

TEST_CASE("full gate with zero parameters writes zero rows") {
  const int dim = 2;
  ParameterStore store(5);
  add_gate_params(store, dim, true);
  for (auto& [name, p] : store.params()) p.value.setZero();

  Tape tape;
  GateParams p = gate_refs(tape, store, true);
  Tensor hl(2, 2), hg(2, 2), se(1, 2);
  hl << 1, 2, 3, 4;
  hg << 5, 6, 7, 8;
  se << 1, 1;
  TransferContext ctx;
  ctx.h_local = tape.constant(hl);
  ctx.h_global = tape.constant(hg);
  ctx.se_local = tape.constant(se);
  ctx.se_global = tape.constant(se);
  ctx.local_rows = {0, 1};
  ctx.global_rows = {0, 1};
  ctx.neighbour_rows = {{1}, {0}};
  GateOutcome out = apply_gate(tape, ctx, p, dim);
  CHECK(tape.value(out.h_local).cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.empty_neighbourhoods == 0);
}

TEST_CASE("apply_gate matches a hand-rolled replica and counts empty neighbourhoods") {
  const int dim = 2;
  ParameterStore store(41);
  add_gate_params(store, dim, true);

  Tensor hl(3, 2), hg(4, 2), seg(1, 2), sel(1, 2);
  hl << 0.3, -0.2, 0.8, 0.1, -0.5, 0.6;
  hg << 0.2, 0.4, -0.1, 0.7, 0.9, -0.3, 0.05, 0.55;
  seg << 0.25, -0.75;
  sel << -0.4, 0.35;

  Tape tape;
  GateParams p = gate_refs(tape, store, true);
  TransferContext ctx;
  ctx.h_local = tape.constant(hl);
  ctx.h_global = tape.constant(hg);
  ctx.se_local = tape.constant(sel);
  ctx.se_global = tape.constant(seg);
  ctx.local_rows = {0, 2};  // row 1 must pass through untouched
  ctx.global_rows = {1, 3};
  ctx.neighbour_rows = {{0, 2}, {}};
  GateOutcome out = apply_gate(tape, ctx, p, dim);
  const Tensor got = tape.value(out.h_local);
  CHECK(out.empty_neighbourhoods == 1);
  CHECK(max_abs_diff(Tensor(got.row(1)), Tensor(hl.row(1))) == 0.0);

  const Tensor& wgen = store.at("gate.w_gen").value;
  const Tensor& bgen = store.at("gate.b_gen").value;
  const Tensor& wself = store.at("gate.w_self").value;
  const Tensor& v = store.at("gate.v").value;
  const Tensor& wnei = store.at("gate.w_nei").value;
  const Tensor& wgz = store.at("gate.w_gz").value;
  const Tensor& wgr = store.at("gate.w_gr").value;
  const Tensor& wgh = store.at("gate.w_gh").value;

  Tensor both(1, 4);
  both << seg, sel;
  Tensor flat = both * wgen + bgen;
  Tensor watt(2, 2);
  watt << flat(0, 0), flat(0, 1), flat(0, 2), flat(0, 3);

  auto fuse_one = [&](const Tensor& h_l, const Tensor& h_g,
                      const Tensor* h_n) -> Tensor {
    Tensor self_term = h_l * wself;
    double a_l = (sig(h_l * watt + self_term) * v)(0, 0);
    double a_g = (sig(h_g * watt + self_term) * v)(0, 0);
    Tensor h_tilde = a_l * h_l + a_g * h_g;
    Tensor h_hat = Tensor::Zero(1, dim);
    if (h_n != nullptr) {
      Tensor alpha = softmax_col(*h_n * wnei * h_l.transpose());
      h_hat = alpha.transpose() * (*h_n * watt);
    }
    Tensor cat(1, 4);
    cat << h_hat, h_tilde;
    Tensor z = sig(cat * wgz);
    Tensor r = sig(cat * wgr);
    Tensor cat2(1, 4);
    cat2 << h_hat, Tensor(r.cwiseProduct(h_tilde));
    Tensor cand = (cat2 * wgh).array().tanh().matrix();
    return ((1.0 - z.array()) * h_tilde.array() + z.array() * cand.array()).matrix();
  };

  Tensor n0(2, 2);
  n0 << hg.row(0), hg.row(2);
  Tensor want0 = fuse_one(hl.row(0), hg.row(1), &n0);
  Tensor want2 = fuse_one(hl.row(2), hg.row(3), nullptr);
  CHECK(max_abs_diff(Tensor(got.row(0)), want0) < 1e-13);
  CHECK(max_abs_diff(Tensor(got.row(2)), want2) < 1e-13);
}

TEST_CASE("plain gate feeds raw states straight into the GRU") {
  const int dim = 2;
  ParameterStore store(19);
  add_gate_params(store, dim, false);
  Tensor hl(2, 2), hg(2, 2), se(1, 2);
  hl << 0.3, -0.2, 0.8, 0.1;
  hg << 0.2, 0.4, -0.1, 0.7;
  se << 0, 0;

  Tape tape;
  GateParams p = gate_refs(tape, store, false);
  TransferContext ctx;
  ctx.h_local = tape.constant(hl);
  ctx.h_global = tape.constant(hg);
  ctx.se_local = tape.constant(se);
  ctx.se_global = tape.constant(se);
  ctx.local_rows = {0, 1};
  ctx.global_rows = {1, 0};
  ctx.neighbour_rows = {{}, {}};
  GateOutcome out = apply_gate(tape, ctx, p, dim);
  // the plain variant never consults neighbour lists
  CHECK(out.empty_neighbourhoods == 0);

  Tape t2;
  GateParams p2 = gate_refs(t2, store, false);
  Var row0 = gru_fuse(t2, t2.constant(Tensor(hg.row(1))), t2.constant(Tensor(hl.row(0))),
                      p2.w_gz, p2.w_gr, p2.w_gh);
  CHECK(max_abs_diff(Tensor(tape.value(out.h_local).row(0)), t2.value(row0)) < 1e-14);
}

TEST_CASE("apply_gate validates its context") {
  ParameterStore store(3);
  add_gate_params(store, 2, false);
  Tape tape;
  GateParams p = gate_refs(tape, store, false);
  TransferContext ctx;
  ctx.h_local = tape.constant(Tensor::Zero(2, 2));
  ctx.h_global = tape.constant(Tensor::Zero(2, 2));
  ctx.se_local = tape.constant(Tensor::Zero(1, 2));
  ctx.se_global = tape.constant(Tensor::Zero(1, 2));
  CHECK_THROWS_AS(apply_gate(tape, ctx, p, 2), std::invalid_argument);
  ctx.local_rows = {0};
  ctx.global_rows = {0, 1};
  ctx.neighbour_rows = {{}};
  CHECK_THROWS_AS(apply_gate(tape, ctx, p, 2), std::invalid_argument);
}

TEST_CASE("gate gradients agree with central differences") {
  const int dim = 2;
  Tensor hl(3, 2), hg(4, 2), seg(1, 2), sel(1, 2);
  hl << 0.3, -0.2, 0.8, 0.1, -0.5, 0.6;
  hg << 0.2, 0.4, -0.1, 0.7, 0.9, -0.3, 0.05, 0.55;
  seg << 0.25, -0.75;
  sel << -0.4, 0.35;

  for (bool full : {true, false}) {
    ParameterStore store(full ? 43u : 47u);
    add_gate_params(store, dim, full);
    auto builder = [&](Tape& tape, ParameterStore& s) {
      GateParams p = gate_refs(tape, s, full);
      TransferContext ctx;
      ctx.h_local = tape.constant(hl);
      ctx.h_global = tape.constant(hg);
      ctx.se_local = tape.constant(sel);
      ctx.se_global = tape.constant(seg);
      ctx.local_rows = {0, 2};
      ctx.global_rows = {1, 3};
      ctx.neighbour_rows = {{0, 2}, {}};
      GateOutcome out = apply_gate(tape, ctx, p, dim);
      return sum(mul(out.h_local, out.h_local));
    };
    CHECK(grad_check(builder, store, 1e-5) < 1e-6);
  }
}
