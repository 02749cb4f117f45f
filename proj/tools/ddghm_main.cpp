// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "CLI11.hpp"

#include "ddghm/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ddghm: dual dynamic graph cross-domain sequential recommender"};
  app.require_subcommand(1);

  ddghm::PreprocessArgs pre;
  auto* cmd_pre = app.add_subcommand("preprocess", "Filter a raw TSV log into sequences");
  cmd_pre->add_option("--input", pre.input, "raw interaction log (TSV)")
      ->required()
      ->envname("DDGHM_INPUT");
  cmd_pre->add_option("--config", pre.config, "JSON config (needs period_length)")
      ->required()
      ->envname("DDGHM_CONFIG");
  cmd_pre->add_option("--out", pre.output, "processed sequence file to write")
      ->required()
      ->envname("DDGHM_OUT");

  ddghm::TrainArgs tr;
  auto* cmd_tr = app.add_subcommand("train", "Train on a processed sequence file");
  cmd_tr->add_option("--data", tr.data, "processed sequence file")
      ->required()
      ->envname("DDGHM_DATA");
  cmd_tr->add_option("--config", tr.config, "JSON config")
      ->required()
      ->envname("DDGHM_CONFIG");
  cmd_tr->add_option("--out", tr.outdir, "output directory")
      ->required()
      ->envname("DDGHM_OUT");
  cmd_tr->add_option("--seed", tr.seed, "master RNG seed")->envname("DDGHM_SEED");

  ddghm::EvaluateArgs ev;
  auto* cmd_ev = app.add_subcommand("evaluate", "Rank held-out items with a checkpoint");
  cmd_ev->add_option("--checkpoint", ev.checkpoint, "model checkpoint")
      ->required()
      ->envname("DDGHM_CHECKPOINT");
  cmd_ev->add_option("--data", ev.data, "processed sequence file")
      ->required()
      ->envname("DDGHM_DATA");
  cmd_ev->add_option("--split", ev.split, "train | val | test | all (default test)")
      ->envname("DDGHM_SPLIT");
  cmd_ev->add_option("--out", ev.output, "optional metrics JSON path")
      ->envname("DDGHM_OUT");

  ddghm::GradcheckArgs gc;
  auto* cmd_gc = app.add_subcommand("gradcheck", "Finite-difference check of the full loss");
  cmd_gc->add_option("--eps", gc.eps, "central-difference step (default 1e-5)")
      ->envname("DDGHM_EPS");
  cmd_gc->add_option("--seed", gc.seed, "toy-instance seed")->envname("DDGHM_SEED");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ddghm::kExitOk : ddghm::kExitValidation;
  }

  if (cmd_pre->parsed()) return ddghm::cmd_preprocess(pre, std::cout, std::cerr);
  if (cmd_tr->parsed()) return ddghm::cmd_train(tr, std::cout, std::cerr);
  if (cmd_ev->parsed()) return ddghm::cmd_evaluate(ev, std::cout, std::cerr);
  if (cmd_gc->parsed()) return ddghm::cmd_gradcheck(gc, std::cout, std::cerr);
  return ddghm::kExitValidation;
}
