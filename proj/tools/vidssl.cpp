// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "vidssl/harness/commands.hpp"

using namespace vidssl;

namespace {

RunConfig config_from(const std::string& path, const std::string& method) {
  if (!path.empty()) return load_config(path);
  return RunConfig::defaults(parse_method(method));
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string tok;
  for (char c : s) {
    if (c == ',') {
      if (!tok.empty()) out.push_back(tok);
      tok.clear();
    } else if (c != ' ') {
      tok += c;
    }
  }
  if (!tok.empty()) out.push_back(tok);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised video representation learning on synthetic clips"};
  app.require_subcommand(1);
  std::string config_path, method = "simclr", out_path, resume, checkpoint, axis;
  std::optional<std::string> values;
  std::size_t stop_after = 0;
  std::uint64_t seed = 0;
  bool quiet = false;

  const auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "YAML run config")->check(CLI::ExistingFile);
    sub->add_option("-m,--method", method, "method defaults when no config is given");
  };

  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset");
  add_config(gen);
  gen->add_option("-o,--out", out_path, "dataset path (default: dataset_path from the config)");

  auto* pre = app.add_subcommand("pretrain", "self-supervised pre-training");
  add_config(pre);
  pre->add_option("--resume", resume, "continue from this checkpoint")->check(CLI::ExistingFile);
  pre->add_option("--stop-after", stop_after, "stop at this iteration");
  pre->add_flag("-q,--quiet", quiet, "no progress lines");

  auto* prb = app.add_subcommand("probe", "linear probe on frozen features");
  prb->add_option("checkpoint", checkpoint, "checkpoint file")->required();

  auto* fin = app.add_subcommand("finetune", "fine-tune all weights with a fresh linear head");
  fin->add_option("checkpoint", checkpoint, "checkpoint file")->required();

  auto* abl = app.add_subcommand("ablate", "pretrain + probe per axis value");
  add_config(abl);
  abl->add_option("--axis", axis, "rho | tmax | aug-groups | mlp-depth | toggles")->required();
  abl->add_option("--values", values, "comma-separated values (default per axis)");

  auto* orc = app.add_subcommand("oracle-check", "compare main paths with brute-force oracles");
  orc->add_option("--seed", seed, "instance seed");

  auto* pc = app.add_subcommand("print-config", "print the annotated default config");
  pc->add_option("-m,--method", method, "moco | simclr | byol | swav");

  CLI11_PARSE(app, argc, argv);

  return cli::guarded(
      [&]() -> int {
        if (*gen) {
          const auto cfg = config_from(config_path, method);
          cli::gen_data(cfg, out_path);
          std::cout << "wrote " << (out_path.empty() ? cfg.dataset_path : out_path) << "\n";
        } else if (*pre) {
          const auto cfg = config_from(config_path, method);
          const auto ck = cli::pretrain(cfg, {resume, stop_after, quiet}, std::cout);
          std::cout << "checkpoint " << ck << "\n";
        } else if (*prb) {
          cli::probe(checkpoint, std::cout);
        } else if (*fin) {
          cli::finetune(checkpoint, std::cout);
        } else if (*abl) {
          const auto cfg = config_from(config_path, method);
          const auto vals = values ? split(*values) : cli::default_axis_values(cfg, axis);
          cli::ablate(cfg, axis, vals, std::cout);
        } else if (*orc) {
          return cli::oracle_check(seed, std::cout) ? cli::kOk : cli::kChecksFailed;
        } else if (*pc) {
          std::cout << to_yaml(RunConfig::defaults(parse_method(method)), true);
        }
        return cli::kOk;
      },
      std::cerr);
}
