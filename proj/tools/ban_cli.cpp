#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ban/commands.hpp"
#include "ban/error.hpp"

namespace {

ban::Box parse_box(const std::string& text) {
  double v[4];
  char sep;
  std::istringstream in(text);
  in >> v[0] >> sep >> v[1] >> sep >> v[2] >> sep >> v[3];
  if (!in || !in.eof()) throw ban::ConfigError("proposal must be x1,y1,x2,y2, got '" + text + "'");
  return ban::Box::from_corners(v[0], v[1], v[2], v[3]);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boundary-aware detection head: data generation, training, evaluation and analysis"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, seed;
  std::vector<std::string> overrides;
  enum class Ckpt { None, Optional, Required };
  auto common = [&](CLI::App* cmd, Ckpt ckpt) {
    cmd->add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "overrides the seed key");
    cmd->add_option("--set", overrides, "key=value override (repeatable)");
    cmd->add_option("--out", out_dir, "output directory");
    if (ckpt != Ckpt::None) {
      auto* opt = cmd->add_option("--checkpoint", checkpoint, "model checkpoint");
      if (ckpt == Ckpt::Required) opt->required();
    }
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic train/test dataset");
  common(gen, Ckpt::None);
  auto* trn = app.add_subcommand("train", "train a detector on <data_dir>/train");
  common(trn, Ckpt::None);
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on <data_dir>/test");
  common(ev, Ckpt::Required);
  auto* an = app.add_subcommand("analyze", "contribution tables, optionally the context ablation grid");
  common(an, Ckpt::Optional);
  bool ablation = false;
  an->add_flag("--ablation", ablation, "train and evaluate the six context sets");
  auto* vis = app.add_subcommand("visualize", "local activation heat maps for one proposal");
  common(vis, Ckpt::Required);
  std::string image_id, proposal;
  int class_id = -1;
  vis->add_option("--image", image_id, "test image id")->required();
  vis->add_option("--proposal", proposal, "x1,y1,x2,y2 (default: first ground-truth box)");
  vis->add_option("--class", class_id, "class id (default: highest scoring class)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    ban::RunConfig cfg;
    if (!config_path.empty()) cfg.merge_file(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ban::ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!seed.empty()) cfg.set("seed", seed);
    auto out_or = [&](const std::string& fallback) { return out_dir.empty() ? fallback : out_dir; };

    if (*gen) {
      ban::cmd_gen_data(cfg, out_or(cfg.get("data_dir")), std::cout);
    } else if (*trn) {
      ban::cmd_train(cfg, out_or("run"), std::cout);
    } else if (*ev) {
      ban::cmd_eval(cfg, checkpoint, out_or("eval"), std::cout);
    } else if (*an) {
      if (checkpoint.empty() && !ablation) throw ban::ConfigError("analyze needs --checkpoint and/or --ablation");
      if (!checkpoint.empty()) ban::cmd_analyze(cfg, checkpoint, out_or("analysis"), std::cout);
      if (ablation) ban::cmd_ablation(cfg, out_or("analysis"), std::cout);
    } else if (*vis) {
      ban::VisualizeRequest req{image_id, {}, {}};
      if (!proposal.empty()) req.proposal = parse_box(proposal);
      if (class_id >= 0) req.class_id = class_id;
      ban::cmd_visualize(cfg, checkpoint, req, out_or("visualize"), std::cout);
    }
  } catch (const ban::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.kind().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
