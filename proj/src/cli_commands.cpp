#include "pean/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "pean/config.hpp"
#include "pean/evalrun.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pean::cli {

namespace {

constexpr int kExitUsage = 2, kExitIo = 3, kExitPrereq = 4, kExitRuntime = 5;

int code_for(const Error& e) {
  switch (e.kind()) {
    case Error::Kind::Config: return kExitUsage;
    case Error::Kind::Io: return kExitIo;
    case Error::Kind::Prerequisite: return kExitPrereq;
    default: return kExitRuntime;
  }
}

struct CommonFlags {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig effective_config(const CommonFlags& flags) {
  RunConfig cfg = flags.config_path.empty() ? RunConfig::toy()
                                            : RunConfig::load_file(flags.config_path);
  if (flags.seed_set) {
    cfg.train.seed = flags.seed;
    cfg.data.seed = flags.seed;
  }
  return cfg;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) fail_io("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) fail_io("failed writing " + path);
}

// Rebuilds a system from a full-model checkpoint (config echo + weights).
sr::PeanSystem<float> load_system(const std::string& ckpt_path, RunConfig* cfg_out = nullptr) {
  CheckpointMeta meta = read_checkpoint_meta(ckpt_path);
  RunConfig cfg = RunConfig::from_json(meta.config);
  sr::PeanSystem<float> sys = make_system(cfg);
  nn::Params<float> ps;
  sys.model.collect(ps, /*include_denoiser=*/meta.stage == "finetune");
  sys.tpg.collect(ps, "tpg");
  load_checkpoint(ckpt_path, ps, static_cast<AdamW<float>*>(nullptr), /*strict=*/true);
  nn::Params<float> tpg_ps;
  sys.tpg.collect(tpg_ps, "tpg");
  sr::set_requires_grad(tpg_ps, false);
  if (cfg_out) *cfg_out = cfg;
  return sys;
}

Image hstack(const std::vector<Image>& imgs, int pad = 2) {
  int w = pad * (static_cast<int>(imgs.size()) - 1), h = 0;
  for (const Image& im : imgs) {
    w += im.w;
    h = std::max(h, im.h);
  }
  Image out(h, w, 3);
  for (float& v : out.px) v = 1.f;
  int x0 = 0;
  for (const Image& im : imgs) {
    for (int y = 0; y < im.h; ++y)
      for (int x = 0; x < im.w; ++x)
        for (int c = 0; c < 3; ++c) out.at(y, x0 + x, c) = im.at(y, x, c);
    x0 += im.w + pad;
  }
  return out;
}

Image vstack(const std::vector<Image>& imgs, int pad = 2) {
  int h = pad * (static_cast<int>(imgs.size()) - 1), w = 0;
  for (const Image& im : imgs) {
    h += im.h;
    w = std::max(w, im.w);
  }
  Image out(h, w, 3);
  for (float& v : out.px) v = 1.f;
  int y0 = 0;
  for (const Image& im : imgs) {
    for (int y = 0; y < im.h; ++y)
      for (int x = 0; x < im.w; ++x)
        for (int c = 0; c < 3; ++c) out.at(y0 + y, x, c) = im.at(y, x, c);
    y0 += im.h + pad;
  }
  return out;
}

int cmd_gen_data(const CommonFlags& flags, const std::string& out_dir, int n_train, int n_test) {
  RunConfig cfg = effective_config(flags);
  if (n_train > 0) cfg.data.n_train = n_train;
  if (n_test > 0) cfg.data.n_test_per_difficulty = n_test;
  const auto entries = build_dataset(cfg.data, out_dir);
  write_json(out_dir + "/config.json", cfg.to_json());
  std::cout << "wrote " << entries.size() << " pairs to " << out_dir << "\n";
  return 0;
}

int cmd_train(const CommonFlags& flags, const std::string& stage, const std::string& data_dir,
              const std::string& out_dir, const std::string& tpg_path,
              const std::string& init_path, const std::string& resume_path, bool from_scratch,
              int epochs_override, int64_t max_steps) {
  RunConfig cfg = effective_config(flags);
  train::TrainConfig tcfg = cfg.stage_train(stage);
  if (epochs_override > 0) tcfg.epochs = epochs_override;
  tcfg.max_steps = max_steps;
  tcfg.quiet = false;

  const std::vector<Sample> data = load_samples(data_dir, "train");
  check(!data.empty(), "no training samples in " + data_dir);
  const json echo = cfg.to_json();

  if (stage == "recognizer") {
    rec::Recognizer<float> model = make_recognizer(cfg);
    auto out = train_recognizer(model, data, tcfg, out_dir, echo);
    std::cout << "recognizer checkpoint: " << out.ckpt_path << "\n";
    return 0;
  }

  if (tpg_path.empty())
    throw Error(Error::Kind::Prerequisite,
                "--tpg (trained recognizer checkpoint) is required for stage " + stage);
  sr::PeanSystem<float> sys = make_system(cfg);
  train::load_frozen_tpg(sys.tpg, tpg_path);

  if (stage == "pretrain") {
    auto out = train::pretrain(sys, data, tcfg, out_dir, resume_path, echo);
    std::cout << "pretrain checkpoint: " << out.ckpt_path << "\n";
    return 0;
  }
  if (stage == "finetune") {
    if (init_path.empty() && !from_scratch && resume_path.empty())
      throw Error(Error::Kind::Prerequisite,
                  "finetune needs --init <pretrain.ckpt> (or explicit --from-scratch)");
    auto out = train::finetune(sys, init_path, data, tcfg, out_dir, resume_path, echo);
    std::cout << "finetune checkpoint: " << out.ckpt_path << "\n";
    return 0;
  }
  fail_config("unknown training stage '" + stage + "'");
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& prior,
             const std::string& out_path, uint64_t seed, int grid_rows) {
  const auto source = sr::prior_source_from_name(prior);
  if (!source) fail_config("unknown prior source '" + prior + "'");
  RunConfig cfg;
  sr::PeanSystem<float> sys = load_system(ckpt, &cfg);
  const std::vector<Sample> test = load_samples(data_dir, "test");
  check(!test.empty(), "no test samples in " + data_dir);

  std::vector<Image> sr_images;
  evalkit::FullEval ev = evalkit::run_eval(sys, test, *source, seed, cfg.eval_batch, &sr_images);
  json report = ev.to_json();
  report["config"] = cfg.to_json();
  report["checkpoint"] = ckpt;
  report["n_samples"] = test.size();
  write_json(out_path, report);

  if (grid_rows > 0) {
    std::vector<Image> rows;
    for (int i = 0; i < std::min<int>(grid_rows, static_cast<int>(test.size())); ++i)
      rows.push_back(hstack({nearest_upsample2x(test[static_cast<size_t>(i)].lr),
                             sr_images[static_cast<size_t>(i)], test[static_cast<size_t>(i)].hr}));
    const std::string grid_path = fs::path(out_path).replace_extension(".grid.png").string();
    save_png(grid_path, vstack(rows));
  }
  std::cout << "acc_avg sr=" << ev.sr.acc_avg << " bicubic=" << ev.bicubic.acc_avg
            << " lr=" << ev.lr_direct.acc_avg << " hr=" << ev.hr_upper.acc_avg << "\n";
  return 0;
}

int cmd_cka(const std::string& ckpt_a, const std::string& ckpt_b, const std::string& data_dir,
            const std::string& prior_a, const std::string& prior_b, const std::string& out_prefix,
            uint64_t seed, int n_max) {
  const auto src_a = sr::prior_source_from_name(prior_a);
  const auto src_b = sr::prior_source_from_name(prior_b);
  if (!src_a || !src_b) fail_config("unknown prior source");
  sr::PeanSystem<float> sys_a = load_system(ckpt_a);
  sr::PeanSystem<float> sys_b = load_system(ckpt_b);
  const std::vector<Sample> test = load_samples(data_dir, "test");
  evalkit::CkaResult res = evalkit::cka_study(sys_a, sys_b, test, *src_a, *src_b, seed, n_max);
  json j = res.to_json();
  j["ckpt_a"] = ckpt_a;
  j["ckpt_b"] = ckpt_b;
  j["prior_a"] = prior_a;
  j["prior_b"] = prior_b;
  write_json(out_prefix + ".json", j);
  evalkit::write_cka_heatmap(out_prefix + ".png", res);
  std::cout << "diag_mean=" << res.diag_mean << " amm=" << res.amm_group_mean
            << " srm=" << res.srm_group_mean << "\n";
  return 0;
}

int cmd_sr(const std::string& ckpt, const std::string& image_path, const std::string& out_path,
           const std::string& prior, uint64_t seed) {
  const auto source = sr::prior_source_from_name(prior);
  if (!source) fail_config("unknown prior source '" + prior + "'");
  if (*source == sr::PriorSource::TpHr)
    throw Error(Error::Kind::Prerequisite, "sr: tp-hr prior needs a paired HR image; use eval");
  sr::PeanSystem<float> sys = load_system(ckpt);
  Image lr = load_png(image_path);
  check(lr.h == kLrH && lr.w == kLrW,
        "sr: input must be 16x64, got " + std::to_string(lr.h) + "x" + std::to_string(lr.w));
  NoGradGuard ng;
  Var<float> lr_in = Var<float>::constant(image_to_tensor<float>(lr));
  Var<float> sr_out = sys.run(lr_in, Var<float>(), *source, seed);
  save_png(out_path, tensor_to_image(sr_out.detach()));
  const std::string lr_text = evalkit::decode_batch(sys.tpg.recognize(lr_in).detach())[0];
  const std::string sr_text = evalkit::decode_batch(sys.tpg.recognize(sr_out).detach())[0];
  std::cout << "lr: \"" << lr_text << "\"\nsr: \"" << sr_text << "\"\n";
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  init_runtime();
  CLI::App app{"PEAN scene-text super-resolution pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--seed may follow the subcommand

  CommonFlags flags;
  app.add_option("--config", flags.config_path, "JSON config file (default: toy profile)");
  auto* seed_opt = app.add_option("--seed", flags.seed, "override data/train seed");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired dataset");
  std::string out_dir;
  int n_train = 0, n_test = 0;
  gen->add_option("--out", out_dir, "dataset directory")->required();
  gen->add_option("--n-train", n_train, "training pairs");
  gen->add_option("--n-test", n_test, "test pairs per difficulty");

  // train
  auto* tr = app.add_subcommand("train", "train recognizer / pretrain / finetune");
  std::string stage, data_dir, tr_out, tpg_path, init_path, resume_path;
  bool from_scratch = false;
  int epochs = 0;
  int64_t max_steps = 0;
  tr->add_option("--stage", stage, "recognizer|pretrain|finetune")->required();
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--tpg", tpg_path, "frozen recognizer checkpoint");
  tr->add_option("--init", init_path, "pretrain checkpoint to initialize finetune");
  tr->add_option("--resume", resume_path, "checkpoint to resume from");
  tr->add_flag("--from-scratch", from_scratch, "finetune without pretrain initialization");
  tr->add_option("--epochs", epochs, "override epoch count");
  tr->add_option("--max-steps", max_steps, "stop after this many optimizer steps");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string ev_ckpt, ev_data, ev_prior = "etp", ev_out = "report.json";
  uint64_t ev_seed = 0;
  int grid_rows = 8;
  ev->add_option("--ckpt", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--prior", ev_prior, "tp-lr|tp-hr|etp");
  ev->add_option("--out", ev_out, "report JSON path");
  ev->add_option("--eval-seed", ev_seed, "sampling seed for the ETP prior");
  ev->add_option("--grid-rows", grid_rows, "rows in the comparison grid (0 disables)");

  // cka
  auto* ck = app.add_subcommand("cka", "representation similarity between two runs");
  std::string ck_a, ck_b, ck_data, ck_pa = "etp", ck_pb = "tp-hr", ck_out = "cka";
  uint64_t ck_seed = 0;
  int ck_n = 0;
  ck->add_option("--ckpt-a", ck_a)->required();
  ck->add_option("--ckpt-b", ck_b)->required();
  ck->add_option("--data", ck_data)->required();
  ck->add_option("--prior-a", ck_pa, "prior for model A");
  ck->add_option("--prior-b", ck_pb, "prior for model B");
  ck->add_option("--out", ck_out, "output prefix (.json/.png)");
  ck->add_option("--eval-seed", ck_seed);
  ck->add_option("--n", ck_n, "subsample size (0 = full test split)");

  // sr
  auto* srm = app.add_subcommand("sr", "super-resolve one 16x64 PNG");
  std::string sr_ckpt, sr_img, sr_out = "sr.png", sr_prior = "etp";
  uint64_t sr_seed = 0;
  srm->add_option("--ckpt", sr_ckpt)->required();
  srm->add_option("--image", sr_img)->required();
  srm->add_option("--out", sr_out);
  srm->add_option("--prior", sr_prior, "etp|tp-lr");
  srm->add_option("--sr-seed", sr_seed, "sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  flags.seed_set = seed_opt->count() > 0;
  try {
    if (gen->parsed()) return cmd_gen_data(flags, out_dir, n_train, n_test);
    if (tr->parsed())
      return cmd_train(flags, stage, data_dir, tr_out, tpg_path, init_path, resume_path,
                       from_scratch, epochs, max_steps);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_prior, ev_out, ev_seed, grid_rows);
    if (ck->parsed()) return cmd_cka(ck_a, ck_b, ck_data, ck_pa, ck_pb, ck_out, ck_seed, ck_n);
    if (srm->parsed()) return cmd_sr(sr_ckpt, sr_img, sr_out, sr_prior, sr_seed);
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace pean::cli
