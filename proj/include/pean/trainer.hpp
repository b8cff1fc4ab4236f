#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pean/checkpoint.hpp"
#include "pean/datagen.hpp"
#include "pean/losses.hpp"
#include "pean/srnet.hpp"

namespace pean::train {

struct TrainConfig {
  int epochs = 10;
  double lr = 1e-3;
  int batch = 32;
  uint64_t seed = 0;
  double clip_norm = 5.0;
  double weight_decay = 0.01;
  losses::LossWeights weights;
  double tpg_lr_fraction = 0.5;  // recognizer training: share of LR-upsampled inputs
  int64_t max_steps = 0;         // 0 = run all epochs; used by tests/resume
  bool quiet = true;

  nlohmann::json to_json() const {
    return {{"epochs", epochs},       {"lr", lr},
            {"batch", batch},         {"seed", seed},
            {"clip_norm", clip_norm}, {"weight_decay", weight_decay},
            {"weights", weights.to_json()}, {"tpg_lr_fraction", tpg_lr_fraction}};
  }
};

struct Batch {
  Tensor<float> lr, hr;
  std::vector<std::vector<int>> labels;
  std::vector<std::string> texts;
  std::vector<Difficulty> difficulty;
};

inline Batch make_batch(const std::vector<Sample>& data, const std::vector<int>& idx) {
  check(!idx.empty(), "make_batch: empty index list");
  Batch b;
  std::vector<Image> lrs, hrs;
  for (int i : idx) {
    const Sample& s = data[static_cast<size_t>(i)];
    lrs.push_back(s.lr);
    hrs.push_back(s.hr);
    b.labels.push_back(Charset::encode(s.text));
    b.texts.push_back(s.text);
    b.difficulty.push_back(s.difficulty);
  }
  b.lr = images_to_tensor<float>(lrs);
  b.hr = images_to_tensor<float>(hrs);
  return b;
}

inline std::vector<int> epoch_order(int n, uint64_t seed, int epoch) {
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng = Rng(seed).fork(0xE50C0000ull + static_cast<uint64_t>(epoch));
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

struct StepResult {
  losses::LossReport report;
  double grad_norm = 0;
  bool skipped = false;
  double wall_ms = 0;
};

// One optimization step of the SR system. Stage "pretrain" uses the TP-HR
// prior and the image+text objective; "finetune" adds the TPEM: the prior
// is the sampled ETP (differentiable at S=1) and the diffusion loss trains
// the denoiser jointly.
template <class T>
StepResult train_step(sr::PeanSystem<T>& sys, const Batch& batch, const std::string& stage,
                      const TrainConfig& cfg, nn::Params<T>& params, AdamW<T>& opt,
                      int64_t global_step) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool finetune = stage == "finetune";
  const int bsz = batch.lr.dim(0);
  Rng step_rng = Rng(cfg.seed).fork(0x57E90000ull + static_cast<uint64_t>(global_step));

  Var<T> lr_in = Var<T>::constant(batch.lr.template cast<T>());
  Var<T> hr_in = Var<T>::constant(batch.hr.template cast<T>());

  Var<T> prior;
  tpem::DiffusionLoss<T> dl;
  if (finetune) {
    Tensor<T> p_l, p_h;
    {
      NoGradGuard ng;
      p_l = sys.tpg.recognize(lr_in).detach();
      p_h = sys.tpg.recognize(hr_in).detach();
    }
    // ETP branch: x_T ~ N(0,I) per item, one-step x0 estimate when S == 1.
    Tensor<T> x_top = step_rng.normal_tensor<T>({bsz, tpem::kSeqLen, tpem::kAlphabet});
    if (sys.model.cfg.ddim_steps == 1) {
      std::vector<int> t_top(static_cast<size_t>(bsz), sys.model.schedule.steps);
      prior = softmax_lastdim(sys.model.denoiser(Var<T>::constant(x_top), Var<T>::constant(p_l),
                                                 t_top, /*training=*/true));
    } else {
      // multi-step sampling stays outside the graph; the denoiser still
      // learns through the diffusion loss below
      Tensor<T> etp(Shape{bsz, tpem::kSeqLen, tpem::kAlphabet});
      for (int i = 0; i < bsz; ++i) {
        Tensor<T> pl_i(Shape{tpem::kSeqLen, tpem::kAlphabet});
        std::copy_n(p_l.data() + static_cast<int64_t>(i) * pl_i.numel(), pl_i.numel(), pl_i.data());
        Tensor<T> pe = tpem::ddim_sample(sys.model.denoiser, pl_i, sys.model.schedule,
                                         sys.model.cfg.ddim_steps, step_rng.next_u64());
        std::copy_n(pe.data(), pe.numel(), etp.data() + static_cast<int64_t>(i) * pe.numel());
      }
      prior = softmax_lastdim(Var<T>::constant(etp));
    }
    // Diffusion branch: q_sample at per-item uniform t, x0-prediction loss.
    Tensor<T> x_t(Shape{bsz, tpem::kSeqLen, tpem::kAlphabet});
    std::vector<int> t_vec(static_cast<size_t>(bsz));
    const int64_t item = static_cast<int64_t>(tpem::kSeqLen) * tpem::kAlphabet;
    for (int i = 0; i < bsz; ++i) {
      t_vec[static_cast<size_t>(i)] = step_rng.uniform_int(1, sys.model.schedule.steps);
      Tensor<T> x0_i(Shape{tpem::kSeqLen, tpem::kAlphabet});
      std::copy_n(p_h.data() + i * item, item, x0_i.data());
      Tensor<T> eps = step_rng.normal_tensor<T>(x0_i.shape());
      Tensor<T> xt_i = tpem::q_sample(x0_i, t_vec[static_cast<size_t>(i)], eps, sys.model.schedule);
      std::copy_n(xt_i.data(), item, x_t.data() + i * item);
    }
    Var<T> x0_hat = sys.model.denoiser(Var<T>::constant(x_t), Var<T>::constant(p_l), t_vec,
                                       /*training=*/true);
    dl = tpem::diffusion_loss(x0_hat, Var<T>::constant(p_h), batch.labels,
                              static_cast<T>(cfg.weights.l1), static_cast<T>(cfg.weights.l2));
  } else {
    NoGradGuard ng;
    prior = Var<T>::constant(sys.tpg.recognize(hr_in).detach());
  }

  Var<T> f_n_o;
  Var<T> i_sr = sys.model.forward(lr_in, prior, /*training=*/true, &f_n_o);
  losses::ImageLossTerms<T> img = losses::image_loss(i_sr, hr_in);
  Var<T> ctc_a = losses::text_loss(sys.model.arm(f_n_o, /*training=*/true), batch.labels);

  Var<T> total = add(add(mul_scalar(img.mse, static_cast<T>(cfg.weights.l3)),
                         mul_scalar(img.sfm, static_cast<T>(cfg.weights.l4))),
                     mul_scalar(ctc_a, static_cast<T>(cfg.weights.l5)));
  if (finetune) total = add(total, dl.total);

  StepResult res;
  res.report = losses::total_loss(finetune ? static_cast<double>(dl.mae.item()) : 0.0,
                                  finetune ? static_cast<double>(dl.ctc.item()) : 0.0,
                                  img.mse.item(), img.sfm.item(), ctc_a.item(), cfg.weights,
                                  finetune);
  if (!is_finite(total.item()))
    fail_numeric("train_step: non-finite loss at step " + std::to_string(global_step));

  params.zero_grad();
  backward(total);
  if (!grads_finite(params)) {
    res.skipped = true;  // NaN gradient: skip the update, keep the weights
  } else {
    res.grad_norm = clip_grad_norm(params, cfg.clip_norm);
    opt.step(params);
  }
  res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
  return res;
}

inline void log_step(std::ofstream& log, const std::string& stage, int epoch, int64_t step,
                     const StepResult& r) {
  nlohmann::json j = r.report.to_json();
  j["stage"] = stage;
  j["epoch"] = epoch;
  j["step"] = step;
  j["grad_norm"] = r.grad_norm;
  j["skipped"] = r.skipped;
  j["wall_ms"] = r.wall_ms;
  log << j.dump() << "\n";
  log.flush();
}

struct RunResult {
  std::string ckpt_path;
  int64_t steps = 0;
  std::vector<double> epoch_mean_total;  // mean weighted total per epoch
};

// Shared two-stage driver. Stage "pretrain" excludes the denoiser from the
// optimized set; "finetune" optionally initializes from a pretrain
// checkpoint (init_ckpt) and trains everything.
template <class T>
RunResult run_stage(sr::PeanSystem<T>& sys, const std::string& stage,
                    const std::vector<Sample>& data, const TrainConfig& cfg,
                    const std::string& out_dir, const std::string& init_ckpt = "",
                    const std::string& resume_ckpt = "",
                    const nlohmann::json& config_echo = nlohmann::json::object()) {
  check(stage == "pretrain" || stage == "finetune", "run_stage: unknown stage " + stage);
  const bool finetune = stage == "finetune";

  nn::Params<T> params;
  sys.model.collect(params, /*include_denoiser=*/finetune);
  nn::Params<T> full;  // checkpoint surface: model params + frozen TPG echo
  sys.model.collect(full, /*include_denoiser=*/finetune);
  sys.tpg.collect(full, "tpg");

  AdamW<T> opt;
  opt.lr = static_cast<T>(cfg.lr);
  opt.weight_decay = static_cast<T>(cfg.weight_decay);
  opt.init(params);

  int64_t start_step = 0;
  if (!resume_ckpt.empty()) {
    CheckpointMeta meta = load_checkpoint(resume_ckpt, full, static_cast<AdamW<T>*>(nullptr),
                                          /*strict=*/true);
    // optimizer state is keyed to the trainable subset
    nn::Params<T> opt_surface;
    sys.model.collect(opt_surface, finetune);
    load_checkpoint(resume_ckpt, opt_surface, &opt, /*strict=*/false);
    start_step = meta.step;
  } else if (finetune && !init_ckpt.empty()) {
    // strict shape match over the pretrain surface; denoiser stays fresh
    nn::Params<T> pre_surface;
    sys.model.collect(pre_surface, /*include_denoiser=*/false);
    sys.tpg.collect(pre_surface, "tpg");
    load_checkpoint(init_ckpt, pre_surface, static_cast<AdamW<T>*>(nullptr), /*strict=*/true);
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  const std::string log_path = out_dir + "/" + stage + ".log.jsonl";
  std::ofstream log(log_path, start_step > 0 ? std::ios::app : std::ios::trunc);
  if (!log) fail_io("cannot open training log: " + log_path);

  const int n = static_cast<int>(data.size());
  const int steps_per_epoch = std::max(1, n / cfg.batch);
  RunResult out;
  out.steps = start_step;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if ((epoch + 1) * steps_per_epoch <= start_step) continue;  // already done (resume)
    const std::vector<int> order = epoch_order(n, cfg.seed, epoch);
    double epoch_total = 0;
    int epoch_steps = 0;
    for (int k = 0; k < steps_per_epoch; ++k) {
      const int64_t global_step = static_cast<int64_t>(epoch) * steps_per_epoch + k;
      if (global_step < start_step) continue;
      if (cfg.max_steps > 0 && global_step >= cfg.max_steps) break;
      std::vector<int> idx(order.begin() + static_cast<int64_t>(k) * cfg.batch,
                           order.begin() + std::min<int64_t>(n, (static_cast<int64_t>(k) + 1) *
                                                                    cfg.batch));
      if (idx.size() < 2) continue;
      Batch batch = make_batch(data, idx);
      StepResult r = train_step(sys, batch, stage, cfg, params, opt, global_step);
      log_step(log, stage, epoch, global_step, r);
      epoch_total += r.report.total;
      ++epoch_steps;
      out.steps = global_step + 1;
    }
    if (epoch_steps > 0) out.epoch_mean_total.push_back(epoch_total / epoch_steps);
    if (!cfg.quiet && epoch_steps > 0)
      std::fprintf(stderr, "[%s] epoch %d/%d mean total %.4f\n", stage.c_str(), epoch + 1,
                   cfg.epochs, out.epoch_mean_total.back());
    if (cfg.max_steps > 0 && out.steps >= cfg.max_steps) break;
  }

  CheckpointMeta meta;
  meta.stage = stage;
  meta.step = out.steps;
  meta.config = config_echo.empty() ? nlohmann::json{{"train", cfg.to_json()}} : config_echo;
  out.ckpt_path = out_dir + "/" + stage + ".ckpt";
  save_checkpoint(out.ckpt_path, full, meta, &opt, &params);
  return out;
}

template <class T>
RunResult pretrain(sr::PeanSystem<T>& sys, const std::vector<Sample>& data,
                   const TrainConfig& cfg, const std::string& out_dir,
                   const std::string& resume = "",
                   const nlohmann::json& config_echo = nlohmann::json::object()) {
  return run_stage(sys, "pretrain", data, cfg, out_dir, "", resume, config_echo);
}

template <class T>
RunResult finetune(sr::PeanSystem<T>& sys, const std::string& pretrain_ckpt,
                   const std::vector<Sample>& data, const TrainConfig& cfg,
                   const std::string& out_dir, const std::string& resume = "",
                   const nlohmann::json& config_echo = nlohmann::json::object()) {
  return run_stage(sys, "finetune", data, cfg, out_dir, pretrain_ckpt, resume, config_echo);
}

// CTC training of the recognizer on HR images mixed with 2x-upsampled LR
// (tpg_lr_fraction of the batch). The resulting checkpoint is the frozen
// TPG and the evaluation recognizer.
template <class T>
RunResult train_recognizer(rec::Recognizer<T>& model, const std::vector<Sample>& data,
                           const TrainConfig& cfg, const std::string& out_dir,
                           const nlohmann::json& config_echo = nlohmann::json::object()) {
  nn::Params<T> params;
  model.collect(params, "tpg");
  AdamW<T> opt;
  opt.lr = static_cast<T>(cfg.lr);
  opt.weight_decay = static_cast<T>(cfg.weight_decay);
  opt.init(params);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  const std::string log_path = out_dir + "/recognizer.log.jsonl";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) fail_io("cannot open training log: " + log_path);

  const int n = static_cast<int>(data.size());
  const int steps_per_epoch = std::max(1, n / cfg.batch);
  RunResult out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order = epoch_order(n, cfg.seed, epoch);
    double epoch_total = 0;
    int epoch_steps = 0;
    for (int k = 0; k < steps_per_epoch; ++k) {
      const int64_t global_step = static_cast<int64_t>(epoch) * steps_per_epoch + k;
      if (cfg.max_steps > 0 && global_step >= cfg.max_steps) break;
      Rng step_rng = Rng(cfg.seed).fork(0x7EC00000ull + static_cast<uint64_t>(global_step));
      std::vector<int> idx(order.begin() + static_cast<int64_t>(k) * cfg.batch,
                           order.begin() + std::min<int64_t>(n, (static_cast<int64_t>(k) + 1) *
                                                                    cfg.batch));
      if (idx.size() < 2) continue;
      std::vector<Image> imgs;
      std::vector<std::vector<int>> labels;
      for (int i : idx) {
        const Sample& s = data[static_cast<size_t>(i)];
        const bool use_lr = step_rng.uniform(0.0, 1.0) < cfg.tpg_lr_fraction;
        imgs.push_back(use_lr ? nearest_upsample2x(s.lr) : s.hr);
        labels.push_back(Charset::encode(s.text));
      }
      Var<T> images = Var<T>::constant(images_to_tensor<float>(imgs).template cast<T>());
      Var<T> loss = rec::ctc_loss(model.logits(images, /*training=*/true), labels);
      const double loss_val = loss.item();
      if (!is_finite(loss_val))
        fail_numeric("train_recognizer: diverged (non-finite loss) at step " +
                     std::to_string(global_step));
      params.zero_grad();
      backward(loss);
      StepResult r;
      r.report.ctc_a_raw = loss_val;
      r.report.total = loss_val;
      if (!grads_finite(params)) {
        r.skipped = true;
      } else {
        r.grad_norm = clip_grad_norm(params, cfg.clip_norm);
        opt.step(params);
      }
      log_step(log, "recognizer", epoch, global_step, r);
      epoch_total += loss_val;
      ++epoch_steps;
      out.steps = global_step + 1;
    }
    if (epoch_steps > 0) out.epoch_mean_total.push_back(epoch_total / epoch_steps);
    if (!cfg.quiet && epoch_steps > 0)
      std::fprintf(stderr, "[recognizer] epoch %d/%d mean ctc %.4f\n", epoch + 1, cfg.epochs,
                   out.epoch_mean_total.back());
    if (cfg.max_steps > 0 && out.steps >= cfg.max_steps) break;
  }

  CheckpointMeta meta;
  meta.stage = "recognizer";
  meta.step = out.steps;
  meta.config = config_echo.empty() ? nlohmann::json{{"train", cfg.to_json()}} : config_echo;
  out.ckpt_path = out_dir + "/recognizer.ckpt";
  save_checkpoint(out.ckpt_path, params, meta, &opt);
  return out;
}

template <class T>
void load_frozen_tpg(rec::Recognizer<T>& model, const std::string& ckpt_path) {
  nn::Params<T> ps;
  model.collect(ps, "tpg");
  load_checkpoint(ckpt_path, ps, static_cast<AdamW<T>*>(nullptr), /*strict=*/false);
  sr::set_requires_grad(ps, false);
}

}  // namespace pean::train
