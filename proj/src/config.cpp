#include "pean/config.hpp"

#include <fstream>

using nlohmann::json;

namespace pean {

namespace {

void reject_unknown(const json& j, const std::vector<std::string>& known,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      fail_config("unknown config key '" + where + "." + it.key() + "'");
}

}  // namespace

RunConfig RunConfig::toy() {
  RunConfig c;
  c.data.n_train = 500;
  c.data.n_test_per_difficulty = 50;
  c.model.amm.c1 = 32;
  c.model.amm.n_blocks = 2;
  c.model.amm.ffn_mult = 2;
  c.model.amm.gam_qk_dim = 64;
  c.model.arm_channels = {32, 32, 48, 48, 64, 64};
  c.model.arm_lstm_hidden = 48;
  c.tpg_channels = {24, 32, 48, 48, 64, 64};
  c.tpg_lstm_hidden = 64;
  c.epochs_recognizer = 12;
  c.epochs_pretrain = 10;
  c.epochs_finetune = 10;
  return c;
}

json RunConfig::to_json() const {
  return {
      {"data",
       {{"n_train", data.n_train},
        {"n_test_per_difficulty", data.n_test_per_difficulty},
        {"seed", data.seed},
        {"min_text_len", data.min_text_len},
        {"max_text_len", data.max_text_len}}},
      {"model",
       {{"c1", model.amm.c1},
        {"n_blocks", model.amm.n_blocks},
        {"ffn_mult", model.amm.ffn_mult},
        {"gam_qk_dim", model.amm.gam_qk_dim},
        {"proj_kernel", model.amm.proj_kernel},
        {"arm_channels", model.arm_channels},
        {"arm_lstm_hidden", model.arm_lstm_hidden},
        {"tpg_channels", tpg_channels},
        {"tpg_lstm_hidden", tpg_lstm_hidden},
        {"diffusion_steps", model.diffusion_steps},
        {"beta_min", model.beta_min},
        {"beta_max", model.beta_max},
        {"ddim_steps", model.ddim_steps}}},
      {"train",
       {{"epochs_recognizer", epochs_recognizer},
        {"epochs_pretrain", epochs_pretrain},
        {"epochs_finetune", epochs_finetune},
        {"lr", train.lr},
        {"batch", train.batch},
        {"seed", train.seed},
        {"clip_norm", train.clip_norm},
        {"weight_decay", train.weight_decay},
        {"tpg_lr_fraction", train.tpg_lr_fraction},
        {"lambda1", train.weights.l1},
        {"lambda2", train.weights.l2},
        {"lambda3", train.weights.l3},
        {"lambda4", train.weights.l4},
        {"lambda5", train.weights.l5}}},
      {"eval", {{"batch", eval_batch}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) fail_config("config root must be a JSON object");
  reject_unknown(j, {"data", "model", "train", "eval", "profile"}, "");
  RunConfig c;
  if (j.value("profile", std::string("toy")) == "toy") c = toy();
  else if (j.value("profile", std::string()) == "default") c = defaults();
  else if (j.contains("profile")) fail_config("unknown profile (want 'toy' or 'default')");

  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"n_train", "n_test_per_difficulty", "seed", "min_text_len", "max_text_len"},
                   "data");
    c.data.n_train = d.value("n_train", c.data.n_train);
    c.data.n_test_per_difficulty = d.value("n_test_per_difficulty", c.data.n_test_per_difficulty);
    c.data.seed = d.value("seed", c.data.seed);
    c.data.min_text_len = d.value("min_text_len", c.data.min_text_len);
    c.data.max_text_len = d.value("max_text_len", c.data.max_text_len);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m,
                   {"c1", "n_blocks", "ffn_mult", "gam_qk_dim", "proj_kernel", "arm_channels",
                    "arm_lstm_hidden", "tpg_channels", "tpg_lstm_hidden", "diffusion_steps",
                    "beta_min", "beta_max", "ddim_steps"},
                   "model");
    c.model.amm.c1 = m.value("c1", c.model.amm.c1);
    c.model.amm.n_blocks = m.value("n_blocks", c.model.amm.n_blocks);
    c.model.amm.ffn_mult = m.value("ffn_mult", c.model.amm.ffn_mult);
    c.model.amm.gam_qk_dim = m.value("gam_qk_dim", c.model.amm.gam_qk_dim);
    c.model.amm.proj_kernel = m.value("proj_kernel", c.model.amm.proj_kernel);
    c.model.arm_channels = m.value("arm_channels", c.model.arm_channels);
    c.model.arm_lstm_hidden = m.value("arm_lstm_hidden", c.model.arm_lstm_hidden);
    c.tpg_channels = m.value("tpg_channels", c.tpg_channels);
    c.tpg_lstm_hidden = m.value("tpg_lstm_hidden", c.tpg_lstm_hidden);
    c.model.diffusion_steps = m.value("diffusion_steps", c.model.diffusion_steps);
    c.model.beta_min = m.value("beta_min", c.model.beta_min);
    c.model.beta_max = m.value("beta_max", c.model.beta_max);
    c.model.ddim_steps = m.value("ddim_steps", c.model.ddim_steps);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t,
                   {"epochs_recognizer", "epochs_pretrain", "epochs_finetune", "lr", "batch",
                    "seed", "clip_norm", "weight_decay", "tpg_lr_fraction", "lambda1", "lambda2",
                    "lambda3", "lambda4", "lambda5"},
                   "train");
    c.epochs_recognizer = t.value("epochs_recognizer", c.epochs_recognizer);
    c.epochs_pretrain = t.value("epochs_pretrain", c.epochs_pretrain);
    c.epochs_finetune = t.value("epochs_finetune", c.epochs_finetune);
    c.train.lr = t.value("lr", c.train.lr);
    c.train.batch = t.value("batch", c.train.batch);
    c.train.seed = t.value("seed", c.train.seed);
    c.train.clip_norm = t.value("clip_norm", c.train.clip_norm);
    c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
    c.train.tpg_lr_fraction = t.value("tpg_lr_fraction", c.train.tpg_lr_fraction);
    c.train.weights.l1 = t.value("lambda1", c.train.weights.l1);
    c.train.weights.l2 = t.value("lambda2", c.train.weights.l2);
    c.train.weights.l3 = t.value("lambda3", c.train.weights.l3);
    c.train.weights.l4 = t.value("lambda4", c.train.weights.l4);
    c.train.weights.l5 = t.value("lambda5", c.train.weights.l5);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_unknown(e, {"batch"}, "eval");
    c.eval_batch = e.value("batch", c.eval_batch);
  }
  return c;
}

RunConfig RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_io("cannot open config file: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) fail_config("config file is not valid JSON: " + path);
  return from_json(j);
}

sr::PeanSystem<float> make_system(const RunConfig& cfg) {
  sr::PeanSystem<float> sys;
  Rng model_rng = Rng(cfg.train.seed).fork(0x0DE1);
  sys.model = sr::PeanModel<float>(model_rng, cfg.model);
  Rng tpg_rng = Rng(cfg.train.seed).fork(0x079A);
  sys.tpg = rec::Recognizer<float>(tpg_rng, cfg.tpg_config());
  return sys;
}

rec::Recognizer<float> make_recognizer(const RunConfig& cfg) {
  Rng tpg_rng = Rng(cfg.train.seed).fork(0x079A);
  return rec::Recognizer<float>(tpg_rng, cfg.tpg_config());
}

}  // namespace pean
