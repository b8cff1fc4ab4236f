#pragma once

#include <json.hpp>

#include "pean/datagen.hpp"
#include "pean/srnet.hpp"
#include "pean/trainer.hpp"

namespace pean {

// One structured config for the whole pipeline; unknown keys are rejected,
// CLI flags override file values, and the effective config is echoed into
// every produced artifact.
struct RunConfig {
  // data
  DatasetSpec data;
  // model
  sr::SrConfig model;
  std::vector<int> tpg_channels = {32, 48, 64, 64, 96, 96};
  int tpg_lstm_hidden = 96;
  // train
  int epochs_recognizer = 12;
  int epochs_pretrain = 10;
  int epochs_finetune = 10;
  train::TrainConfig train;
  // eval
  int eval_batch = 25;

  static RunConfig defaults() { return RunConfig{}; }
  // Desk-scale profile used by CI and the acceptance experiment.
  static RunConfig toy();

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load_file(const std::string& path);
  nlohmann::json to_json() const;

  rec::RecognizerConfig tpg_config() const {
    rec::RecognizerConfig c;
    c.channels = tpg_channels;
    c.lstm_hidden = tpg_lstm_hidden;
    return c;
  }

  train::TrainConfig stage_train(const std::string& stage) const {
    train::TrainConfig t = train;
    if (stage == "recognizer") t.epochs = epochs_recognizer;
    else if (stage == "pretrain") t.epochs = epochs_pretrain;
    else t.epochs = epochs_finetune;
    return t;
  }
};

// Deterministic model construction: the init stream is derived from the
// train seed, separately per component.
sr::PeanSystem<float> make_system(const RunConfig& cfg);
rec::Recognizer<float> make_recognizer(const RunConfig& cfg);

}  // namespace pean
