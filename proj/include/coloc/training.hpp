#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "coloc/corpus.hpp"
#include "coloc/encoders.hpp"
#include "coloc/losses.hpp"

namespace coloc {

struct TrainConfig {
  LossKind loss_kind = LossKind::NPair;
  int batch_size = 16;
  double learning_rate = 0.05;
  double momentum = 0.9;
  int epochs = 30;
  std::uint64_t seed = 1;
  TripletConfig triplet;
  int checkpoint_every = 0;      // epochs between snapshots; 0 = final only
  std::string checkpoint_path;   // used when checkpoint_every > 0
  ModelConfig model;

  void validate() const;
};

struct TrainState {
  ModelConfig model;
  ModelParams params;
  ModelParams velocity;  // same shapes, zero-initialized
  int epoch = 0;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
};

TrainState init_train_state(const ModelConfig& cfg, std::uint64_t seed);

// Classical momentum: v <- mu*v + g; p <- p - lr*v.
// grads pair up with params positionally (named_tensors order).
void sgd_momentum_step(TrainState& state, const std::vector<std::pair<std::string, Tensor>>& grads, double lr, double mu);

// Optimizes state in place from state.epoch up to cfg.epochs. The image
// pool (all images if empty) is reshuffled every epoch; each epoch runs
// floor(pool/B) batches. Per-epoch RNG streams are derived from
// (seed, epoch), so resuming from a checkpoint replays the identical
// trajectory. Throws DomainError naming the epoch and batch if the loss
// or a gradient goes non-finite.
std::vector<EpochStats> train(TrainState& state, const Corpus& corpus, const TrainConfig& cfg, const std::vector<int>& pool = {},
                              std::ostream* log = nullptr);

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace coloc
