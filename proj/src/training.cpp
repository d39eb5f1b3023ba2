#include "coloc/training.hpp"

#include <cmath>

#include "coloc/checkpoint.hpp"
#include "coloc/errors.hpp"

namespace coloc {

void TrainConfig::validate() const {
  model.validate();
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2, got " + std::to_string(batch_size));
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (triplet.margin < 0.0) throw ConfigError("margin must be nonnegative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be nonnegative");
  if (checkpoint_every > 0 && checkpoint_path.empty()) throw ConfigError("checkpoint_every needs a checkpoint path");
}

TrainState init_train_state(const ModelConfig& cfg, std::uint64_t seed) {
  TrainState st;
  st.model = cfg;
  st.params = init_params(cfg, seed);
  st.velocity = st.params;
  for (auto& [name, t] : st.velocity.named_tensors()) {
    (void)name;
    *t = Tensor::zeros(t->shape());
    t->requires_grad = false;
  }
  st.epoch = 0;
  st.seed = seed;
  return st;
}

void sgd_momentum_step(TrainState& state, const std::vector<std::pair<std::string, Tensor>>& grads, double lr, double mu) {
  auto params = state.params.named_tensors();
  auto vels = state.velocity.named_tensors();
  if (grads.size() != params.size()) {
    throw DataError("state corruption: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].second;
    Tensor& v = *vels[i].second;
    const Tensor& g = grads[i].second;
    if (grads[i].first != params[i].first || g.shape() != p.shape() || v.shape() != p.shape()) {
      throw DataError("state corruption: gradient '" + grads[i].first + "' " + shape_to_string(g.shape()) + " does not match parameter '" + params[i].first +
                      "' " + shape_to_string(p.shape()));
    }
    for (int k = 0; k < p.size(); ++k) {
      v.data()[k] = mu * v.data()[k] + g.data()[k];
      p.data()[k] -= lr * v.data()[k];
    }
  }
}

namespace {

Batch slice_batch(const Corpus& corpus, const std::vector<int>& order, int first, int b, Rng& rng) {
  Batch batch;
  for (int k = 0; k < b; ++k) {
    const CorpusRecord& rec = corpus.record(order[static_cast<std::size_t>(first + k)]);
    if (rec.caption_ids.empty()) throw DataError("image " + std::to_string(rec.image_id) + " has no captions");
    const int cap_id = rec.caption_ids[static_cast<std::size_t>(rng.below(static_cast<int>(rec.caption_ids.size())))];
    BatchEntry e;
    e.image_id = rec.image_id;
    e.caption_id = cap_id;
    e.image = rec.image;
    e.tokens = corpus.caption(cap_id).tokens;
    batch.entries.push_back(std::move(e));
  }
  return batch;
}

}  // namespace

std::vector<EpochStats> train(TrainState& state, const Corpus& corpus, const TrainConfig& cfg, const std::vector<int>& pool, std::ostream* log) {
  cfg.validate();
  std::vector<int> ids = pool;
  if (ids.empty()) {
    ids.resize(corpus.images.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  }
  if (static_cast<int>(ids.size()) < cfg.batch_size) {
    throw DataError("training pool has " + std::to_string(ids.size()) + " images, batch needs " + std::to_string(cfg.batch_size));
  }
  const int batches_per_epoch = static_cast<int>(ids.size()) / cfg.batch_size;

  std::vector<EpochStats> stats;
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    Rng erng(mix_seed(state.seed, 0xE9000000ULL + static_cast<std::uint64_t>(epoch)));
    std::vector<int> order = ids;
    erng.shuffle(order);
    Rng mine_rng(mix_seed(state.seed, 0x3A000000ULL + static_cast<std::uint64_t>(epoch)));

    double loss_sum = 0.0;
    for (int bi = 0; bi < batches_per_epoch; ++bi) {
      Batch batch = slice_batch(corpus, order, bi * cfg.batch_size, cfg.batch_size, erng);

      Tape tape;
      ModelParams bound = bind_params(tape, state.params, true);
      ScoreMatrix scores = score_matrix(tape, batch, bound, cfg.model);
      Tensor loss = cfg.loss_kind == LossKind::NPair ? npair_loss(tape, scores) : triplet_loss(tape, scores, cfg.triplet, &mine_rng);
      if (!std::isfinite(loss.item())) {
        throw DomainError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(bi));
      }
      tape.backward(loss);

      std::vector<std::pair<std::string, Tensor>> grads;
      for (auto& [name, t] : bound.named_tensors()) {
        Tensor g = tape.has_grad(*t) ? tape.grad(*t) : Tensor::zeros(t->shape());
        if (!g.all_finite()) throw DomainError("non-finite gradient for " + name + " at epoch " + std::to_string(epoch) + " batch " + std::to_string(bi));
        grads.emplace_back(name, std::move(g));
      }
      sgd_momentum_step(state, grads, cfg.learning_rate, cfg.momentum);
      loss_sum += loss.item();
    }

    EpochStats es;
    es.epoch = epoch;
    es.mean_loss = batches_per_epoch > 0 ? loss_sum / batches_per_epoch : 0.0;
    stats.push_back(es);
    if (log != nullptr) *log << es.epoch << "\t" << es.mean_loss << "\n";
    state.epoch = epoch + 1;

    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) save_checkpoint(state, cfg.checkpoint_path);
  }
  return stats;
}

namespace {

Tensor encode_model_config(const ModelConfig& cfg) {
  std::vector<double> v = {static_cast<double>(cfg.image.input_h),     static_cast<double>(cfg.image.input_w),
                           static_cast<double>(cfg.image.input_channels), static_cast<double>(cfg.image.embed_dim),
                           static_cast<double>(cfg.text.vocab_size),   static_cast<double>(cfg.text.embed_dim),
                           static_cast<double>(cfg.text.hidden_dim),   static_cast<double>(cfg.text.max_len),
                           static_cast<double>(cfg.image.convs.size())};
  for (const ConvSpec& c : cfg.image.convs) {
    v.push_back(c.in_channels);
    v.push_back(c.out_channels);
    v.push_back(c.kernel);
    v.push_back(c.stride);
  }
  return Tensor({static_cast<int>(v.size())}, v);
}

ModelConfig decode_model_config(const Tensor& t, const std::string& path) {
  if (t.rank() != 1 || t.size() < 9) throw FormatError(path + ": malformed model config tensor");
  ModelConfig cfg;
  cfg.image.input_h = static_cast<int>(t.at(0));
  cfg.image.input_w = static_cast<int>(t.at(1));
  cfg.image.input_channels = static_cast<int>(t.at(2));
  cfg.image.embed_dim = static_cast<int>(t.at(3));
  cfg.text.vocab_size = static_cast<int>(t.at(4));
  cfg.text.embed_dim = static_cast<int>(t.at(5));
  cfg.text.hidden_dim = static_cast<int>(t.at(6));
  cfg.text.max_len = static_cast<int>(t.at(7));
  const int n_convs = static_cast<int>(t.at(8));
  if (t.size() != 9 + 4 * n_convs) throw FormatError(path + ": model config tensor promises " + std::to_string(n_convs) + " conv layers");
  cfg.image.convs.clear();
  for (int i = 0; i < n_convs; ++i) {
    ConvSpec c;
    c.in_channels = static_cast<int>(t.at(9 + 4 * i));
    c.out_channels = static_cast<int>(t.at(10 + 4 * i));
    c.kernel = static_cast<int>(t.at(11 + 4 * i));
    c.stride = static_cast<int>(t.at(12 + 4 * i));
    cfg.image.convs.push_back(c);
  }
  cfg.validate();
  return cfg;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.emplace_back("model", encode_model_config(state.model));
  const double seed_lo = static_cast<double>(state.seed & 0xffffffffULL);
  const double seed_hi = static_cast<double>(state.seed >> 32);
  tensors.emplace_back("meta", Tensor({3}, {static_cast<double>(state.epoch), seed_lo, seed_hi}));
  for (const auto& [name, t] : state.params.named_tensors()) tensors.emplace_back("param:" + name, *t);
  for (const auto& [name, t] : state.velocity.named_tensors()) tensors.emplace_back("vel:" + name, *t);
  save_tensors(path, tensors);
}

TrainState load_checkpoint(const std::string& path) {
  auto tensors = load_tensors(path);
  const auto find = [&](const std::string& name) -> Tensor* {
    for (auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  };
  const Tensor* model_t = find("model");
  const Tensor* meta = find("meta");
  if (model_t == nullptr || meta == nullptr || meta->size() != 3) throw FormatError(path + ": missing model or meta record");

  TrainState st;
  st.model = decode_model_config(*model_t, path);
  st.epoch = static_cast<int>(meta->at(0));
  st.seed = static_cast<std::uint64_t>(meta->at(1)) | (static_cast<std::uint64_t>(meta->at(2)) << 32);

  // init to get the right tensor layout, then overwrite from file
  st.params = init_params(st.model, 0);
  st.velocity = st.params;
  for (auto& [name, t] : st.params.named_tensors()) {
    Tensor* loaded = find("param:" + name);
    if (loaded == nullptr) throw FormatError(path + ": missing parameter '" + name + "'");
    if (loaded->shape() != t->shape()) {
      throw FormatError(path + ": parameter '" + name + "' has shape " + shape_to_string(loaded->shape()) + ", model wants " + shape_to_string(t->shape()));
    }
    loaded->requires_grad = true;
    *t = *loaded;
  }
  for (auto& [name, t] : st.velocity.named_tensors()) {
    Tensor* loaded = find("vel:" + name);
    if (loaded == nullptr) throw FormatError(path + ": missing velocity '" + name + "'");
    if (loaded->shape() != t->shape()) {
      throw FormatError(path + ": velocity '" + name + "' has shape " + shape_to_string(loaded->shape()) + ", model wants " + shape_to_string(t->shape()));
    }
    loaded->requires_grad = false;
    *t = *loaded;
  }
  return st;
}

}  // namespace coloc
