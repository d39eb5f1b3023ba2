#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "coloc/corpus.hpp"
#include "coloc/errors.hpp"
#include "coloc/eval.hpp"
#include "coloc/pnm.hpp"
#include "coloc/selfcheck.hpp"
#include "coloc/training.hpp"

namespace fs = std::filesystem;
using namespace coloc;

namespace {

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("stats key '" + key + "' wants an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("stats key '" + key + "' wants a number, got '" + v + "'");
  }
}

// --stats key=value overrides for the corpus generator, schema-checked.
void apply_stat(GenConfig& gc, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--stats wants key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq);
  const std::string val = kv.substr(eq + 1);
  if (key == "image_h") gc.image_h = to_int(key, val);
  else if (key == "image_w") gc.image_w = to_int(key, val);
  else if (key == "min_objects") gc.min_objects = to_int(key, val);
  else if (key == "max_objects") gc.max_objects = to_int(key, val);
  else if (key == "dup_fraction") gc.dup_fraction = to_double(key, val);
  else if (key == "min_captions") gc.min_captions = to_int(key, val);
  else if (key == "max_captions") gc.max_captions = to_int(key, val);
  else if (key == "size_word_p") gc.size_word_p = to_double(key, val);
  else if (key == "color_words") gc.color_words = to_int(key, val) != 0;
  else if (key == "background_noise") gc.background_noise = to_double(key, val);
  else if (key == "max_iou") gc.max_iou = to_double(key, val);
  else if (key == "max_place_retries") gc.max_place_retries = to_int(key, val);
  else if (key == "max_caption_len") gc.max_caption_len = to_int(key, val);
  else throw ConfigError("unknown stats key '" + key + "'");
}

// Flat key=value config with '#' comments. Keys are the long flag names
// without the leading dashes; options already given on the command line
// are left alone, so flags win. Applied after parsing because CLI11 only
// processes config files attached to the top-level app, never a
// subcommand's.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  const auto trim = [](const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": expected key=value");
    CLI::Option* opt = key == "config" ? nullptr : cmd->get_option_no_throw("--" + key);
    if (opt == nullptr) throw ConfigError(where + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    opt->add_result(val);
    opt->run_callback();
  }
}

void require_set(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

std::vector<int> parse_ks(const std::string& s) {
  std::vector<int> ks;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) {
        ks.push_back(to_int("k", cur));
        cur.clear();
      }
    } else {
      cur += c;
    }
  }
  if (ks.empty()) throw ConfigError("--k wants a comma-separated list like 1,5,10");
  return ks;
}

std::vector<int> all_image_ids(const Corpus& corpus) {
  std::vector<int> ids(corpus.images.size());
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

std::vector<int> pick_split(const Corpus& corpus, const std::string& which, std::uint64_t split_seed) {
  if (which == "all") return all_image_ids(corpus);
  SplitIds s = split_corpus(corpus, 0.8, 0.1, 0.1, split_seed);
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  if (which == "test") return s.test;
  throw ConfigError("unknown split '" + which + "' (want train, val, test or all)");
}

// Desk-scale encoders sized to the corpus at hand.
ModelConfig model_for(const Corpus& corpus) {
  ModelConfig cfg;
  cfg.image.input_h = corpus.config.image_h;
  cfg.image.input_w = corpus.config.image_w;
  cfg.text.vocab_size = corpus.vocab.size();
  cfg.text.max_len = corpus.config.max_caption_len;
  cfg.validate();
  return cfg;
}

struct GenOpts {
  std::string out;
  int images = -1;
  std::uint64_t seed = 1;
  std::vector<std::string> stats;
  std::string config_path;
};

int run_gen(const GenOpts& o) {
  require_set(o.out, "--out");
  if (o.images < 0) throw ConfigError("--images is required");
  GenConfig gc;
  gc.num_images = o.images;
  for (const std::string& kv : o.stats) apply_stat(gc, kv);
  Corpus corpus = generate_corpus(gc, o.seed);
  save_corpus(corpus, o.out);
  std::cout << "dir\t" << o.out << "\n"
            << "images\t" << corpus.images.size() << "\n"
            << "captions\t" << corpus.captions.size() << "\n"
            << "vocab\t" << corpus.vocab.size() << "\n"
            << "seed\t" << corpus.seed << "\n"
            << "schema\t" << corpus.schema << "\n";
  return 0;
}

struct TrainOpts {
  std::string corpus_dir;
  std::string out;
  std::string loss = "npair";
  std::string mining = "hardest";
  int epochs = 30;
  std::uint64_t seed = 1;
  double lr = 0.05;
  double momentum = 0.9;
  double margin = 0.2;
  int batch = 16;
  int checkpoint_every = 0;
  std::string log_path;
  std::string config_path;
};

int run_train(const TrainOpts& o) {
  require_set(o.corpus_dir, "--corpus");
  require_set(o.out, "--out");
  Corpus corpus = load_corpus(o.corpus_dir);

  TrainConfig cfg;
  cfg.loss_kind = loss_kind_from_string(o.loss);
  cfg.batch_size = o.batch;
  cfg.learning_rate = o.lr;
  cfg.momentum = o.momentum;
  cfg.epochs = o.epochs;
  cfg.seed = o.seed;
  cfg.triplet.margin = o.margin;
  cfg.triplet.mining = mining_from_string(o.mining);
  cfg.checkpoint_every = o.checkpoint_every;
  cfg.checkpoint_path = o.checkpoint_every > 0 ? o.out : "";
  cfg.model = model_for(corpus);
  cfg.validate();

  TrainState state = init_train_state(cfg.model, cfg.seed);
  std::vector<EpochStats> stats = train(state, corpus, cfg, {}, &std::cout);
  save_checkpoint(state, o.out);

  if (!o.log_path.empty()) {
    std::ofstream log(o.log_path);
    if (!log) throw FormatError("cannot open '" + o.log_path + "' for writing");
    for (const EpochStats& es : stats) log << es.epoch << "\t" << es.mean_loss << "\n";
  }
  std::cout << "checkpoint\t" << o.out << "\n";
  return 0;
}

struct EvalOpts {
  std::string ckpt;
  std::string corpus_dir;
  std::string split = "test";
  std::string task;
  std::string parse_mode = "word";
  std::string ks = "1,5,10";
  std::string direction = "caption-to-image";
  std::string report;
  int folds = 5;
  int baseline_trials = 1000;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 1;
  std::string config_path;
};

int run_eval(const EvalOpts& o) {
  require_set(o.ckpt, "--ckpt");
  require_set(o.corpus_dir, "--corpus");
  require_set(o.task, "--task");
  TrainState state = load_checkpoint(o.ckpt);
  Corpus corpus = load_corpus(o.corpus_dir);
  const std::vector<int> ids = pick_split(corpus, o.split, o.split_seed);
  if (ids.empty()) throw ConfigError("split '" + o.split + "' selected no images");

  if (o.task == "pointing") {
    const ParseMode mode = parse_mode_from_string(o.parse_mode);
    PointingResult res = pointing_accuracy(state.params, state.model, corpus, ids, mode);
    PointingResult center = center_baseline(corpus, ids);
    Rng rng(o.seed);
    PointingResult random = random_baseline(corpus, ids, o.baseline_trials, rng);
    std::cout << "task\tpointing\n"
              << "split\t" << o.split << "\n"
              << "parse_mode\t" << o.parse_mode << "\n"
              << "queries\t" << res.total() << "\n"
              << "hits\t" << res.hits << "\n"
              << "accuracy\t" << res.accuracy() << "\n"
              << "center_baseline\t" << center.accuracy() << "\n"
              << "random_baseline\t" << random.accuracy() << "\n";
    if (!o.report.empty()) {
      std::ofstream rep(o.report);
      if (!rep) throw FormatError("cannot open '" + o.report + "' for writing");
      for (const PointingQuery& q : res.queries) {
        rep << q.caption_id << "\t" << q.span_index << "\t" << q.argmax_x << "\t" << q.argmax_y << "\t" << (q.hit ? "hit" : "miss") << "\n";
      }
    }
    return 0;
  }

  if (o.task == "retrieval") {
    if (!o.report.empty()) throw ConfigError("per-query reports are only available for the pointing task");
    const Direction dir = direction_from_string(o.direction);
    const std::vector<int> ks = parse_ks(o.ks);
    FoldedRecall fr = recall_folds(state.params, state.model, corpus, ids, ks, dir, o.folds, o.seed);
    std::cout << "task\tretrieval\n"
              << "split\t" << o.split << "\n"
              << "direction\t" << to_string(dir) << "\n"
              << "folds\t" << o.folds << "\n";
    for (std::size_t i = 0; i < ks.size(); ++i) std::cout << "recall@" << ks[i] << "\t" << fr.mean_recalls[i] << "\n";
    return 0;
  }

  throw ConfigError("unknown task '" + o.task + "' (want pointing or retrieval)");
}

struct RenderOpts {
  std::string ckpt;
  std::string corpus_dir;
  std::string out;
  int caption_id = -1;
  double mask_quantile = 0.9;
  std::string parse_mode = "word";
  std::string config_path;
};

int run_render(const RenderOpts& o) {
  require_set(o.ckpt, "--ckpt");
  require_set(o.corpus_dir, "--corpus");
  require_set(o.out, "--out");
  if (o.caption_id < 0) throw ConfigError("--caption-id is required");
  TrainState state = load_checkpoint(o.ckpt);
  Corpus corpus = load_corpus(o.corpus_dir);
  const ParseMode mode = parse_mode_from_string(o.parse_mode);
  const GroundedCaption& cap = corpus.caption(o.caption_id);
  const CorpusRecord& rec = corpus.record(cap.image_id);

  EncodedImage eimg = snapshot_image(state.params, state.model, rec);
  EncodedCaption ecap = snapshot_caption(state.params, state.model, cap, mode);
  Tape tape;
  LocalizationSpace space = pair_space(tape, eimg, ecap);

  fs::create_directories(o.out);
  int written = 0;
  const auto emit = [&](SaliencyMap map, int index) {
    map = upsample_map(map, corpus.config.image_h, corpus.config.image_w);
    const std::string stem = std::to_string(cap.caption_id) + "_" + std::to_string(index);
    write_pgm(map, (fs::path(o.out) / (stem + ".pgm")).string());
    write_pbm(threshold_mask(map, o.mask_quantile), (fs::path(o.out) / (stem + ".pbm")).string());
    ++written;
  };

  if (!cap.spans.empty()) {
    for (std::size_t si = 0; si < cap.spans.size(); ++si) {
      const auto [r0, r1] = ecap.span_rows[si];
      emit(mode == ParseMode::Word ? span_saliency_word_mode(space, PhraseSpan{r0, r1}) : token_saliency(space, r0), static_cast<int>(si));
    }
  } else {
    for (int d = 0; d < space.n_valid; ++d) emit(token_saliency(space, d), d);
  }
  std::cout << "caption\t" << cap.caption_id << "\nmaps\t" << written << "\ndir\t" << o.out << "\n";
  return 0;
}

struct SelfCheckOpts {
  std::string inject_fault;
  double fault_factor = 2.0;
};

int run_selfcheck_cmd(const SelfCheckOpts& o) {
  std::optional<FaultSpec> fault;
  if (!o.inject_fault.empty()) fault = FaultSpec{op_kind_from_string(o.inject_fault), o.fault_factor};
  SelfCheckReport report = run_selfcheck(std::cout, fault);
  return report.all_pass() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"image-caption co-localization pipeline"};
  app.require_subcommand(1);

  GenOpts gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-corpus", "generate a synthetic grounded corpus");
  gen_cmd->add_option("--out", gen.out, "output directory (required)");
  gen_cmd->add_option("--images", gen.images, "number of images (required)");
  gen_cmd->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
  gen_cmd->add_option("--stats", gen.stats, "generator overrides, key=value");
  gen_cmd->add_option("--config", gen.config_path, "flat key=value config file; flags win");

  TrainOpts tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train the joint embedding");
  train_cmd->add_option("--corpus", tr.corpus_dir, "corpus directory (required)");
  train_cmd->add_option("--out", tr.out, "checkpoint path (required)");
  train_cmd->add_option("--loss", tr.loss, "npair or triplet")->capture_default_str();
  train_cmd->add_option("--mining", tr.mining, "hardest or random (triplet)")->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--seed", tr.seed)->capture_default_str();
  train_cmd->add_option("--lr", tr.lr, "learning rate")->capture_default_str();
  train_cmd->add_option("--momentum", tr.momentum)->capture_default_str();
  train_cmd->add_option("--margin", tr.margin, "triplet margin")->capture_default_str();
  train_cmd->add_option("--batch", tr.batch, "batch size")->capture_default_str();
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "epochs between snapshots")->capture_default_str();
  train_cmd->add_option("--log", tr.log_path, "write the per-epoch metrics here too");
  train_cmd->add_option("--config", tr.config_path, "flat key=value config file; flags win");

  EvalOpts ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "pointing or retrieval evaluation");
  eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint path (required)");
  eval_cmd->add_option("--corpus", ev.corpus_dir, "corpus directory (required)");
  eval_cmd->add_option("--task", ev.task, "pointing or retrieval (required)");
  eval_cmd->add_option("--split", ev.split, "train, val, test or all")->capture_default_str();
  eval_cmd->add_option("--parse-mode", ev.parse_mode, "word or phrase")->capture_default_str();
  eval_cmd->add_option("--k", ev.ks, "recall cutoffs")->capture_default_str();
  eval_cmd->add_option("--direction", ev.direction, "caption-to-image or image-to-caption")->capture_default_str();
  eval_cmd->add_option("--folds", ev.folds, "retrieval folds")->capture_default_str();
  eval_cmd->add_option("--report", ev.report, "per-query record file (pointing)");
  eval_cmd->add_option("--baseline-trials", ev.baseline_trials)->capture_default_str();
  eval_cmd->add_option("--seed", ev.seed, "baseline/fold seed")->capture_default_str();
  eval_cmd->add_option("--split-seed", ev.split_seed)->capture_default_str();
  eval_cmd->add_option("--config", ev.config_path, "flat key=value config file; flags win");

  RenderOpts rn;
  CLI::App* render_cmd = app.add_subcommand("render", "export saliency heatmaps and masks");
  render_cmd->add_option("--ckpt", rn.ckpt, "checkpoint path (required)");
  render_cmd->add_option("--corpus", rn.corpus_dir, "corpus directory (required)");
  render_cmd->add_option("--caption-id", rn.caption_id, "caption to render (required)");
  render_cmd->add_option("--out", rn.out, "output directory (required)");
  render_cmd->add_option("--mask-quantile", rn.mask_quantile)->capture_default_str();
  render_cmd->add_option("--parse-mode", rn.parse_mode, "word or phrase")->capture_default_str();
  render_cmd->add_option("--config", rn.config_path, "flat key=value config file; flags win");

  SelfCheckOpts sc;
  CLI::App* selfcheck_cmd = app.add_subcommand("selfcheck", "gradient and oracle verification suite");
  selfcheck_cmd->add_option("--inject-fault", sc.inject_fault, "corrupt one op's backward rule")->group("");
  selfcheck_cmd->add_option("--fault-factor", sc.fault_factor)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen_cmd->parsed()) {
      apply_config_file(gen_cmd, gen.config_path);
      return run_gen(gen);
    }
    if (train_cmd->parsed()) {
      apply_config_file(train_cmd, tr.config_path);
      return run_train(tr);
    }
    if (eval_cmd->parsed()) {
      apply_config_file(eval_cmd, ev.config_path);
      return run_eval(ev);
    }
    if (render_cmd->parsed()) {
      apply_config_file(render_cmd, rn.config_path);
      return run_render(rn);
    }
    if (selfcheck_cmd->parsed()) return run_selfcheck_cmd(sc);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
