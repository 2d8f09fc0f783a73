#include "selip/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>

#include <CLI11.hpp>

#include "selip/autodiff.hpp"
#include "selip/contrastive_loss.hpp"
#include "selip/error.hpp"
#include "selip/hashing.hpp"
#include "selip/report_codec.hpp"
#include "selip/retrieval_eval.hpp"
#include "selip/serialization.hpp"
#include "selip/similarity.hpp"
#include "selip/synth_data.hpp"
#include "selip/trainer.hpp"

namespace selip {

namespace fs = std::filesystem;

namespace {

struct CommandContext {
  CLI::App& app;
  std::ostream& out;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> manifest_path;
};

using Runner = std::function<void(CommandContext&)>;

struct CommandSpec {
  const char* name;
  const char* help;
  Runner (*setup)(CLI::App&);
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const fs::path& path) { return hex64(fnv1a64(read_text_file(path))); }

std::vector<std::size_t> parse_index_list(const std::string& text, const char* key) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, std::string("'") + item + "' is not a non-negative integer in --" + key, key);
    }
  }
  if (out.empty()) throw Error(ErrorCode::ConfigError, std::string("--") + key + " is empty", key);
  return out;
}

void emit(CommandContext& ctx, const std::string& path, const std::string& contents) {
  if (path.empty()) {
    ctx.out << contents;
    return;
  }
  write_text_file(path, contents);
  ctx.outputs.emplace_back(path);
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// --- vocabulary options -----------------------------------------------------

struct VocabOptions {
  std::string path;
  std::size_t n_sites = 12;
  std::size_t n_appearances = 8;

  void add(CLI::App& app) {
    app.add_option("--vocab", path, "Vocabulary JSON with \"sites\" and \"appearances\"");
    app.add_option("--n-sites", n_sites, "Sites in the built-in vocabulary")->capture_default_str();
    app.add_option("--n-appearances", n_appearances, "Appearances in the built-in vocabulary")->capture_default_str();
  }
  Vocabulary load(CommandContext& ctx) const {
    if (path.empty()) return default_vocabulary(n_sites, n_appearances);
    ctx.inputs.emplace_back(path);
    return vocabulary_from_json(Json::parse(read_text_file(path)));
  }
};

TokenizerConfig tokenizer_from(const std::string& mode, bool lowercase, bool strip) {
  TokenizerConfig cfg;
  if (mode == "word") {
    cfg.mode = TokenMode::Word;
  } else if (mode == "character") {
    cfg.mode = TokenMode::Character;
  } else {
    throw Error(ErrorCode::ConfigError, "token mode must be word or character", "token-mode");
  }
  cfg.lowercase = lowercase;
  cfg.strip_punctuation = strip;
  return cfg;
}

// --- gen-data ---------------------------------------------------------------

Runner setup_gen_data(CLI::App& app) {
  auto o = std::make_shared<std::pair<SynthConfig, std::string>>();
  auto& cfg = o->first;
  app.add_option("--subjects", cfg.n_subjects, "Number of subjects")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  app.add_option("--noise-sigma", cfg.noise_sigma, "Per-coordinate image noise")->capture_default_str();
  app.add_option("--near-dup-rate", cfg.near_duplicate_rate, "Near-duplicate finding rate")->capture_default_str();
  app.add_option("--normal-rate", cfg.normal_rate, "Fraction of normal subjects")->capture_default_str();
  app.add_option("--n-sites", cfg.n_sites, "Anatomic sites in the vocabulary")->capture_default_str();
  app.add_option("--n-appearances", cfg.n_appearances, "Appearances in the vocabulary")->capture_default_str();
  app.add_option("--max-findings", cfg.max_findings, "Maximum findings per subject")->capture_default_str();
  app.add_option("--feature-dim", cfg.feature_dim, "Image feature dimension")->capture_default_str();
  app.add_option("--out", o->second, "Corpus JSONL")->required();
  return [o](CommandContext& ctx) {
    ctx.seed = o->first.seed;
    CorpusGenerator gen(o->first);
    write_corpus(o->second, gen.generate());
    ctx.outputs.emplace_back(o->second);
  };
}

// --- gen-reports ------------------------------------------------------------

struct GenReportsOptions {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  std::size_t max_findings = 3;
  double normal_rate = 0.1;
  VocabOptions vocab;
  std::string out;
};

Runner setup_gen_reports(CLI::App& app) {
  auto o = std::make_shared<GenReportsOptions>();
  app.add_option("--n", o->n, "Number of reports")->capture_default_str();
  app.add_option("--seed", o->seed, "Random seed")->capture_default_str();
  app.add_option("--max-findings", o->max_findings, "Maximum findings per report")->capture_default_str();
  app.add_option("--normal-rate", o->normal_rate, "Fraction of reports without findings")->capture_default_str();
  o->vocab.add(app);
  app.add_option("--out", o->out, "Reports JSONL")->required();
  return [o](CommandContext& ctx) {
    ctx.seed = o->seed;
    if (o->max_findings < 1) throw Error(ErrorCode::ConfigError, "max-findings must be >= 1", "max-findings");
    const Vocabulary vocab = o->vocab.load(ctx);
    const auto sites = vocab.finding_sites();
    const auto appearances = vocab.finding_appearances();
    const auto styles = style_grid(o->seed);
    Rng rng(o->seed);
    std::vector<Json> lines;
    for (std::size_t i = 0; i < o->n; ++i) {
      std::vector<Finding> findings;
      if (!rng.bernoulli(o->normal_rate)) {
        const std::size_t k = 1 + rng.uniform_index(o->max_findings);
        for (std::size_t f = 0; f < k; ++f) {
          findings.push_back(Finding{kAllModalities[rng.uniform_index(kAllModalities.size())],
                                     kAllOrientations[rng.uniform_index(kAllOrientations.size())],
                                     sites[rng.uniform_index(sites.size())],
                                     appearances[rng.uniform_index(appearances.size())]});
        }
      }
      StyleConfig style = styles[i % styles.size()];
      style.seed = rng.next();
      lines.push_back(Json{{"text", generate_pseudo_report(findings, style)},
                           {"gold", findings_to_json(findings)},
                           {"style", i % styles.size()}});
    }
    write_jsonl(o->out, lines);
    ctx.outputs.emplace_back(o->out);
  };
}

// --- parse-reports ----------------------------------------------------------

Runner setup_parse_reports(CLI::App& app) {
  struct Options {
    std::string in, out;
    VocabOptions vocab;
  };
  auto o = std::make_shared<Options>();
  app.add_option("--in", o->in, "Reports JSONL (field \"text\")")->required();
  o->vocab.add(app);
  app.add_option("--out", o->out, "Predictions JSONL")->required();
  return [o](CommandContext& ctx) {
    const Vocabulary vocab = o->vocab.load(ctx);
    ctx.inputs.emplace_back(o->in);
    std::vector<Json> lines;
    for (const auto& record : read_jsonl(o->in)) {
      const auto text = record.at("text").get<std::string>();
      try {
        lines.push_back(Json{{"parsed", true}, {"findings", findings_to_json(parse_report(text, vocab))}});
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ParseFailure) throw;
        lines.push_back(Json{{"parsed", false}, {"findings", Json::array()}, {"error", e.what()}});
      }
    }
    write_jsonl(o->out, lines);
    ctx.outputs.emplace_back(o->out);
  };
}

// --- eval-extraction --------------------------------------------------------

Runner setup_eval_extraction(CLI::App& app) {
  struct Options {
    std::string pred, gold, out;
  };
  auto o = std::make_shared<Options>();
  app.add_option("--pred", o->pred, "Predictions JSONL from parse-reports")->required();
  app.add_option("--gold", o->gold, "Gold JSONL (field \"gold\")")->required();
  app.add_option("--out", o->out, "ExtractionReport JSON (stdout when omitted)");
  return [o](CommandContext& ctx) {
    ctx.inputs = {o->pred, o->gold};
    std::vector<ParsedReport> predictions;
    for (const auto& j : read_jsonl(o->pred)) {
      if (j.value("parsed", true)) {
        predictions.emplace_back(findings_from_json(j.at("findings")));
      } else {
        predictions.emplace_back(std::nullopt);
      }
    }
    std::vector<std::vector<Finding>> gold;
    for (const auto& j : read_jsonl(o->gold)) gold.push_back(findings_from_json(j.at("gold")));
    emit(ctx, o->out, dump(extraction_report_to_json(eval_extraction(predictions, gold))));
  };
}

// --- sim-matrix -------------------------------------------------------------

Runner setup_sim_matrix(CLI::App& app) {
  struct Options {
    std::string in, out_json, out_csv, token_mode = "word";
    bool lowercase = true, strip = true;
    VocabOptions vocab;
  };
  auto o = std::make_shared<Options>();
  app.add_option("--in", o->in, "Descriptions JSONL (field \"findings\", optional \"text\")")->required();
  app.add_option("--out-json", o->out_json, "S matrix JSON (stdout when omitted)");
  app.add_option("--out-csv", o->out_csv, "S matrix CSV");
  app.add_option("--token-mode", o->token_mode, "word or character")->capture_default_str();
  app.add_option("--lowercase", o->lowercase, "Lowercase tokens")->capture_default_str();
  app.add_option("--strip-punctuation", o->strip, "Drop ASCII punctuation")->capture_default_str();
  o->vocab.add(app);
  return [o](CommandContext& ctx) {
    const auto cfg = tokenizer_from(o->token_mode, o->lowercase, o->strip);
    const Vocabulary vocab = o->vocab.load(ctx);
    ctx.inputs.emplace_back(o->in);
    std::vector<Description> batch;
    for (const auto& j : read_jsonl(o->in)) batch.push_back(description_from_json(j, &vocab));
    const auto S = batch_similarity_matrix(batch, cfg);
    emit(ctx, o->out_json, dump(Json{{"n", S.n}, {"S", matrix_to_json(S.values)}}));
    if (!o->out_csv.empty()) emit(ctx, o->out_csv, matrix_to_csv(S.values));
  };
}

// --- loss-eval --------------------------------------------------------------

Runner setup_loss_eval(CLI::App& app) {
  struct Options {
    std::string embeddings, sim, out;
    LossConfig loss;
  };
  auto o = std::make_shared<Options>();
  app.add_option("--embeddings", o->embeddings, "Binary embeddings file")->required();
  app.add_option("--sim", o->sim, "S matrix JSON (required unless beta = 0)");
  app.add_option("--tau", o->loss.tau, "Softmax temperature")->capture_default_str();
  app.add_option("--alpha", o->loss.alpha, "Weight of the contrastive term")->capture_default_str();
  app.add_option("--beta", o->loss.beta, "Weight of the soft-target term")->capture_default_str();
  app.add_option("--epsilon", o->loss.epsilon_smooth, "Smoothing added to S")->capture_default_str();
  app.add_option("--out", o->out, "LossBreakdown JSON (stdout when omitted)");
  return [o](CommandContext& ctx) {
    ctx.inputs.emplace_back(o->embeddings);
    const auto batch = read_embeddings(o->embeddings);
    std::optional<Matrix> S;
    if (!o->sim.empty()) {
      ctx.inputs.emplace_back(o->sim);
      const auto j = Json::parse(read_text_file(o->sim));
      S = matrix_from_json(j.is_object() ? j.at("S") : j);
    } else if (o->loss.beta != 0.0) {
      throw Error(ErrorCode::ConfigError, "--sim is required when beta != 0", "sim");
    }
    emit(ctx, o->out, dump(loss_breakdown_to_json(total_loss(batch, S ? &*S : nullptr, o->loss))));
  };
}

// --- grad-check -------------------------------------------------------------

Runner setup_grad_check(CLI::App& app) {
  struct Options {
    std::uint64_t seed = 0;
    std::size_t configs = 20;
    double h = 1e-5;
    double tolerance = 1e-4;
    std::string out;
  };
  auto o = std::make_shared<Options>();
  app.add_option("--seed", o->seed, "Random seed")->capture_default_str();
  app.add_option("--configs", o->configs, "Number of random configurations")->capture_default_str();
  app.add_option("--fd-step", o->h, "Central difference step")->capture_default_str();
  app.add_option("--tolerance", o->tolerance, "Pass threshold on the max relative error")->capture_default_str();
  app.add_option("--out", o->out, "Report JSON (stdout when omitted)");
  return [o](CommandContext& ctx) {
    ctx.seed = o->seed;
    Rng rng(o->seed);
    constexpr std::size_t kN[] = {2, 4, 8};
    constexpr std::size_t kD[] = {3, 16};
    constexpr double kTau[] = {0.07, 1.0};
    Json runs = Json::array();
    double worst = 0.0;
    for (std::size_t c = 0; c < o->configs; ++c) {
      const std::size_t n = kN[rng.uniform_index(3)];
      const std::size_t d = kD[rng.uniform_index(2)];
      const double tau = kTau[rng.uniform_index(2)];
      Matrix vi(n, d), vt(n, d), S(n, n);
      for (double& v : vi.data()) v = rng.normal();
      for (double& v : vt.data()) v = rng.normal();
      for (std::size_t i = 0; i < n; ++i) {
        S(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) S(i, j) = S(j, i) = rng.uniform01();
      }
      Parameter image("image", vi), text("text", vt);
      LossConfig cfg;
      cfg.tau = tau;
      auto objective = [&] {
        Tape tape;
        const auto nodes = build_total_loss(tape, tape.parameter(image), tape.parameter(text), &S, cfg);
        return tape.scalar_value(nodes.total);
      };
      {
        Tape tape;
        const auto nodes = build_total_loss(tape, tape.parameter(image), tape.parameter(text), &S, cfg);
        tape.backward(nodes.total);
      }
      Parameter* params[] = {&image, &text};
      const double err = finite_diff_check(objective, params, o->h);
      worst = std::max(worst, err);
      runs.push_back(Json{{"N", n}, {"d", d}, {"tau", tau}, {"max_rel_error", err}});
    }
    emit(ctx, o->out,
         dump(Json{{"configs", runs},
                   {"h", o->h},
                   {"max_rel_error", worst},
                   {"tolerance", o->tolerance},
                   {"passed", worst < o->tolerance}}));
  };
}

// --- training shared --------------------------------------------------------

struct TrainingOptions {
  std::string corpus;
  std::string mode = "selip";
  double alpha = 1.0;
  double beta = 1.0;
  double tau = 0.07;
  double epsilon = 1e-6;
  std::size_t batch_size = 64;
  std::size_t epochs = 120;
  std::size_t iters_per_epoch = 250;
  std::int64_t warmup_iters = 5000;
  std::int64_t decay_epochs = 100;
  double lr_image = 1e-4;
  double lr_text = 5e-5;
  std::size_t d_emb = 32;
  std::size_t hidden = 64;
  std::size_t d_proj = 32;
  double train_fraction = 0.7;
  std::uint64_t split_seed = 0;
  std::size_t validation_interval = 100;
  std::size_t validation_size = 256;
  std::size_t similarity_check_interval = 50;
  CLI::Option* beta_option = nullptr;

  void add(CLI::App& app, bool with_mode) {
    app.add_option("--corpus", corpus, "Corpus JSONL from gen-data")->required();
    if (with_mode) app.add_option("--mode", mode, "clip or selip")->capture_default_str();
    app.add_option("--alpha", alpha, "Weight of the contrastive term")->capture_default_str();
    beta_option = app.add_option("--beta", beta, "Weight of the soft-target term (selip)")->capture_default_str();
    app.add_option("--tau", tau, "Softmax temperature")->capture_default_str();
    app.add_option("--epsilon", epsilon, "Smoothing added to S")->capture_default_str();
    app.add_option("--batch-size", batch_size, "Pairs per batch")->capture_default_str();
    app.add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    app.add_option("--iters-per-epoch", iters_per_epoch, "Iterations per epoch")->capture_default_str();
    app.add_option("--warmup-iters", warmup_iters, "Linear warmup iterations")->capture_default_str();
    app.add_option("--decay-epochs", decay_epochs, "Polynomial decay horizon in epochs")->capture_default_str();
    app.add_option("--lr-image", lr_image, "Peak image-encoder learning rate")->capture_default_str();
    app.add_option("--lr-text", lr_text, "Peak text-encoder learning rate")->capture_default_str();
    app.add_option("--d-emb", d_emb, "Token embedding width")->capture_default_str();
    app.add_option("--hidden", hidden, "Hidden layer width")->capture_default_str();
    app.add_option("--d-proj", d_proj, "Shared projection dimension")->capture_default_str();
    app.add_option("--train-fraction", train_fraction, "Subject fraction used for training")->capture_default_str();
    app.add_option("--split-seed", split_seed, "Seed of the subject split")->capture_default_str();
    app.add_option("--validation-interval", validation_interval, "Iterations between validation passes")
        ->capture_default_str();
    app.add_option("--validation-size", validation_size, "Held-out pairs used for validation")
        ->capture_default_str();
    app.add_option("--similarity-check-interval", similarity_check_interval,
                   "Iterations between S-matrix reference checks")
        ->capture_default_str();
  }

  TrainConfig config(TrainMode m, std::uint64_t seed, const std::string& data_tag) const {
    TrainConfig cfg;
    cfg.mode = m;
    cfg.seed = seed;
    cfg.batch_size = batch_size;
    cfg.epochs = epochs;
    cfg.iterations_per_epoch = iters_per_epoch;
    cfg.schedule.lr_init_image = lr_image;
    cfg.schedule.lr_init_text = lr_text;
    cfg.schedule.t_max_warmup = warmup_iters;
    cfg.schedule.e_max = decay_epochs;
    cfg.loss.tau = tau;
    cfg.loss.alpha = alpha;
    cfg.loss.beta = m == TrainMode::ClipOnly ? 0.0 : beta;
    cfg.loss.epsilon_smooth = epsilon;
    cfg.d_emb = d_emb;
    cfg.hidden = hidden;
    cfg.d_proj = d_proj;
    cfg.validation_interval = validation_interval;
    cfg.validation_size = validation_size;
    cfg.similarity_check_interval = similarity_check_interval;
    cfg.data_tag = data_tag;
    return cfg;
  }
};

struct PreparedData {
  PairDataset train;
  PairDataset test;
  std::string data_tag;
};

PreparedData prepare_data(const std::string& corpus_path, double train_fraction, std::uint64_t split_seed) {
  const auto records = read_corpus(corpus_path);
  const auto split = split_dataset(records, train_fraction, split_seed);
  const Json tag{{"corpus_fnv1a64", file_hash(corpus_path)},
                 {"train_fraction", train_fraction},
                 {"split_seed", split_seed}};
  return PreparedData{flatten_pairs(split.train), flatten_pairs(split.test), tag.dump()};
}

RetrievalResult evaluate(EncoderParams& params, const TextVocabulary& vocab, const PairDataset& test,
                         std::span<const std::size_t> ks) {
  if (test.size() == 0) throw Error(ErrorCode::EmptyInput, "held-out split has no pairs");
  const auto candidates = dedupe_candidates(test.texts);
  const Matrix img = encode_images(params, test.images);
  const Matrix txt = encode_texts(params, vocab, candidates.candidates);
  return topk_accuracy(img, txt, candidates.gold, ks);
}

std::string method_label(TrainMode mode) { return mode == TrainMode::ClipOnly ? "CLIP" : "SeLIP"; }

std::string retrieval_csv(const std::vector<std::pair<std::string, RetrievalResult>>& rows) {
  std::string out = "method";
  for (const auto& [k, v] : rows.front().second.top_k_accuracy) out += ",Top-" + std::to_string(k);
  out += '\n';
  for (const auto& [label, result] : rows) {
    out += label;
    for (const auto& [k, v] : result.top_k_accuracy) {
      char buf[32];
      std::snprintf(buf, sizeof buf, ",%.4f", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

// --- train ------------------------------------------------------------------

Runner setup_train(CLI::App& app) {
  struct Options {
    TrainingOptions t;
    std::uint64_t seed = 0;
    std::string log_csv, ckpt_dir, resume;
    std::size_t ckpt_every = 0;
  };
  auto o = std::make_shared<Options>();
  o->t.add(app, true);
  app.add_option("--seed", o->seed, "Training seed")->capture_default_str();
  app.add_option("--log-csv", o->log_csv, "TrainLog CSV");
  app.add_option("--ckpt-dir", o->ckpt_dir, "Checkpoint directory (final.ckpt plus periodic ones)");
  app.add_option("--ckpt-every", o->ckpt_every, "Iterations between periodic checkpoints (0 = final only)")
      ->capture_default_str();
  app.add_option("--resume", o->resume, "Checkpoint to continue from");
  return [o](CommandContext& ctx) {
    ctx.seed = o->seed;
    const TrainMode mode = [&] {
      try {
        return parse_train_mode(o->t.mode);
      } catch (const Error&) {
        throw Error(ErrorCode::ConfigError, "mode must be clip or selip", "mode");
      }
    }();
    if (mode == TrainMode::ClipOnly && o->t.beta_option->count() > 0 && o->t.beta != 0.0) {
      throw Error(ErrorCode::ConfigError, "beta is forbidden in clip mode", "beta");
    }
    ctx.inputs.emplace_back(o->t.corpus);
    auto data = prepare_data(o->t.corpus, o->t.train_fraction, o->t.split_seed);
    TrainConfig cfg = o->t.config(mode, o->seed, data.data_tag);
    if (!o->ckpt_dir.empty()) {
      cfg.checkpoint_dir = o->ckpt_dir;
      cfg.checkpoint_interval = o->ckpt_every;
    }
    std::unique_ptr<Trainer> trainer;
    if (o->resume.empty()) {
      trainer = std::make_unique<Trainer>(std::move(data.train), std::move(data.test), cfg);
    } else {
      ctx.inputs.emplace_back(o->resume);
      trainer = std::make_unique<Trainer>(std::move(data.train), std::move(data.test), cfg,
                                          load_checkpoint(o->resume));
    }
    trainer->run();

    if (!o->log_csv.empty()) {
      std::ostringstream csv;
      trainer->log().write_csv(csv);
      emit(ctx, o->log_csv, csv.str());
    }
    if (!o->ckpt_dir.empty()) {
      const fs::path final_path = fs::path(o->ckpt_dir) / "final.ckpt";
      save_checkpoint(trainer->checkpoint(), final_path);
      ctx.outputs.push_back(final_path);
      if (cfg.checkpoint_interval > 0) {
        for (std::size_t t = cfg.checkpoint_interval; t <= trainer->total_iterations(); t += cfg.checkpoint_interval) {
          const fs::path p = fs::path(o->ckpt_dir) / ("ckpt_" + std::to_string(t) + ".bin");
          if (fs::exists(p)) ctx.outputs.push_back(p);
        }
      }
    }
    Json summary{{"iterations", trainer->iteration()}, {"mode", std::string(to_string(mode))}};
    if (!trainer->log().records.empty()) {
      const auto& last = trainer->log().records.back();
      summary["final_L_clip"] = last.L_clip;
      summary["final_L_se"] = last.L_se;
      summary["final_L_total"] = last.L_total;
    }
    ctx.out << summary.dump() << '\n';
  };
}

// --- eval-retrieval ---------------------------------------------------------

Runner setup_eval_retrieval(CLI::App& app) {
  struct Options {
    std::string corpus, ckpt, ks = "1,2,5,10", out_json, out_csv, method;
  };
  auto o = std::make_shared<Options>();
  app.add_option("--corpus", o->corpus, "Corpus JSONL used for training")->required();
  app.add_option("--ckpt", o->ckpt, "Checkpoint from train")->required();
  app.add_option("--ks", o->ks, "Comma-separated K values")->capture_default_str();
  app.add_option("--out-json", o->out_json, "RetrievalResult JSON (stdout when omitted)");
  app.add_option("--out-csv", o->out_csv, "Top-K table CSV");
  app.add_option("--method", o->method, "Row label in the CSV (defaults to the training mode)");
  return [o](CommandContext& ctx) {
    const auto ks = parse_index_list(o->ks, "ks");
    ctx.inputs = {o->corpus, o->ckpt};
    const auto ckpt = load_checkpoint(o->ckpt);
    const auto meta = Json::parse(ckpt.metadata);
    const auto tag = Json::parse(meta.at("data").get<std::string>());
    if (tag.at("corpus_fnv1a64").get<std::string>() != file_hash(o->corpus)) {
      throw Error(ErrorCode::ConfigError, "checkpoint was trained on a different corpus", "corpus");
    }
    const auto data =
        prepare_data(o->corpus, tag.at("train_fraction").get<double>(), tag.at("split_seed").get<std::uint64_t>());
    auto params = params_from_checkpoint(ckpt);
    const auto result = evaluate(params, vocabulary_from_checkpoint(ckpt), data.test, ks);
    const std::string label =
        o->method.empty() ? method_label(parse_train_mode(meta.at("mode").get<std::string>())) : o->method;
    emit(ctx, o->out_json, dump(retrieval_result_to_json(result)));
    if (!o->out_csv.empty()) emit(ctx, o->out_csv, retrieval_csv({{label, result}}));
  };
}

// --- compare ----------------------------------------------------------------

Runner setup_compare(CLI::App& app) {
  struct Options {
    TrainingOptions t;
    std::string seeds = "1,2,3,4,5", out_csv, out_json;
  };
  auto o = std::make_shared<Options>();
  o->t.add(app, false);
  app.add_option("--seeds", o->seeds, "Comma-separated training seeds")->capture_default_str();
  app.add_option("--out-csv", o->out_csv, "Comparison table CSV (stdout when omitted)");
  app.add_option("--out-json", o->out_json, "Summary JSON");
  return [o](CommandContext& ctx) {
    const auto seeds = parse_index_list(o->seeds, "seeds");
    if (!(o->t.beta > 0.0)) throw Error(ErrorCode::ConfigError, "compare needs beta > 0 for the selip arm", "beta");
    ctx.inputs.emplace_back(o->t.corpus);
    const auto data = prepare_data(o->t.corpus, o->t.train_fraction, o->t.split_seed);
    const std::size_t ks[] = {1, 2, 5, 10};
    std::string csv = "seed,mode,Top-1,Top-2,Top-5,Top-10,final_L_clip,final_L_se\n";
    double sum_top1[2] = {0.0, 0.0};
    Json runs = Json::array();
    for (std::size_t seed : seeds) {
      for (TrainMode mode : {TrainMode::ClipOnly, TrainMode::Selip}) {
        Trainer trainer(data.train, data.test, o->t.config(mode, seed, data.data_tag));
        trainer.run();
        const auto result = evaluate(trainer.params(), trainer.vocabulary(), data.test, ks);
        const LogRecord last = trainer.log().records.empty() ? LogRecord{} : trainer.log().records.back();
        char buf[256];
        std::snprintf(buf, sizeof buf, "%zu,%s,%.4f,%.4f,%.4f,%.4f,%.6f,%.6f\n", seed,
                      std::string(to_string(mode)).c_str(), result.top_k_accuracy.at(1), result.top_k_accuracy.at(2),
                      result.top_k_accuracy.at(5), result.top_k_accuracy.at(10), last.L_clip, last.L_se);
        csv += buf;
        sum_top1[mode == TrainMode::Selip ? 1 : 0] += result.top_k_accuracy.at(1);
        runs.push_back(Json{{"seed", seed},
                            {"mode", std::string(to_string(mode))},
                            {"top_k_accuracy", retrieval_result_to_json(result).at("top_k_accuracy")},
                            {"n_candidates", result.n_candidates},
                            {"final_L_clip", last.L_clip},
                            {"final_L_se", last.L_se}});
      }
    }
    emit(ctx, o->out_csv, csv);
    const double n = static_cast<double>(seeds.size());
    const Json summary{{"runs", runs},
                       {"mean_top1_clip", sum_top1[0] / n},
                       {"mean_top1_selip", sum_top1[1] / n},
                       {"selip_at_least_clip", sum_top1[1] >= sum_top1[0]}};
    if (!o->out_json.empty()) emit(ctx, o->out_json, dump(summary));
  };
}

const CommandSpec kCommands[] = {
    {"gen-data", "Generate a synthetic paired corpus", setup_gen_data},
    {"gen-reports", "Generate pseudo reports with gold findings", setup_gen_reports},
    {"parse-reports", "Extract findings from pseudo reports", setup_parse_reports},
    {"eval-extraction", "Score extracted findings against gold", setup_eval_extraction},
    {"sim-matrix", "Description similarity matrix of a batch", setup_sim_matrix},
    {"loss-eval", "Evaluate the contrastive and soft-target losses", setup_loss_eval},
    {"grad-check", "Finite-difference check of the loss gradient", setup_grad_check},
    {"train", "Train the toy encoders", setup_train},
    {"eval-retrieval", "Image-to-text Top-K retrieval on the held-out split", setup_eval_retrieval},
    {"compare", "Matched-seed CLIP vs SeLIP comparison", setup_compare},
};

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// key = value lines become --key value arguments placed before the command
// line ones, so explicit flags win under the take-last policy.
std::vector<std::string> expand_config(const std::vector<std::string>& args, CLI::App& app) {
  std::vector<std::string> from_file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      continue;
    }
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
      line = strip(line);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "config line without '=': " + line, line);
      std::string key = strip(line.substr(0, eq));
      std::replace(key.begin(), key.end(), '_', '-');
      if (key == "config" || key == "help" || app.get_option_no_throw("--" + key) == nullptr) {
        throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'", key);
      }
      from_file.push_back("--" + key);
      from_file.push_back(strip(line.substr(eq + 1)));
    }
  }
  from_file.insert(from_file.end(), args.begin(), args.end());
  return from_file;
}

std::string option_subject(const std::string& message) {
  static const std::regex flag("--([A-Za-z0-9-]+)");
  std::smatch m;
  return std::regex_search(message, m, flag) ? m[1].str() : std::string();
}

Json resolved_config(const CLI::App& app) {
  Json cfg = Json::object();
  for (const CLI::Option* opt : app.get_options()) {
    std::string name = opt->get_name();
    name.erase(0, name.find_first_not_of('-'));
    if (name == "help" || name == "config" || name == "manifest") continue;
    cfg[name] = opt->count() > 0 ? opt->results().back() : opt->get_default_str();
  }
  return cfg;
}

void write_manifest(CommandContext& ctx, const std::string& command, double seconds, std::ostream& err) {
  Json inputs = Json::object(), outputs = Json::object();
  for (const auto& p : ctx.inputs) inputs[p.string()] = file_hash(p);
  for (const auto& p : ctx.outputs) outputs[p.string()] = file_hash(p);
  Json manifest{{"command", command}, {"config", resolved_config(ctx.app)}};
  manifest["seed"] = ctx.seed ? Json(*ctx.seed) : Json(nullptr);
  manifest["artifacts"] = Json{{"inputs", inputs}, {"outputs", outputs}};
  manifest["duration_seconds"] = seconds;
  fs::path target;
  if (ctx.manifest_path) {
    target = *ctx.manifest_path;
  } else if (!ctx.outputs.empty()) {
    target = ctx.outputs.front().string() + ".manifest.json";
  }
  if (target.empty()) {
    err << manifest.dump() << '\n';
  } else {
    write_text_file(target, manifest.dump(2) + "\n");
  }
}

void write_error(std::ostream& err, std::string_view code, const std::string& message, const std::string& subject) {
  Json j{{"error", Json{{"code", code}, {"message", message}}}};
  if (!subject.empty()) j["error"]["subject"] = subject;
  err << j.dump() << '\n';
}

int run_command(const CommandSpec& spec, const std::vector<std::string>& rest, std::ostream& out,
                std::ostream& err) {
  CLI::App app{spec.help, spec.name};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path, manifest_path;
  app.add_option("--config", config_path, "Flat key=value file of flag values");
  app.add_option("--manifest", manifest_path, "Manifest path (default: <first output>.manifest.json)");
  Runner runner = spec.setup(app);

  auto args = expand_config(rest, app);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    throw Error(ErrorCode::ConfigError, e.what(), option_subject(e.what()));
  }

  CommandContext ctx{app, out, {}, {}, std::nullopt, std::nullopt};
  if (!manifest_path.empty()) ctx.manifest_path = manifest_path;
  const auto start = std::chrono::steady_clock::now();
  runner(ctx);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(ctx, spec.name, seconds, err);
  return 0;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& c : kCommands) out.emplace_back(c.name);
    return out;
  }();
  return names;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (!args.empty() && (args[0] == "-h" || args[0] == "--help")) {
    out << "usage: selip <command> [options]\n\ncommands:\n";
    for (const auto& c : kCommands) out << "  " << c.name << std::string(18 - std::string(c.name).size(), ' ') << c.help << '\n';
    return 0;
  }
  try {
    if (args.empty()) throw Error(ErrorCode::UnknownCommand, "no command given");
    const auto it = std::find_if(std::begin(kCommands), std::end(kCommands),
                                 [&](const CommandSpec& c) { return args[0] == c.name; });
    if (it == std::end(kCommands)) throw Error(ErrorCode::UnknownCommand, "unknown command '" + args[0] + "'", args[0]);
    return run_command(*it, std::vector<std::string>(args.begin() + 1, args.end()), out, err);
  } catch (const Error& e) {
    write_error(err, error_code_name(e.code()), e.what(), e.subject());
    return e.code() == ErrorCode::UnknownCommand || e.code() == ErrorCode::ConfigError ? 2 : 1;
  } catch (const nlohmann::json::exception& e) {
    write_error(err, "ParseFailure", e.what(), "");
    return 1;
  } catch (const std::exception& e) {
    write_error(err, "InternalError", e.what(), "");
    return 1;
  }
}

}  // namespace selip
