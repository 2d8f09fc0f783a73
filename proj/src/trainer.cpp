#include "selip/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "selip/error.hpp"
#include "selip/retrieval_eval.hpp"

namespace selip {

namespace {

constexpr std::uint64_t kInitSeedSalt = 0xD1B54A32D192ED03ULL;

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-bound, bound);
  return m;
}

NodeId mlp_head(Tape& tape, NodeId x, Parameter& w1, Parameter& b1, Parameter& w2, Parameter& b2,
                Parameter& proj) {
  const NodeId h1 = tape.tanh(tape.add_row(tape.matmul(x, tape.parameter(w1)), tape.parameter(b1)));
  const NodeId h2 = tape.tanh(tape.add_row(tape.matmul(h1, tape.parameter(w2)), tape.parameter(b2)));
  return tape.matmul(h2, tape.parameter(proj));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json config_json(const TrainConfig& cfg) {
  return {
      {"mode", std::string(to_string(cfg.mode))},
      {"seed", cfg.seed},
      {"batch_size", cfg.batch_size},
      {"iterations_per_epoch", cfg.iterations_per_epoch},
      {"epochs", cfg.epochs},
      {"lr_init_image", cfg.schedule.lr_init_image},
      {"lr_init_text", cfg.schedule.lr_init_text},
      {"t_max_warmup", cfg.schedule.t_max_warmup},
      {"e_max", cfg.schedule.e_max},
      {"poly_power", cfg.schedule.poly_power},
      {"tau", cfg.loss.tau},
      {"alpha", cfg.loss.alpha},
      {"beta", cfg.loss.beta},
      {"epsilon_smooth", cfg.loss.epsilon_smooth},
      {"d_emb", cfg.d_emb},
      {"hidden", cfg.hidden},
      {"d_proj", cfg.d_proj},
      {"token_mode", cfg.tokenizer.mode == TokenMode::Word ? "word" : "character"},
      {"lowercase", cfg.tokenizer.lowercase},
      {"strip_punctuation", cfg.tokenizer.strip_punctuation},
      {"validation_interval", cfg.validation_interval},
      {"validation_size", cfg.validation_size},
      {"similarity_check_interval", cfg.similarity_check_interval},
      {"data", cfg.data_tag},
  };
}

// Fields that may change between a checkpoint and its resumption.
nlohmann::json resumable_view(nlohmann::json j) {
  j.erase("epochs");
  return j;
}

}  // namespace

PairDataset flatten_pairs(const std::vector<SubjectRecord>& records) {
  std::vector<std::vector<double>> rows;
  PairDataset out;
  for (const auto& record : records) {
    for (const auto& pair : record.pairs) {
      rows.push_back(pair.image);
      out.descriptions.push_back(pair.description);
      out.texts.push_back(pair.description.text);
    }
  }
  out.images = Matrix::from_rows(rows);
  return out;
}

PairDataset head_pairs(const PairDataset& data, std::size_t n) {
  n = std::min(n, data.size());
  PairDataset out;
  out.images = Matrix(n, data.images.cols());
  std::copy_n(data.images.data().begin(), n * data.images.cols(), out.images.data().begin());
  out.descriptions.assign(data.descriptions.begin(), data.descriptions.begin() + static_cast<std::ptrdiff_t>(n));
  out.texts.assign(data.texts.begin(), data.texts.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

TextVocabulary::TextVocabulary(std::vector<std::string> tokens, TokenizerConfig cfg) : cfg_(cfg) {
  tokens_.push_back(kUnknown);
  index_.emplace(kUnknown, 0);
  for (auto& token : tokens) {
    if (!index_.emplace(token, tokens_.size()).second) {
      throw Error(ErrorCode::InvalidVocabulary, "duplicate text token '" + token + "'", token);
    }
    tokens_.push_back(std::move(token));
  }
}

TextVocabulary TextVocabulary::build(std::span<const std::string> texts, TokenizerConfig cfg) {
  std::vector<std::string> tokens;
  for (const auto& text : texts) {
    for (auto& token : tokenize(text, cfg)) tokens.push_back(std::move(token));
  }
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  std::erase(tokens, std::string(kUnknown));
  return TextVocabulary(std::move(tokens), cfg);
}

std::vector<std::size_t> TextVocabulary::ids(std::string_view text) const {
  const auto tokens = tokenize(text, cfg_);
  if (tokens.empty()) throw Error(ErrorCode::EmptyTokenization, "text '" + std::string(text) + "' has no tokens");
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& token : tokens) {
    const auto it = index_.find(token);
    out.push_back(it == index_.end() ? 0 : it->second);
  }
  return out;
}

Matrix bag_of_words(const TextVocabulary& vocab, std::span<const std::string> texts) {
  Matrix bow(texts.size(), vocab.size());
  for (std::size_t r = 0; r < texts.size(); ++r) {
    const auto ids = vocab.ids(texts[r]);
    std::map<std::size_t, std::size_t> counts;
    for (auto id : ids) ++counts[id];
    const double n = static_cast<double>(ids.size());
    for (const auto& [id, count] : counts) bow(r, id) = static_cast<double>(count) / n;
  }
  return bow;
}

std::vector<Parameter*> EncoderParams::image_params() { return {&img_w1, &img_b1, &img_w2, &img_b2, &img_proj}; }

std::vector<Parameter*> EncoderParams::text_params() {
  return {&txt_embed, &txt_w1, &txt_b1, &txt_w2, &txt_b2, &txt_proj};
}

std::vector<Parameter*> EncoderParams::all() {
  auto out = image_params();
  for (auto* p : text_params()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> EncoderParams::all() const {
  auto& self = const_cast<EncoderParams&>(*this);
  const auto mutable_list = self.all();
  return {mutable_list.begin(), mutable_list.end()};
}

EncoderDims EncoderParams::dims() const {
  return EncoderDims{img_w1.value.rows(), txt_embed.value.rows(), txt_embed.value.cols(), img_w1.value.cols(),
                     img_proj.value.cols()};
}

EncoderParams init_encoder_params(const EncoderDims& d, std::uint64_t seed) {
  if (d.feature_dim == 0 || d.vocab_size == 0 || d.d_emb == 0 || d.hidden == 0 || d.d_proj == 0) {
    throw Error(ErrorCode::InvalidConfig, "encoder dimensions must be positive");
  }
  Rng rng(seed ^ kInitSeedSalt);
  auto affine = [&rng](std::size_t fan_in, std::size_t fan_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w = uniform_matrix(fan_in, fan_out, bound, rng);
    Matrix b = uniform_matrix(1, fan_out, bound, rng);
    return std::pair{std::move(w), std::move(b)};
  };
  EncoderParams p;
  auto [iw1, ib1] = affine(d.feature_dim, d.hidden);
  auto [iw2, ib2] = affine(d.hidden, d.hidden);
  p.img_w1 = Parameter("image.w1", std::move(iw1));
  p.img_b1 = Parameter("image.b1", std::move(ib1));
  p.img_w2 = Parameter("image.w2", std::move(iw2));
  p.img_b2 = Parameter("image.b2", std::move(ib2));
  p.img_proj = Parameter("image.proj", uniform_matrix(d.hidden, d.d_proj, 1.0 / std::sqrt(double(d.hidden)), rng));

  Matrix embed(d.vocab_size, d.d_emb);
  for (double& v : embed.data()) v = rng.normal(0.0, 0.02);
  p.txt_embed = Parameter("text.embed", std::move(embed));
  auto [tw1, tb1] = affine(d.d_emb, d.hidden);
  auto [tw2, tb2] = affine(d.hidden, d.hidden);
  p.txt_w1 = Parameter("text.w1", std::move(tw1));
  p.txt_b1 = Parameter("text.b1", std::move(tb1));
  p.txt_w2 = Parameter("text.w2", std::move(tw2));
  p.txt_b2 = Parameter("text.b2", std::move(tb2));
  p.txt_proj = Parameter("text.proj", uniform_matrix(d.hidden, d.d_proj, 1.0 / std::sqrt(double(d.hidden)), rng));
  return p;
}

NodeId image_forward(Tape& tape, EncoderParams& p, const Matrix& features) {
  if (features.cols() != p.img_w1.value.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "image features have " + std::to_string(features.cols()) +
                                              " columns, encoder expects " + std::to_string(p.img_w1.value.rows()));
  }
  return mlp_head(tape, tape.constant(features), p.img_w1, p.img_b1, p.img_w2, p.img_b2, p.img_proj);
}

NodeId text_forward(Tape& tape, EncoderParams& p, const Matrix& bow) {
  if (bow.cols() != p.txt_embed.value.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "bag of words has " + std::to_string(bow.cols()) +
                                              " columns, vocabulary has " + std::to_string(p.txt_embed.value.rows()));
  }
  const NodeId pooled = tape.matmul(tape.constant(bow), tape.parameter(p.txt_embed));
  return mlp_head(tape, pooled, p.txt_w1, p.txt_b1, p.txt_w2, p.txt_b2, p.txt_proj);
}

Matrix encode_images(EncoderParams& params, const Matrix& features) {
  Tape tape;
  return tape.value(image_forward(tape, params, features));
}

Matrix encode_texts(EncoderParams& params, const TextVocabulary& vocab, std::span<const std::string> texts) {
  Tape tape;
  return tape.value(text_forward(tape, params, bag_of_words(vocab, texts)));
}

std::vector<double> encode_image(EncoderParams& params, std::span<const double> features) {
  Matrix row(1, features.size());
  std::copy(features.begin(), features.end(), row.data().begin());
  return encode_images(params, row).data();
}

std::vector<double> encode_text(EncoderParams& params, const TextVocabulary& vocab, std::string_view text) {
  const std::string texts[] = {std::string(text)};
  return encode_texts(params, vocab, texts).data();
}

UniqueTextSampler::UniqueTextSampler(std::span<const std::string> texts) {
  std::unordered_map<std::string_view, std::size_t> class_of;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto [it, inserted] = class_of.try_emplace(texts[i], classes_.size());
    if (inserted) classes_.emplace_back();
    classes_[it->second].push_back(i);
  }
}

std::vector<std::size_t> UniqueTextSampler::sample(std::size_t batch_size, Rng& rng) const {
  if (classes_.size() < batch_size) {
    throw Error(ErrorCode::InsufficientDistinctTexts, "batch of " + std::to_string(batch_size) + " needs " +
                                                          std::to_string(batch_size) + " distinct texts, have " +
                                                          std::to_string(classes_.size()));
  }
  std::vector<std::size_t> order(classes_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::size_t> batch(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::swap(order[i], order[i + rng.uniform_index(order.size() - i)]);
    const auto& members = classes_[order[i]];
    batch[i] = members[rng.uniform_index(members.size())];
  }
  return batch;
}

std::string_view to_string(TrainMode mode) { return mode == TrainMode::ClipOnly ? "clip" : "selip"; }

TrainMode parse_train_mode(std::string_view text) {
  if (text == "clip" || text == "clip_only") return TrainMode::ClipOnly;
  if (text == "selip") return TrainMode::Selip;
  throw Error(ErrorCode::InvalidConfig, "unknown training mode '" + std::string(text) + "'", "mode");
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.batch_size < 2) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 2", "batch_size");
  if (cfg.iterations_per_epoch < 1) {
    throw Error(ErrorCode::InvalidConfig, "iterations_per_epoch must be >= 1", "iterations_per_epoch");
  }
  if (cfg.d_emb < 1 || cfg.hidden < 1 || cfg.d_proj < 1) {
    throw Error(ErrorCode::InvalidConfig, "encoder dimensions must be >= 1", "d_proj");
  }
  validate_schedule(cfg.schedule);
  validate_loss_config(cfg.loss);
  if (cfg.mode == TrainMode::ClipOnly && cfg.loss.beta != 0.0) {
    throw Error(ErrorCode::InvalidConfig, "beta must be 0 in clip mode", "beta");
  }
  if (cfg.mode == TrainMode::Selip && !(cfg.loss.beta > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "selip mode needs beta > 0", "beta");
  }
}

void TrainLog::write_csv(std::ostream& out) const {
  out << "iteration,lr_image,lr_text,L_clip,L_se,L_total,val_top1,val_top5\n";
  for (const auto& r : records) {
    out << r.iteration << ',' << format_double(r.lr_image) << ',' << format_double(r.lr_text) << ','
        << format_double(r.L_clip) << ',' << format_double(r.L_se) << ',' << format_double(r.L_total) << ','
        << (r.val_top1 ? format_double(*r.val_top1) : "") << ',' << (r.val_top5 ? format_double(*r.val_top5) : "")
        << '\n';
  }
}

Trainer::Trainer(PairDataset train, PairDataset validation, TrainConfig cfg)
    : cfg_(std::move(cfg)),
      train_(std::move(train)),
      validation_(head_pairs(validation, cfg_.validation_size)),
      vocab_(TextVocabulary::build(train_.texts, cfg_.tokenizer)),
      sampler_(train_.texts),
      rng_(cfg_.seed) {
  validate_train_config(cfg_);
  if (sampler_.n_classes() < cfg_.batch_size) {
    throw Error(ErrorCode::InsufficientDistinctTexts, "training set has " + std::to_string(sampler_.n_classes()) +
                                                          " distinct texts, batch needs " +
                                                          std::to_string(cfg_.batch_size));
  }
  train_bow_ = bag_of_words(vocab_, train_.texts);
  TokenInterner interner;
  prepared_.reserve(train_.size());
  for (const auto& d : train_.descriptions) prepared_.push_back(prepare_description(d, cfg_.tokenizer, interner));
  params_ = init_encoder_params(
      EncoderDims{train_.images.cols(), vocab_.size(), cfg_.d_emb, cfg_.hidden, cfg_.d_proj}, cfg_.seed);
  adam_image_ = make_adam_state(params_.image_params());
  adam_text_ = make_adam_state(params_.text_params());
}

Trainer::Trainer(PairDataset train, PairDataset validation, TrainConfig cfg, const Checkpoint& ckpt)
    : Trainer(std::move(train), std::move(validation), std::move(cfg)) {
  const auto stored = nlohmann::json::parse(ckpt.metadata);
  if (resumable_view(stored) != resumable_view(nlohmann::json::parse(metadata()))) {
    throw Error(ErrorCode::InvalidConfig, "checkpoint was written with a different training configuration");
  }
  if (ckpt.text_tokens != std::vector<std::string>(vocab_.tokens().begin() + 1, vocab_.tokens().end())) {
    throw Error(ErrorCode::InvalidConfig, "checkpoint vocabulary differs from the training data");
  }
  params_ = params_from_checkpoint(ckpt);
  if (!(params_.dims().feature_dim == train_.images.cols())) {
    throw Error(ErrorCode::ShapeMismatch, "checkpoint feature dimension differs from the corpus");
  }
  adam_image_ = ckpt.adam_image;
  adam_text_ = ckpt.adam_text;
  rng_.deserialize(ckpt.rng_state);
  iteration_ = ckpt.iteration;
  log_.records = ckpt.log;
}

std::string Trainer::metadata() const {
  auto j = config_json(cfg_);
  j["feature_dim"] = train_.images.cols();
  j["n_train_pairs"] = train_.size();
  return j.dump();
}

Matrix Trainer::reference_similarity(std::span<const std::size_t> batch) const {
  Matrix s(batch.size(), batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = 0; j < batch.size(); ++j) {
      s(i, j) = description_similarity(train_.descriptions[batch[i]], train_.descriptions[batch[j]], cfg_.tokenizer);
    }
  }
  return s;
}

void Trainer::validate_step(LogRecord& record) {
  if (validation_.size() == 0) return;
  const auto candidates = dedupe_candidates(validation_.texts);
  const Matrix img = encode_images(params_, validation_.images);
  const Matrix txt = encode_texts(params_, vocab_, candidates.candidates);
  const std::size_t n = candidates.candidates.size();
  const std::size_t ks[] = {1, std::min<std::size_t>(5, n)};
  const auto result = topk_accuracy(img, txt, candidates.gold, ks);
  record.val_top1 = result.top_k_accuracy.at(ks[0]);
  record.val_top5 = result.top_k_accuracy.at(ks[1]);
}

void Trainer::step() {
  const std::size_t t = iteration_ + 1;
  const auto ipe = static_cast<std::int64_t>(cfg_.iterations_per_epoch);
  LogRecord record;
  record.iteration = t;
  record.lr_image = scheduled_lr(static_cast<std::int64_t>(t), cfg_.schedule.lr_init_image, cfg_.schedule, ipe);
  record.lr_text = scheduled_lr(static_cast<std::int64_t>(t), cfg_.schedule.lr_init_text, cfg_.schedule, ipe);

  const auto batch = sampler_.sample(cfg_.batch_size, rng_);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = i + 1; j < batch.size(); ++j) {
      if (train_.texts[batch[i]] == train_.texts[batch[j]]) {
        throw std::logic_error("batch at iteration " + std::to_string(t) + " repeats a description");
      }
    }
  }

  Matrix features(batch.size(), train_.images.cols());
  Matrix bow(batch.size(), train_bow_.cols());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::copy_n(train_.images.row(batch[i]).begin(), features.cols(), features.row(i).begin());
    std::copy_n(train_bow_.row(batch[i]).begin(), bow.cols(), bow.row(i).begin());
  }

  std::optional<Matrix> S;
  if (cfg_.mode == TrainMode::Selip) {
    std::vector<const PreparedDescription*> pointers;
    pointers.reserve(batch.size());
    for (auto idx : batch) pointers.push_back(&prepared_[idx]);
    S = batch_similarity_matrix(pointers).values;
    if (cfg_.similarity_check_interval > 0 && t % cfg_.similarity_check_interval == 0 &&
        !(*S == reference_similarity(batch))) {
      throw std::logic_error("similarity matrix diverged from the reference at iteration " + std::to_string(t));
    }
  }

  Tape tape;
  const NodeId img = image_forward(tape, params_, features);
  const NodeId txt = text_forward(tape, params_, bow);
  const auto nodes = build_total_loss(tape, img, txt, S ? &*S : nullptr, cfg_.loss);
  record.L_clip = tape.scalar_value(nodes.clip);
  record.L_se = nodes.has_se ? tape.scalar_value(nodes.se) : 0.0;
  record.L_total = tape.scalar_value(nodes.total);
  if (!std::isfinite(record.L_clip) || !std::isfinite(record.L_se) || !std::isfinite(record.L_total)) {
    throw Error(ErrorCode::NonFiniteLoss, "non-finite loss at iteration " + std::to_string(t), std::to_string(t));
  }
  tape.backward(nodes.total);
  adam_step(adam_image_, params_.image_params(), record.lr_image);
  adam_step(adam_text_, params_.text_params(), record.lr_text);
  iteration_ = t;

  if (cfg_.validation_interval > 0 && t % cfg_.validation_interval == 0) validate_step(record);
  log_.records.push_back(record);

  if (cfg_.checkpoint_interval > 0 && t % cfg_.checkpoint_interval == 0 && !cfg_.checkpoint_dir.empty()) {
    save_checkpoint(checkpoint(), cfg_.checkpoint_dir / ("ckpt_" + std::to_string(t) + ".bin"));
  }
}

void Trainer::run_until(std::size_t iteration) {
  iteration = std::min(iteration, total_iterations());
  while (iteration_ < iteration) step();
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.iteration = iteration_;
  ckpt.metadata = metadata();
  ckpt.text_tokens.assign(vocab_.tokens().begin() + 1, vocab_.tokens().end());
  ckpt.tokenizer = vocab_.tokenizer();
  for (const Parameter* p : params_.all()) ckpt.params.push_back(*p);
  ckpt.adam_image = adam_image_;
  ckpt.adam_text = adam_text_;
  ckpt.rng_state = rng_.serialize();
  ckpt.log = log_.records;
  return ckpt;
}

TrainResult train_run(const PairDataset& train, const PairDataset& validation, const TrainConfig& cfg) {
  Trainer trainer(train, validation, cfg);
  trainer.run();
  return TrainResult{trainer.params(), trainer.vocabulary(), trainer.log()};
}

}  // namespace selip
