#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "selip/autodiff.hpp"
#include "selip/contrastive_loss.hpp"
#include "selip/optim.hpp"
#include "selip/rng.hpp"
#include "selip/similarity.hpp"
#include "selip/synth_data.hpp"

namespace selip {

// Image-text pairs flattened out of subject records.
struct PairDataset {
  Matrix images;  // one feature vector per row
  std::vector<Description> descriptions;
  std::vector<std::string> texts;  // rendered description strings

  std::size_t size() const { return texts.size(); }
};

PairDataset flatten_pairs(const std::vector<SubjectRecord>& records);
// First `n` pairs (all of them if fewer).
PairDataset head_pairs(const PairDataset& data, std::size_t n);

// Word vocabulary of the text encoder. Index 0 is the reserved unknown token.
class TextVocabulary {
 public:
  static constexpr const char* kUnknown = "<unk>";

  TextVocabulary() : TextVocabulary(std::vector<std::string>{}) {}
  // `tokens` must not contain kUnknown; it is prepended.
  explicit TextVocabulary(std::vector<std::string> tokens, TokenizerConfig cfg = {});
  static TextVocabulary build(std::span<const std::string> texts, TokenizerConfig cfg = {});

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const TokenizerConfig& tokenizer() const { return cfg_; }
  // Throws EmptyTokenization when the text has no tokens at all.
  std::vector<std::size_t> ids(std::string_view text) const;

 private:
  TokenizerConfig cfg_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Row i holds token counts of texts[i] divided by its token count, so that
// bow * E is the mean of the token embeddings.
Matrix bag_of_words(const TextVocabulary& vocab, std::span<const std::string> texts);

struct EncoderDims {
  std::size_t feature_dim = 64;
  std::size_t vocab_size = 1;
  std::size_t d_emb = 32;
  std::size_t hidden = 64;
  std::size_t d_proj = 32;
};

struct EncoderParams {
  Parameter img_w1, img_b1, img_w2, img_b2, img_proj;
  Parameter txt_embed, txt_w1, txt_b1, txt_w2, txt_b2, txt_proj;

  std::vector<Parameter*> image_params();
  std::vector<Parameter*> text_params();
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  EncoderDims dims() const;
};

// Affine layers: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); embeddings: normal(0, 0.02).
EncoderParams init_encoder_params(const EncoderDims& dims, std::uint64_t seed);

NodeId image_forward(Tape& tape, EncoderParams& params, const Matrix& features);
NodeId text_forward(Tape& tape, EncoderParams& params, const Matrix& bow);

std::vector<double> encode_image(EncoderParams& params, std::span<const double> features);
std::vector<double> encode_text(EncoderParams& params, const TextVocabulary& vocab, std::string_view text);
Matrix encode_images(EncoderParams& params, const Matrix& features);
Matrix encode_texts(EncoderParams& params, const TextVocabulary& vocab, std::span<const std::string> texts);

// Draws batches with pairwise-distinct texts: classes without replacement,
// then a uniformly chosen pair inside each class.
class UniqueTextSampler {
 public:
  explicit UniqueTextSampler(std::span<const std::string> texts);

  std::size_t n_classes() const { return classes_.size(); }
  std::vector<std::size_t> sample(std::size_t batch_size, Rng& rng) const;

 private:
  std::vector<std::vector<std::size_t>> classes_;
};

enum class TrainMode { ClipOnly, Selip };
std::string_view to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view text);

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t iterations_per_epoch = 250;
  std::size_t epochs = 120;
  ScheduleConfig schedule;
  LossConfig loss;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Selip;
  std::size_t d_emb = 32;
  std::size_t hidden = 64;
  std::size_t d_proj = 32;
  TokenizerConfig tokenizer;
  std::size_t validation_interval = 100;
  std::size_t validation_size = 256;
  std::size_t similarity_check_interval = 50;
  std::size_t checkpoint_interval = 0;  // 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;
  std::string data_tag;  // opaque description of the training data, stored in checkpoints
};

void validate_train_config(const TrainConfig& cfg);

struct LogRecord {
  std::uint64_t iteration = 0;
  double lr_image = 0.0;
  double lr_text = 0.0;
  double L_clip = 0.0;
  double L_se = 0.0;
  double L_total = 0.0;
  std::optional<double> val_top1;
  std::optional<double> val_top5;

  bool operator==(const LogRecord&) const = default;
};

struct TrainLog {
  std::vector<LogRecord> records;

  void write_csv(std::ostream& out) const;
};

struct Checkpoint {
  std::uint64_t iteration = 0;
  std::string metadata;  // JSON text
  std::vector<std::string> text_tokens;
  TokenizerConfig tokenizer;
  std::vector<Parameter> params;
  AdamState adam_image;
  AdamState adam_text;
  std::string rng_state;
  std::vector<LogRecord> log;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
EncoderParams params_from_checkpoint(const Checkpoint& ckpt);
TextVocabulary vocabulary_from_checkpoint(const Checkpoint& ckpt);

class Trainer {
 public:
  Trainer(PairDataset train, PairDataset validation, TrainConfig cfg);
  // Continues from a checkpoint written by a trainer with the same config.
  Trainer(PairDataset train, PairDataset validation, TrainConfig cfg, const Checkpoint& resume_from);

  std::size_t iteration() const { return iteration_; }
  std::size_t total_iterations() const { return cfg_.epochs * cfg_.iterations_per_epoch; }

  void step();
  void run_until(std::size_t iteration);
  void run() { run_until(total_iterations()); }

  EncoderParams& params() { return params_; }
  const TextVocabulary& vocabulary() const { return vocab_; }
  const TrainLog& log() const { return log_; }
  const TrainConfig& config() const { return cfg_; }
  Checkpoint checkpoint() const;
  std::string metadata() const;

 private:
  void validate_step(LogRecord& record);
  Matrix reference_similarity(std::span<const std::size_t> batch) const;

  TrainConfig cfg_;
  PairDataset train_;
  PairDataset validation_;
  TextVocabulary vocab_;
  Matrix train_bow_;
  std::vector<PreparedDescription> prepared_;
  UniqueTextSampler sampler_;
  EncoderParams params_;
  AdamState adam_image_;
  AdamState adam_text_;
  Rng rng_;
  std::size_t iteration_ = 0;
  TrainLog log_;
};

struct TrainResult {
  EncoderParams params;
  TextVocabulary vocabulary;
  TrainLog log;
};

TrainResult train_run(const PairDataset& train, const PairDataset& validation, const TrainConfig& cfg);

}  // namespace selip
