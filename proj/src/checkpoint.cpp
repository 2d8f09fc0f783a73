#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "selip/error.hpp"
#include "selip/hashing.hpp"
#include "selip/trainer.hpp"

namespace selip {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'S', 'E', 'L', 'I', 'P', 'C', 'K', 'P'};
constexpr std::size_t kHeaderSize = sizeof kMagic + 4 + 8 + 8;

class ByteWriter {
 public:
  template <typename T>
  void pod(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void u64(std::uint64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void matrix(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    for (double v : m.data()) f64(v);
  }
  void adam(const AdamState& s) {
    u64(s.step_count);
    f64(s.beta1);
    f64(s.beta2);
    f64(s.eps);
    u64(s.m.size());
    for (std::size_t i = 0; i < s.m.size(); ++i) {
      matrix(s.m[i]);
      matrix(s.v[i]);
    }
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const auto n = u64();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const auto rows = u64();
    const auto cols = u64();
    need(rows * cols * sizeof(double));
    Matrix m(rows, cols);
    for (double& v : m.data()) v = f64();
    return m;
  }
  AdamState adam() {
    AdamState s;
    s.step_count = u64();
    s.beta1 = f64();
    s.beta2 = f64();
    s.eps = f64();
    const auto n = u64();
    for (std::uint64_t i = 0; i < n; ++i) {
      s.m.push_back(matrix());
      s.v.push_back(matrix());
    }
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw Error(ErrorCode::ChecksumMismatch, "checkpoint payload ends early");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void write_optional(ByteWriter& w, const std::optional<double>& v) {
  w.pod<std::uint8_t>(v ? 1 : 0);
  w.f64(v.value_or(0.0));
}

std::optional<double> read_optional(ByteReader& r) {
  const bool present = r.pod<std::uint8_t>() != 0;
  const double v = r.f64();
  return present ? std::optional<double>(v) : std::nullopt;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ByteWriter w;
  w.u64(ckpt.iteration);
  w.str(ckpt.metadata);
  w.pod<std::uint8_t>(ckpt.tokenizer.mode == TokenMode::Word ? 0 : 1);
  w.pod<std::uint8_t>(ckpt.tokenizer.lowercase ? 1 : 0);
  w.pod<std::uint8_t>(ckpt.tokenizer.strip_punctuation ? 1 : 0);
  w.u64(ckpt.text_tokens.size());
  for (const auto& t : ckpt.text_tokens) w.str(t);
  w.u64(ckpt.params.size());
  for (const auto& p : ckpt.params) {
    w.str(p.name);
    w.matrix(p.value);
  }
  w.adam(ckpt.adam_image);
  w.adam(ckpt.adam_text);
  w.str(ckpt.rng_state);
  w.u64(ckpt.log.size());
  for (const auto& r : ckpt.log) {
    w.u64(r.iteration);
    w.f64(r.lr_image);
    w.f64(r.lr_text);
    w.f64(r.L_clip);
    w.f64(r.L_se);
    w.f64(r.L_total);
    write_optional(w, r.val_top1);
    write_optional(w, r.val_top5);
  }

  const std::string& payload = w.bytes();
  ByteWriter header;
  for (char c : kMagic) header.pod(c);
  header.pod<std::uint32_t>(kCheckpointVersion);
  header.u64(payload.size());
  header.u64(fnv1a64(payload));

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing", path.string());
  out.write(header.bytes().data(), static_cast<std::streamsize>(header.bytes().size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + path.string(), path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string(), path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    if (bytes.size() < sizeof kMagic && std::memcmp(bytes.data(), kMagic, bytes.size()) == 0) {
      throw Error(ErrorCode::ChecksumMismatch, path.string() + " is truncated", path.string());
    }
    throw Error(ErrorCode::IoFailure, path.string() + " is not a checkpoint", path.string());
  }
  if (bytes.size() < kHeaderSize) {
    throw Error(ErrorCode::ChecksumMismatch, path.string() + " is truncated", path.string());
  }
  ByteReader header(std::string_view(bytes).substr(sizeof kMagic, kHeaderSize - sizeof kMagic));
  const auto version = header.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                std::to_string(kCheckpointVersion),
                path.string());
  }
  const auto size = header.u64();
  const auto checksum = header.u64();
  const std::string_view payload = std::string_view(bytes).substr(kHeaderSize);
  if (payload.size() != size || fnv1a64(payload) != checksum) {
    throw Error(ErrorCode::ChecksumMismatch, path.string() + " failed its integrity check", path.string());
  }

  ByteReader r(payload);
  Checkpoint ckpt;
  ckpt.iteration = r.u64();
  ckpt.metadata = r.str();
  ckpt.tokenizer.mode = r.pod<std::uint8_t>() == 0 ? TokenMode::Word : TokenMode::Character;
  ckpt.tokenizer.lowercase = r.pod<std::uint8_t>() != 0;
  ckpt.tokenizer.strip_punctuation = r.pod<std::uint8_t>() != 0;
  const auto n_tokens = r.u64();
  for (std::uint64_t i = 0; i < n_tokens; ++i) ckpt.text_tokens.push_back(r.str());
  const auto n_params = r.u64();
  for (std::uint64_t i = 0; i < n_params; ++i) {
    auto name = r.str();
    ckpt.params.emplace_back(std::move(name), r.matrix());
  }
  ckpt.adam_image = r.adam();
  ckpt.adam_text = r.adam();
  ckpt.rng_state = r.str();
  const auto n_log = r.u64();
  for (std::uint64_t i = 0; i < n_log; ++i) {
    LogRecord rec;
    rec.iteration = r.u64();
    rec.lr_image = r.f64();
    rec.lr_text = r.f64();
    rec.L_clip = r.f64();
    rec.L_se = r.f64();
    rec.L_total = r.f64();
    rec.val_top1 = read_optional(r);
    rec.val_top5 = read_optional(r);
    ckpt.log.push_back(rec);
  }
  if (!r.done()) throw Error(ErrorCode::ChecksumMismatch, path.string() + " has trailing bytes", path.string());
  return ckpt;
}

EncoderParams params_from_checkpoint(const Checkpoint& ckpt) {
  static constexpr const char* kNames[] = {"image.w1", "image.b1",  "image.w2", "image.b2", "image.proj", "text.embed",
                                           "text.w1",  "text.b1",   "text.w2",  "text.b2",  "text.proj"};
  EncoderParams params;
  const auto slots = params.all();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto it = std::find_if(ckpt.params.begin(), ckpt.params.end(),
                                 [&](const Parameter& p) { return p.name == kNames[i]; });
    if (it == ckpt.params.end()) {
      throw Error(ErrorCode::ShapeMismatch, std::string("checkpoint lacks parameter ") + kNames[i], kNames[i]);
    }
    *slots[i] = Parameter(it->name, it->value);
  }
  return params;
}

TextVocabulary vocabulary_from_checkpoint(const Checkpoint& ckpt) {
  return TextVocabulary(ckpt.text_tokens, ckpt.tokenizer);
}

}  // namespace selip
