#include "selip/serialization.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "selip/error.hpp"

namespace selip {

namespace {

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw Error(ErrorCode::ParseFailure, std::string("missing field '") + key + "'", key);
  }
  return j.at(key);
}

std::string string_field(const Json& j, const char* key) {
  const Json& v = field(j, key);
  if (!v.is_string()) throw Error(ErrorCode::ParseFailure, std::string("field '") + key + "' must be a string", key);
  return v.get<std::string>();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Json finding_to_json(const Finding& f) {
  return Json{{"modality", std::string(to_string(f.modality))},
              {"orientation", std::string(to_string(f.orientation))},
              {"anatomic_site", f.anatomic_site},
              {"appearance", f.appearance}};
}

Finding finding_from_json(const Json& j, const Vocabulary* vocab) {
  RawFinding raw{string_field(j, "modality"), string_field(j, "orientation"), string_field(j, "anatomic_site"),
                 string_field(j, "appearance")};
  if (vocab != nullptr) return validate_finding(raw, *vocab);
  const auto modality = parse_modality(raw.modality);
  if (!modality) throw Error(ErrorCode::UnknownModality, "unknown modality '" + raw.modality + "'", "modality");
  const auto orientation = parse_orientation(raw.orientation);
  if (!orientation) {
    throw Error(ErrorCode::UnknownOrientation, "unknown orientation '" + raw.orientation + "'", "orientation");
  }
  return Finding{*modality, *orientation, raw.anatomic_site, raw.appearance};
}

Json findings_to_json(const std::vector<Finding>& findings) {
  Json out = Json::array();
  for (const auto& f : findings) out.push_back(finding_to_json(f));
  return out;
}

std::vector<Finding> findings_from_json(const Json& j, const Vocabulary* vocab) {
  if (!j.is_array()) throw Error(ErrorCode::ParseFailure, "findings must be a JSON array");
  std::vector<Finding> out;
  for (const auto& item : j) out.push_back(finding_from_json(item, vocab));
  return out;
}

Json vocabulary_to_json(const Vocabulary& vocab) {
  return Json{{"sites", vocab.finding_sites()}, {"appearances", vocab.finding_appearances()}};
}

Vocabulary vocabulary_from_json(const Json& j) {
  const Json& sites = field(j, "sites");
  const Json& appearances = field(j, "appearances");
  if (!sites.is_array() || !appearances.is_array()) {
    throw Error(ErrorCode::InvalidVocabulary, "sites and appearances must be arrays");
  }
  try {
    return Vocabulary(sites.get<std::vector<std::string>>(), appearances.get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidVocabulary, std::string("vocabulary tokens must be strings: ") + e.what());
  }
}

Json description_to_json(const Description& d) {
  return Json{{"text", d.text}, {"findings", findings_to_json(d.findings())}};
}

Description description_from_json(const Json& j, const Vocabulary* vocab) {
  auto d = render_description(findings_from_json(field(j, "findings"), vocab));
  if (j.contains("text") && string_field(j, "text") != d.text) {
    throw Error(ErrorCode::ParseFailure, "description text does not match its findings: '" +
                                             string_field(j, "text") + "'",
                "text");
  }
  return d;
}

Json subject_to_json(const SubjectRecord& record) {
  Json pairs = Json::array();
  for (const auto& p : record.pairs) {
    pairs.push_back(Json{{"modality", std::string(to_string(p.modality))},
                         {"image", p.image},
                         {"description", description_to_json(p.description)}});
  }
  return Json{{"subject_id", record.subject_id}, {"findings", findings_to_json(record.findings)}, {"pairs", pairs}};
}

SubjectRecord subject_from_json(const Json& j) {
  SubjectRecord record;
  record.subject_id = field(j, "subject_id").get<std::uint64_t>();
  record.findings = findings_from_json(field(j, "findings"));
  for (const auto& p : field(j, "pairs")) {
    ImageTextPair pair;
    const auto m = string_field(p, "modality");
    const auto modality = parse_modality(m);
    if (!modality) throw Error(ErrorCode::UnknownModality, "unknown modality '" + m + "'", "modality");
    pair.modality = *modality;
    pair.image = field(p, "image").get<std::vector<double>>();
    pair.description = description_from_json(field(p, "description"));
    record.pairs.push_back(std::move(pair));
  }
  return record;
}

Json matrix_to_json(const Matrix& m) {
  Json out = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) out.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return out;
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ParseFailure, "matrix must be an array of rows");
  std::vector<std::vector<double>> rows;
  for (const auto& row : j) rows.push_back(row.get<std::vector<double>>());
  for (const auto& row : rows) {
    if (row.size() != rows.front().size()) throw Error(ErrorCode::ShapeMismatch, "matrix rows differ in length");
  }
  return Matrix::from_rows(rows);
}

Json loss_breakdown_to_json(const LossBreakdown& b) {
  return Json{{"C", matrix_to_json(b.C)},
              {"P_v2t", matrix_to_json(b.P_v2t)},
              {"P_t2v", matrix_to_json(b.P_t2v)},
              {"L_v2t", b.L_v2t},
              {"L_t2v", b.L_t2v},
              {"L_clip", b.L_clip},
              {"L_se_v2t", b.L_se_v2t},
              {"L_se_t2v", b.L_se_t2v},
              {"L_se", b.L_se},
              {"L_total", b.L_total}};
}

Json extraction_report_to_json(const ExtractionReport& r) {
  return Json{{"parse_success_rate", r.parse_success_rate},
              {"accuracy", r.accuracy},
              {"tp", r.tp},
              {"fp", r.fp},
              {"fn", r.fn},
              {"n_reports", r.n_reports},
              {"n_parsed", r.n_parsed}};
}

Json retrieval_result_to_json(const RetrievalResult& r) {
  Json acc = Json::object();
  for (const auto& [k, v] : r.top_k_accuracy) acc["Top-" + std::to_string(k)] = v;
  return Json{{"top_k_accuracy", acc},
              {"n_images", r.n_images},
              {"n_candidates", r.n_candidates},
              {"ranks", r.ranks}};
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string(), path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing", path.string());
  out << contents;
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + path.string(), path.string());
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<Json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::ParseFailure, path.string() + ":" + std::to_string(line_no) + ": " + e.what(),
                  path.string());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& lines) {
  std::string text;
  for (const auto& j : lines) {
    text += j.dump();
    text += '\n';
  }
  write_text_file(path, text);
}

std::vector<SubjectRecord> read_corpus(const std::filesystem::path& path) {
  std::vector<SubjectRecord> out;
  for (const auto& j : read_jsonl(path)) {
    try {
      out.push_back(subject_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseFailure, path.string() + ": malformed subject record: " + e.what(), path.string());
    }
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<SubjectRecord>& records) {
  std::vector<Json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) lines.push_back(subject_to_json(r));
  write_jsonl(path, lines);
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch) {
  static_assert(std::endian::native == std::endian::little, "embedding files are little-endian");
  if (!batch.image_vectors.same_shape(batch.text_vectors)) {
    throw Error(ErrorCode::ShapeMismatch, "image and text batches differ in shape");
  }
  std::string bytes;
  auto put = [&bytes](const void* p, std::size_t n) { bytes.append(static_cast<const char*>(p), n); };
  const std::uint64_t n = batch.image_vectors.rows();
  const std::uint64_t d = batch.image_vectors.cols();
  put(&n, 8);
  put(&d, 8);
  put(batch.image_vectors.data().data(), n * d * 8);
  put(batch.text_vectors.data().data(), n * d * 8);
  write_text_file(path, bytes);
}

EmbeddingBatch read_embeddings(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  if (bytes.size() < 16) throw Error(ErrorCode::IoFailure, path.string() + " has no embedding header", path.string());
  std::uint64_t n = 0, d = 0;
  std::memcpy(&n, bytes.data(), 8);
  std::memcpy(&d, bytes.data() + 8, 8);
  if (d != 0 && n > (bytes.size() / 16) / d) {
    throw Error(ErrorCode::IoFailure, path.string() + " is shorter than its header says", path.string());
  }
  if (bytes.size() != 16 + 2 * n * d * 8) {
    throw Error(ErrorCode::IoFailure, path.string() + " size does not match N = " + std::to_string(n) +
                                          ", d = " + std::to_string(d),
                path.string());
  }
  EmbeddingBatch batch{Matrix(n, d), Matrix(n, d)};
  std::memcpy(batch.image_vectors.data().data(), bytes.data() + 16, n * d * 8);
  std::memcpy(batch.text_vectors.data().data(), bytes.data() + 16 + n * d * 8, n * d * 8);
  return batch;
}

std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c > 0) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

}  // namespace selip
