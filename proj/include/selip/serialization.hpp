#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "selip/contrastive_loss.hpp"
#include "selip/report_codec.hpp"
#include "selip/report_model.hpp"
#include "selip/retrieval_eval.hpp"
#include "selip/synth_data.hpp"

namespace selip {

using Json = nlohmann::ordered_json;

Json finding_to_json(const Finding& f);
// Parses modality and orientation; site and appearance are checked against
// `vocab` when one is given.
Finding finding_from_json(const Json& j, const Vocabulary* vocab = nullptr);
Json findings_to_json(const std::vector<Finding>& findings);
std::vector<Finding> findings_from_json(const Json& j, const Vocabulary* vocab = nullptr);

Json vocabulary_to_json(const Vocabulary& vocab);
Vocabulary vocabulary_from_json(const Json& j);

Json description_to_json(const Description& d);
// Rebuilds the description from its findings; a "text" field, if present,
// must match the rendering.
Description description_from_json(const Json& j, const Vocabulary* vocab = nullptr);

Json subject_to_json(const SubjectRecord& record);
SubjectRecord subject_from_json(const Json& j);

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

Json loss_breakdown_to_json(const LossBreakdown& b);
Json extraction_report_to_json(const ExtractionReport& r);
Json retrieval_result_to_json(const RetrievalResult& r);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& lines);

std::vector<SubjectRecord> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<SubjectRecord>& records);

// Row-major doubles; images then texts, each N x d.
void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch);
EmbeddingBatch read_embeddings(const std::filesystem::path& path);

std::string matrix_to_csv(const Matrix& m);

}  // namespace selip
