// One line per acceptance criterion; exit status is nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "selip/cli.hpp"
#include "selip/contrastive_loss.hpp"
#include "selip/optim.hpp"
#include "selip/retrieval_eval.hpp"
#include "selip/serialization.hpp"
#include "selip/similarity.hpp"

using namespace selip;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kSimSeconds = 10.0;
constexpr double kLnTolerance = 1e-9;
constexpr double kSeTolerance = 1e-9;
constexpr double kMinParseRate = 0.99;
constexpr double kMinItemAccuracy = 0.95;
constexpr double kPolyTolerance = 1e-12;
constexpr double kTrainSeconds = 600.0;
constexpr double kChanceMultiple = 10.0;
constexpr double kSigmaBound = 3.0;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// Runs a CLI command in-process; throws with its error output on failure.
std::string cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  if (dispatch(args, out, err) != 0) throw std::runtime_error(args.front() + " failed: " + err.str());
  return out.str();
}

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const auto d = fs::current_path() / "acceptance_work";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

const std::string& toy_config() {
  static const std::string p = (fs::path(SELIP_SOURCE_DIR) / "configs" / "toy.cfg").string();
  return p;
}

Outcome gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  const auto report = Json::parse(cli({"grad-check", "--seed", "1", "--configs", "20", "--fd-step", "1e-5"}));
  const double secs = seconds_since(start);
  const double err = report.at("max_rel_error").get<double>();
  const bool pass = report.at("configs").size() == 20 && err < kGradTolerance && secs < kGradSeconds;
  return {pass, fmt("20 configs, max rel err %.3g (limit %g), %.2f s (limit %g s)", err, kGradTolerance, secs,
                    kGradSeconds)};
}

Outcome similarity_oracle() {
  const auto vocab = default_vocabulary(12, 8);
  const auto sites = vocab.finding_sites();
  const auto apps = vocab.finding_appearances();
  const TokenizerConfig cfg;
  Rng rng(2);
  std::size_t mismatches = 0, entries = 0;
  const auto start = std::chrono::steady_clock::now();
  for (int b = 0; b < 100; ++b) {
    std::vector<Description> batch;
    for (int i = 0; i < 8; ++i) {
      std::vector<Finding> fs;
      const std::size_t n = rng.uniform_index(4);
      for (std::size_t k = 0; k < n; ++k) {
        fs.push_back({kAllModalities[rng.uniform_index(5)], kAllOrientations[rng.uniform_index(4)],
                      sites[rng.uniform_index(sites.size())], apps[rng.uniform_index(apps.size())]});
      }
      batch.push_back(render_description(fs));
    }
    const auto S = batch_similarity_matrix(batch, cfg);
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 8; ++j, ++entries) {
        if (S.values(i, j) != oracle::description_sim(batch[i], batch[j])) ++mismatches;
      }
    }
  }
  const double secs = seconds_since(start);
  return {mismatches == 0 && secs < kSimSeconds,
          fmt("100 batches of 8, %zu/%zu entries differ from the pairwise oracle, %.2f s (limit %g s)", mismatches,
              entries, secs, kSimSeconds)};
}

Outcome loss_identities() {
  const Matrix constant(64, 16, 0.25);
  const double clip = total_loss({constant, constant}, nullptr, LossConfig{0.07, 1.0, 0.0, 1e-6}).L_clip;
  const double err_a = std::abs(clip - std::log(64.0));

  Rng rng(3);
  double worst_se = 0.0;
  for (int k = 0; k < 20; ++k) {
    Matrix S(8, 8);
    for (std::size_t i = 0; i < 8; ++i) {
      S(i, i) = 1.0;
      for (std::size_t j = i + 1; j < 8; ++j) S(i, j) = S(j, i) = rng.uniform01();
    }
    const auto Q = soft_target(S, 1e-6);
    worst_se = std::max(worst_se, se_loss(Q, Q, S, 1e-6).se);
  }

  bool exact_c = true;
  for (int k = 0; k < 20; ++k) {
    const auto V = oracle::random_matrix(64, 8, rng);
    const auto T = oracle::random_matrix(64, 8, rng);
    const double alpha = rng.uniform(0.1, 3.0);
    const auto b = total_loss({V, T}, nullptr, LossConfig{0.07, alpha, 0.0, 1e-6});
    exact_c = exact_c && b.L_total == alpha * b.L_clip;
  }
  const bool pass = err_a < kLnTolerance && worst_se < kSeTolerance && exact_c;
  return {pass, fmt("(a) |L_clip - ln 64| = %.3g (limit %g); (b) max L_se = %.3g (limit %g); (c) beta=0 exact: %s",
                    err_a, kLnTolerance, worst_se, kSeTolerance, exact_c ? "yes" : "no")};
}

Outcome extraction_round_trip() {
  cli({"gen-reports", "--n", "1000", "--seed", "4", "--out", path("reports.jsonl")});
  cli({"parse-reports", "--in", path("reports.jsonl"), "--out", path("predictions.jsonl")});
  cli({"eval-extraction", "--pred", path("predictions.jsonl"), "--gold", path("reports.jsonl"), "--out",
       path("extraction.json")});
  const auto r = Json::parse(read_text_file(path("extraction.json")));
  const double rate = r.at("parse_success_rate").get<double>();
  const double acc = r.at("accuracy").get<double>();
  std::string detail = fmt("1000 reports, 12 styles: parse rate %.4f (min %g), item accuracy %.4f (min %g)", rate,
                           kMinParseRate, acc, kMinItemAccuracy);
  if (rate < 1.0 || acc < 1.0) {
    detail += fmt("; shortfall: %zu failed parses, FP %zu, FN %zu",
                  r.at("n_reports").get<std::size_t>() - r.at("n_parsed").get<std::size_t>(),
                  r.at("fp").get<std::size_t>(), r.at("fn").get<std::size_t>());
  }
  return {rate >= kMinParseRate && acc >= kMinItemAccuracy, detail};
}

Outcome schedules() {
  const ScheduleConfig cfg;  // lr 1e-4, warmup 5000, e_max 100
  const double w5000 = warmup_lr(5000, 1e-4, cfg);
  const double w2500 = warmup_lr(2500, 1e-4, cfg);
  const double p0 = poly_lr(0, 1e-4, cfg);
  const double p100 = poly_lr(100, 1e-4, cfg);
  const double p50 = poly_lr(50, 1e-4, cfg);
  const double p50_err = std::abs(p50 - 1e-4 * std::pow(0.5, 0.9));
  const bool pass = w5000 == 1e-4 && w2500 == 5e-5 && p0 == 1e-4 && p100 == 0.0 && p50_err <= kPolyTolerance;
  return {pass, fmt("warmup(5000)=%.17g warmup(2500)=%.17g poly(0)=%.17g poly(100)=%.17g poly(50)=%.6g (err %.2g)",
                    w5000, w2500, p0, p100, p50, p50_err)};
}

std::vector<std::string> toy_train_args(const std::string& tag) {
  return {"train", "--config", toy_config(), "--corpus", path("corpus.jsonl"), "--seed", "17", "--log-csv",
          path(tag + "_log.csv"), "--ckpt-dir", path(tag + "_ckpt"), "--ckpt-every", "1000"};
}

void ensure_corpus() {
  if (fs::exists(path("corpus.jsonl"))) return;
  cli({"gen-data", "--subjects", "2000", "--seed", "17", "--noise-sigma", "0.1", "--near-dup-rate", "0.3", "--out",
       path("corpus.jsonl")});
}

Outcome toy_training() {
  ensure_corpus();
  const auto start = std::chrono::steady_clock::now();
  const auto summary = Json::parse(cli(toy_train_args("run_a")));
  const double secs = seconds_since(start);
  cli({"eval-retrieval", "--corpus", path("corpus.jsonl"), "--ckpt", path("run_a_ckpt/final.ckpt"), "--ks",
       "1,2,5,10", "--out-json", path("toy_retrieval.json"), "--out-csv", path("toy_retrieval.csv")});
  const auto r = Json::parse(read_text_file(path("toy_retrieval.json")));
  const double top1 = r.at("top_k_accuracy").at("Top-1").get<double>();
  const auto n_cand = r.at("n_candidates").get<std::size_t>();
  const double bar = kChanceMultiple / static_cast<double>(n_cand);
  const double l_clip = summary.at("final_L_clip").get<double>();
  const bool pass = summary.at("iterations") == 2000 && top1 >= bar && secs < kTrainSeconds;
  return {pass, fmt("2000 iterations in %.1f s (limit %g s); Top-1 %.4f vs bar %.4f (10 x 1/%zu); final L_clip %.4f "
                    "(ln64/2 = %.4f)",
                    secs, kTrainSeconds, top1, bar, n_cand, l_clip, std::log(64.0) / 2)};
}

Outcome selip_vs_clip() {
  ensure_corpus();
  cli({"compare", "--config", toy_config(), "--corpus", path("corpus.jsonl"), "--seeds", "1,2,3,4,5", "--out-csv",
       path("compare.csv"), "--out-json", path("compare.json")});
  const auto s = Json::parse(read_text_file(path("compare.json")));
  std::cout << read_text_file(path("compare.csv"));
  const double clip = s.at("mean_top1_clip").get<double>();
  const double selip = s.at("mean_top1_selip").get<double>();
  return {selip >= clip, fmt("5 seeds: mean Top-1 SeLIP %.4f vs CLIP %.4f", selip, clip)};
}

Outcome retrieval_oracle() {
  Rng rng(8);
  std::size_t agree = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(64);
    const std::size_t c = 1 + rng.uniform_index(128);
    const std::size_t d = 1 + rng.uniform_index(16);
    const auto images = oracle::random_matrix(n, d, rng);
    auto cands = oracle::random_matrix(c, d, rng);
    for (std::size_t k = 0; k < d && c > 2; ++k) cands(c - 1, k) = cands(1, k);  // exact tie
    std::vector<std::size_t> gold(n);
    for (auto& g : gold) g = rng.uniform_index(c);
    std::vector<std::size_t> ks;
    for (std::size_t k = 1; k <= c; k *= 2) ks.push_back(k);
    const auto r = topk_accuracy(images, cands, gold, ks);
    const auto want = oracle::retrieval_ranks(images, cands, gold);
    bool same = r.ranks == want;
    for (std::size_t k : ks) {
      std::size_t hits = 0;
      for (auto rank : want) hits += rank < k;
      same = same && r.top_k_accuracy.at(k) == static_cast<double>(hits) / static_cast<double>(n);
    }
    agree += same;
  }

  const std::size_t n = 64, c = 32, d = 16;
  std::string chance;
  bool chance_ok = true;
  for (std::size_t k : {1u, 5u, 10u}) {
    double hits = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng r(1000 + seed);
      const auto images = oracle::random_matrix(n, d, r);
      const auto cands = oracle::random_matrix(c, d, r);
      std::vector<std::size_t> gold(n);
      for (auto& g : gold) g = r.uniform_index(c);
      const std::size_t ks[] = {k};
      hits += topk_accuracy(images, cands, gold, ks).top_k_accuracy.at(k) * static_cast<double>(n);
    }
    const double trials = 50.0 * static_cast<double>(n);
    const double p = static_cast<double>(k) / static_cast<double>(c);
    const double z = (hits - trials * p) / std::sqrt(trials * p * (1.0 - p));
    chance_ok = chance_ok && std::abs(z) <= kSigmaBound;
    chance += fmt(" Top-%zu %.4f (z %+.2f)", k, hits / trials, z);
  }
  return {agree == 50 && chance_ok, fmt("%zu/50 instances equal the exhaustive sort; chance over 50 seeds, C=%zu:%s",
                                        agree, c, chance.c_str())};
}

Outcome determinism() {
  ensure_corpus();
  if (!fs::exists(path("run_a_ckpt/final.ckpt"))) cli(toy_train_args("run_a"));
  cli(toy_train_args("run_b"));
  auto resume = toy_train_args("run_c");
  resume.push_back("--resume");
  resume.push_back(path("run_a_ckpt/ckpt_1000.bin"));
  cli(resume);
  const auto log_a = read_text_file(path("run_a_log.csv"));
  const bool logs = log_a == read_text_file(path("run_b_log.csv"));
  const auto ck_a = read_text_file(path("run_a_ckpt/final.ckpt"));
  const bool ckpts = ck_a == read_text_file(path("run_b_ckpt/final.ckpt")) &&
                     read_text_file(path("run_a_ckpt/ckpt_1000.bin")) == read_text_file(path("run_b_ckpt/ckpt_1000.bin"));
  const bool resumed = log_a == read_text_file(path("run_c_log.csv")) && ck_a == read_text_file(path("run_c_ckpt/final.ckpt"));
  return {logs && ckpts && resumed,
          fmt("repeat run: log %s, checkpoints %s; resume from iteration 1000: %s", logs ? "identical" : "DIFFERENT",
              ckpts ? "identical" : "DIFFERENT", resumed ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 gradient correctness", gradient_correctness},
      {"2 similarity oracle equivalence", similarity_oracle},
      {"3 loss identities", loss_identities},
      {"4 extraction round trip", extraction_round_trip},
      {"5 learning-rate schedules", schedules},
      {"6 end-to-end toy training", toy_training},
      {"7 SeLIP vs CLIP direction", selip_vs_clip},
      {"8 retrieval oracle", retrieval_oracle},
      {"9 determinism and resume", determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
