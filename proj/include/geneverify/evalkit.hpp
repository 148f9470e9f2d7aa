#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "geneverify/core.hpp"
#include "geneverify/dbhub.hpp"
#include "geneverify/errors.hpp"
#include "geneverify/llm.hpp"

namespace geneverify {

// ---------------------------------------------------------------------------
// tokenization (shared by ROUGE and exact match)
// ---------------------------------------------------------------------------

struct TokenSequence {
  std::vector<std::string> tokens;

  bool operator==(const TokenSequence& o) const { return tokens == o.tokens; }
  size_t size() const { return tokens.size(); }
};

/// Lowercase, replace punctuation with spaces, split on whitespace.
/// No stemming. "g-protein (GPCR)" -> [g, protein, gpcr].
inline TokenSequence tokenize_term(std::string_view text) {
  TokenSequence seq;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      seq.tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) seq.tokens.push_back(std::move(cur));
  return seq;
}

// ---------------------------------------------------------------------------
// ROUGE
// ---------------------------------------------------------------------------

namespace detail {

inline std::map<std::string, int> ngram_counts(const TokenSequence& seq, int n) {
  std::map<std::string, int> counts;
  if (static_cast<int>(seq.size()) < n) return counts;
  for (size_t i = 0; i + n <= seq.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) {
      if (k) key.push_back('\x1f');
      key += seq.tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace detail

/// Recall-style n-gram overlap: clipped matches over reference n-gram count.
inline double rouge_n(const TokenSequence& ref, const TokenSequence& hyp, int n) {
  if (n < 1) fail(Errc::Precondition, "n must be >= 1");
  if (static_cast<int>(ref.size()) < n)
    fail(Errc::RefTooShort, "reference has fewer than " + std::to_string(n) + " tokens");
  auto ref_counts = detail::ngram_counts(ref, n);
  auto hyp_counts = detail::ngram_counts(hyp, n);
  long total = 0, matched = 0;
  for (const auto& [gram, count] : ref_counts) {
    total += count;
    auto it = hyp_counts.find(gram);
    if (it != hyp_counts.end()) matched += std::min(count, it->second);
  }
  return static_cast<double>(matched) / static_cast<double>(total);
}

inline size_t lcs_length(const TokenSequence& a, const TokenSequence& b) {
  const size_t m = a.size(), n = b.size();
  std::vector<size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j) {
      if (a.tokens[i - 1] == b.tokens[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

/// LCS-based F measure: R = LCS/m, P = LCS/n, F = (1+b^2)RP / (R + b^2 P).
inline double rouge_l(const TokenSequence& ref, const TokenSequence& hyp, double beta = 1.0) {
  if (ref.size() == 0 || hyp.size() == 0)
    fail(Errc::EmptyInput, "rouge_l requires non-empty sequences");
  size_t lcs = lcs_length(ref, hyp);
  if (lcs == 0) return 0.0;
  double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
  double p = static_cast<double>(lcs) / static_cast<double>(hyp.size());
  double b2 = beta * beta;
  return (1.0 + b2) * r * p / (r + b2 * p);
}

// ---------------------------------------------------------------------------
// embeddings and similarity
// ---------------------------------------------------------------------------

struct Embedding {
  std::vector<double> values;
  std::string backend_id;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Embedding embed(const std::string& text) = 0;
  virtual std::string id() const = 0;
};

/// Deterministic fallback encoder: feature-hashed character trigrams over the
/// normalized text, signed buckets, L2-normalized. Good enough for ranking
/// properties and replay tests; it is NOT a biomedical encoder and absolute
/// similarity values are not comparable to a real one.
class HashedEmbedder final : public Embedder {
 public:
  explicit HashedEmbedder(size_t dim = 256, uint64_t seed = 0x5eed5eedULL)
      : dim_(dim), seed_(seed) {}

  Embedding embed(const std::string& text) override {
    Embedding e;
    e.backend_id = id();
    e.values.assign(dim_, 0.0);

    TokenSequence toks = tokenize_term(text);
    std::string normalized;
    for (size_t i = 0; i < toks.tokens.size(); ++i) {
      if (i) normalized.push_back(' ');
      normalized += toks.tokens[i];
    }
    std::string padded = "^" + normalized + "$";
    if (padded.size() >= 3) {
      for (size_t i = 0; i + 3 <= padded.size(); ++i) {
        uint64_t h = fnv1a(padded.data() + i, 3);
        size_t bucket = static_cast<size_t>(h % dim_);
        double sign = (h >> 63) ? -1.0 : 1.0;
        e.values[bucket] += sign;
      }
    }
    double norm = 0.0;
    for (double v : e.values) norm += v * v;
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& v : e.values) v /= norm;
    }
    return e;
  }

  std::string id() const override {
    return "hashed-trigram-" + std::to_string(dim_) + "-" + std::to_string(seed_);
  }

 private:
  uint64_t fnv1a(const char* data, size_t len) const {
    uint64_t h = 14695981039346656037ULL ^ seed_;
    for (size_t i = 0; i < len; ++i) {
      h ^= static_cast<unsigned char>(data[i]);
      h *= 1099511628211ULL;
    }
    return h;
  }

  size_t dim_;
  uint64_t seed_;
};

/// Client for an embedding service speaking `POST {"texts": [...]}` ->
/// `{"dim": D, "vectors": [[...], ...]}`. This is how a real biomedical
/// encoder is plugged in.
class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(HttpTransport& transport, std::string url)
      : transport_(transport), url_(std::move(url)) {}

  Embedding embed(const std::string& text) override {
    ojson body{{"texts", ojson::array({text})}};
    HttpResponse res;
    try {
      res = transport_.post(url_, body.dump(), "application/json");
    } catch (const GvError&) {
      fail(Errc::BackendUnavailable, "embedding service unreachable: " + url_);
    }
    if (res.status != 200)
      fail(Errc::BackendUnavailable,
           "embedding service returned status " + std::to_string(res.status));
    try {
      ojson j = ojson::parse(res.body);
      Embedding e;
      e.backend_id = id();
      e.values = j.at("vectors").at(0).get<std::vector<double>>();
      size_t dim = j.at("dim").get<size_t>();
      if (e.values.size() != dim)
        fail(Errc::MalformedResponse, "embedding dimension mismatch");
      for (double v : e.values)
        if (!std::isfinite(v)) fail(Errc::MalformedResponse, "non-finite embedding entry");
      return e;
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::MalformedResponse, std::string("embedding response: ") + e.what());
    }
  }

  std::string id() const override { return "remote:" + url_; }

 private:
  HttpTransport& transport_;
  std::string url_;
};

inline double cosine_similarity(const Embedding& a, const Embedding& b) {
  if (a.backend_id != b.backend_id)
    fail(Errc::BackendMismatch, a.backend_id + " vs " + b.backend_id);
  if (a.values.size() != b.values.size())
    fail(Errc::BackendMismatch, "embedding length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) fail(Errc::ZeroVector, "cosine of zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// background percentile
// ---------------------------------------------------------------------------

struct BackgroundSet {
  std::vector<std::string> terms;
  std::vector<Embedding> embeddings;
  std::string backend_id;

  /// Newline-delimited term file; embeddings computed once up front.
  static BackgroundSet load(const std::filesystem::path& file, Embedder& embedder) {
    std::ifstream in(file);
    if (!in) fail(Errc::IoFailure, "cannot open background file " + file.string());
    BackgroundSet bg;
    bg.backend_id = embedder.id();
    std::string line;
    while (std::getline(in, line)) {
      std::string term = trim(line);
      if (term.empty()) continue;
      bg.terms.push_back(term);
      bg.embeddings.push_back(embedder.embed(term));
    }
    return bg;
  }
};

/// Percentage of background scores strictly below the reference score.
/// Ties do not count as lower.
inline double percentile_from_scores(double ref_score, std::span<const double> background) {
  if (background.empty()) fail(Errc::EmptyBackground, "background set is empty");
  size_t lower = 0;
  for (double s : background)
    if (s < ref_score) ++lower;
  return 100.0 * static_cast<double>(lower) / static_cast<double>(background.size());
}

inline double background_percentile(const std::string& generated_name,
                                    const std::string& reference_term,
                                    const BackgroundSet& background, Embedder& embedder) {
  if (background.terms.empty()) fail(Errc::EmptyBackground, "background set is empty");
  Embedding p = embedder.embed(generated_name);
  Embedding g = embedder.embed(reference_term);
  double ref_score = cosine_similarity(p, g);
  std::vector<double> scores;
  scores.reserve(background.embeddings.size());
  for (const auto& bg : background.embeddings)
    scores.push_back(cosine_similarity(p, bg));
  return percentile_from_scores(ref_score, scores);
}

// ---------------------------------------------------------------------------
// enrichment term test
// ---------------------------------------------------------------------------

/// True iff the tested term tokenizes to exactly the same sequence as some
/// ground-truth term. Case and punctuation are normalized away; extra or
/// missing words are a mismatch.
inline bool exact_match(const std::string& tested, const std::vector<std::string>& truth_terms) {
  TokenSequence t = tokenize_term(tested);
  for (const auto& truth : truth_terms)
    if (t == tokenize_term(truth)) return true;
  return false;
}

struct MatchReport {
  std::vector<std::string> tested_terms;
  std::vector<std::string> matched;
  std::vector<std::string> unmatched;
  double proportion = 0.0;  // matched / tested
};

inline MatchReport match_terms(const std::vector<std::string>& tested,
                               const std::vector<std::string>& truth) {
  MatchReport report;
  report.tested_terms = tested;
  for (const auto& term : tested) {
    if (exact_match(term, truth))
      report.matched.push_back(term);
    else
      report.unmatched.push_back(term);
  }
  report.proportion = tested.empty()
                          ? 0.0
                          : static_cast<double>(report.matched.size()) / tested.size();
  return report;
}

/// Renders a short synopsis of a verification report for the summarization
/// prompt of the enrichment term test.
inline std::string report_synopsis(const VerificationReport& report) {
  std::string out;
  for (const auto& vc : report.verified_claims) {
    out += "[" + std::string(decision_name(vc.decision)) + "] " + vc.claim.raw_text;
    if (!vc.rationale.empty()) out += " (" + vc.rationale + ")";
    out += "\n";
  }
  return out;
}

/// Asks the LLM to list enrichment terms for the gene set (optionally with a
/// verification-report synopsis) and scores them against the significant
/// g:Profiler terms at the given threshold.
inline MatchReport enrichment_term_test(const GeneSet& gene_set,
                                        const VerificationReport* report, DbHub& hub,
                                        CompletionBackend& backend,
                                        const TemplateSet& templates,
                                        double p_threshold = 0.05,
                                        Transcript* log = nullptr) {
  std::vector<EnrichmentTerm> significant =
      hub.gprofiler_significant_terms(gene_set.genes, gene_set.organism, p_threshold, log);
  if (significant.empty())
    fail(Errc::NoSignificantTerms,
         "no significant enrichment terms for set " + gene_set.id);
  std::vector<std::string> truth;
  truth.reserve(significant.size());
  for (const auto& t : significant) truth.push_back(t.name);

  std::string genes_joined;
  for (size_t i = 0; i < gene_set.genes.size(); ++i)
    genes_joined += (i ? ", " : "") + gene_set.genes[i];

  std::map<std::string, std::string> bindings{
      {"genes", genes_joined},
      {"report", report ? report_synopsis(*report) : std::string("(none)")}};
  CompletionRequest req;
  req.stage = Stage::EnrichmentSummarize;
  req.prompt = templates.render(Stage::EnrichmentSummarize, bindings);
  std::string text = backend.complete(req);
  if (log)
    log->add(TranscriptEntry{"llm", backend.id(), stage_name(req.stage), req.prompt, text,
                             false});
  return match_terms(parse_term_lines(text), truth);
}

}  // namespace geneverify
