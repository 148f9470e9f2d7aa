#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "geneverify/errors.hpp"

namespace geneverify {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// small string helpers shared across modules
// ---------------------------------------------------------------------------

inline std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

/// UTC wall-clock in ISO-8601, second resolution.
inline std::string now_iso8601() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// gene sets
// ---------------------------------------------------------------------------

enum class Source { GO, NeST, MsigDB, Custom };

inline const char* source_name(Source s) {
  switch (s) {
    case Source::GO: return "GO";
    case Source::NeST: return "NeST";
    case Source::MsigDB: return "MsigDB";
    case Source::Custom: return "Custom";
  }
  return "Custom";
}

inline Source source_from_string(std::string_view s) {
  std::string l = to_lower(s);
  if (l == "go") return Source::GO;
  if (l == "nest") return Source::NeST;
  if (l == "msigdb") return Source::MsigDB;
  if (l == "custom") return Source::Custom;
  fail(Errc::MalformedLine, "unknown gene-set source '" + std::string(s) + "'");
}

struct Organism {
  enum class Kind { Human, Mouse, Other };
  Kind kind = Kind::Human;
  std::string label;  // only meaningful for Other

  static Organism human() { return {Kind::Human, {}}; }
  static Organism mouse() { return {Kind::Mouse, {}}; }
  static Organism other(std::string l) { return {Kind::Other, std::move(l)}; }

  std::string str() const {
    switch (kind) {
      case Kind::Human: return "human";
      case Kind::Mouse: return "mouse";
      case Kind::Other: return label;
    }
    return "human";
  }

  static Organism from_string(std::string_view s) {
    std::string l = to_lower(s);
    if (l == "human" || l == "hsapiens") return human();
    if (l == "mouse" || l == "mmusculus") return mouse();
    return other(std::string(s));
  }

  bool operator==(const Organism& o) const { return kind == o.kind && label == o.label; }
};

struct GeneSet {
  std::string id;
  std::vector<std::string> genes;  // input order preserved, never sorted
  Source source = Source::Custom;
  Organism organism = Organism::human();
  std::string reference_term;  // ground-truth name; may be empty

  bool contains_symbol(std::string_view sym) const {
    std::string l = to_lower(sym);
    for (const auto& g : genes)
      if (to_lower(g) == l) return true;
    return false;
  }
};

/// Parses one dataset line `<id>\t<reference_term>\t<gene1,gene2,...>`.
/// Symbols are trimmed and case-preserved; duplicates (case-insensitive)
/// are an error rather than silently dropped.
inline GeneSet parse_gene_set_line(std::string_view line, Source source, Organism organism) {
  std::vector<std::string> fields = split(line, '\t');
  if (fields.size() != 3) {
    fail(Errc::MalformedLine,
         "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
  }
  GeneSet gs;
  gs.id = trim(fields[0]);
  gs.reference_term = trim(fields[1]);
  gs.source = source;
  gs.organism = organism;
  if (gs.id.empty()) fail(Errc::MalformedLine, "empty gene-set id");

  std::vector<std::string> parts = split(fields[2], ',');
  bool wholly_empty = parts.size() == 1 && trim(parts[0]).empty();
  if (!wholly_empty) {
    std::unordered_set<std::string> seen;
    for (const auto& raw : parts) {
      std::string sym = trim(raw);
      if (sym.empty())
        fail(Errc::MalformedLine, "empty gene symbol in set '" + gs.id + "'");
      if (!seen.insert(to_lower(sym)).second) fail(Errc::DuplicateSymbol, sym);
      gs.genes.push_back(std::move(sym));
    }
  }
  if (gs.genes.empty()) fail(Errc::EmptyGeneList, "set '" + gs.id + "' has no genes");
  return gs;
}

// ---------------------------------------------------------------------------
// cascade artifacts
// ---------------------------------------------------------------------------

enum class TextStage { Initial, Modified, Final };

inline const char* text_stage_name(TextStage s) {
  switch (s) {
    case TextStage::Initial: return "initial";
    case TextStage::Modified: return "modified";
    case TextStage::Final: return "final";
  }
  return "initial";
}

inline TextStage text_stage_from_string(std::string_view s) {
  if (s == "initial") return TextStage::Initial;
  if (s == "modified") return TextStage::Modified;
  if (s == "final") return TextStage::Final;
  fail(Errc::MalformedLine, "unknown text stage '" + std::string(s) + "'");
}

struct ProcessName {
  std::string text;
  TextStage stage = TextStage::Initial;

  ProcessName() = default;
  ProcessName(std::string t, TextStage s) : text(trim(t)), stage(s) {
    if (text.empty()) fail(Errc::EmptyInput, "process name must be non-empty");
  }
};

struct AnalyticalNarrative {
  std::string text;
  TextStage stage = TextStage::Initial;

  AnalyticalNarrative() = default;
  AnalyticalNarrative(std::string t, TextStage s) : text(trim(t)), stage(s) {
    if (text.empty()) fail(Errc::EmptyInput, "narrative must be non-empty");
  }
};

// ---------------------------------------------------------------------------
// claims and decisions
// ---------------------------------------------------------------------------

enum class ClaimScope { ProcessName, Narrative };

inline const char* claim_scope_name(ClaimScope s) {
  return s == ClaimScope::ProcessName ? "process_name" : "narrative";
}

inline ClaimScope claim_scope_from_string(std::string_view s) {
  if (s == "process_name") return ClaimScope::ProcessName;
  if (s == "narrative") return ClaimScope::Narrative;
  fail(Errc::MalformedLine, "unknown claim scope '" + std::string(s) + "'");
}

struct Claim {
  std::vector<std::string> subject_genes;  // may be empty -> NotVerified downstream
  std::string predicate;                   // e.g. "is involved in"
  std::string object_term;
  std::string raw_text;
  ClaimScope scope = ClaimScope::ProcessName;
  std::string note;  // e.g. symbols dropped because they are not in the gene set
};

enum class DecisionKind { Supported, PartiallySupported, Refuted, Unknown, NotVerified };

inline const char* decision_name(DecisionKind d) {
  switch (d) {
    case DecisionKind::Supported: return "Supported";
    case DecisionKind::PartiallySupported: return "PartiallySupported";
    case DecisionKind::Refuted: return "Refuted";
    case DecisionKind::Unknown: return "Unknown";
    case DecisionKind::NotVerified: return "NotVerified";
  }
  return "Unknown";
}

inline DecisionKind decision_from_string(std::string_view s) {
  if (s == "Supported") return DecisionKind::Supported;
  if (s == "PartiallySupported") return DecisionKind::PartiallySupported;
  if (s == "Refuted") return DecisionKind::Refuted;
  if (s == "Unknown") return DecisionKind::Unknown;
  if (s == "NotVerified") return DecisionKind::NotVerified;
  fail(Errc::MalformedLine, "unknown decision '" + std::string(s) + "'");
}

struct EvidenceRef {
  std::string database;
  std::string query;
  std::string excerpt;
};

struct VerifiedClaim {
  Claim claim;
  DecisionKind decision = DecisionKind::Unknown;
  std::vector<EvidenceRef> evidence;
  std::string rationale;
  std::map<std::string, int> api_calls;  // per-API count for this claim

  /// Enforces the structural rules: NotVerified only with empty subject
  /// genes, and any evidence-backed decision must actually carry evidence.
  void validate() const {
    if (decision == DecisionKind::NotVerified && !claim.subject_genes.empty())
      fail(Errc::Precondition, "NotVerified requires empty subject genes");
    bool needs_evidence = decision == DecisionKind::Supported ||
                          decision == DecisionKind::PartiallySupported ||
                          decision == DecisionKind::Refuted;
    if (needs_evidence && evidence.empty())
      fail(Errc::Precondition,
           std::string(decision_name(decision)) + " decision requires evidence");
  }
};

enum class PassKind { ProcessNamePass, NarrativePass };

inline const char* pass_kind_name(PassKind p) {
  return p == PassKind::ProcessNamePass ? "process_name_pass" : "narrative_pass";
}

inline PassKind pass_kind_from_string(std::string_view s) {
  if (s == "process_name_pass") return PassKind::ProcessNamePass;
  if (s == "narrative_pass") return PassKind::NarrativePass;
  fail(Errc::MalformedLine, "unknown pass kind '" + std::string(s) + "'");
}

struct VerificationReport {
  PassKind pass_kind = PassKind::ProcessNamePass;
  std::vector<VerifiedClaim> verified_claims;
  std::map<std::string, int> api_calls;  // summed over claims
};

// ---------------------------------------------------------------------------
// transcripts and pipeline records
// ---------------------------------------------------------------------------

struct TranscriptEntry {
  std::string kind;      // "llm" or "api"
  std::string api;       // backend id or API name (gprofiler, enrichr, eutils, custom)
  std::string endpoint;  // stage name for llm entries, endpoint path for api entries
  std::string query;     // rendered prompt or normalized request
  std::string response;  // completion text or raw response body
  bool cache_hit = false;
};

struct Transcript {
  std::vector<TranscriptEntry> entries;

  void add(TranscriptEntry e) { entries.push_back(std::move(e)); }

  std::map<std::string, int> api_counts(size_t from = 0) const {
    std::map<std::string, int> out;
    for (size_t i = from; i < entries.size(); ++i)
      if (entries[i].kind == "api") ++out[entries[i].api];
    return out;
  }
};

/// Cascade progression; transitions happen only in this order and Failed is
/// terminal (it keeps the failing stage and cause alongside).
enum class StageState {
  Pending,
  Generated,
  ProcessVerified,
  Modified,
  NarrativeVerified,
  Summarized,
  Failed,
};

inline const char* stage_state_name(StageState s) {
  switch (s) {
    case StageState::Pending: return "Pending";
    case StageState::Generated: return "Generated";
    case StageState::ProcessVerified: return "ProcessVerified";
    case StageState::Modified: return "Modified";
    case StageState::NarrativeVerified: return "NarrativeVerified";
    case StageState::Summarized: return "Summarized";
    case StageState::Failed: return "Failed";
  }
  return "Pending";
}

inline StageState stage_state_from_string(std::string_view s) {
  for (StageState st : {StageState::Pending, StageState::Generated,
                        StageState::ProcessVerified, StageState::Modified,
                        StageState::NarrativeVerified, StageState::Summarized,
                        StageState::Failed})
    if (s == stage_state_name(st)) return st;
  fail(Errc::MalformedLine, "unknown stage state '" + std::string(s) + "'");
}

struct StageFailure {
  std::string stage;
  std::string cause;
};

/// Full trace of one cascade run. All artifacts the run completed are
/// present; a failed run keeps everything produced before the failure.
struct PipelineRecord {
  GeneSet gene_set;
  StageState state = StageState::Pending;
  std::optional<StageFailure> failure;
  std::optional<ProcessName> p_ini, p_mod, p_final;
  std::optional<AnalyticalNarrative> a_ini, a_mod, a_final;
  std::optional<VerificationReport> report_p, report_a;
  std::vector<std::string> stage_log;
  std::string backend_id;
  std::string model_id;
  std::vector<TranscriptEntry> transcript;
  std::string started_at, finished_at;

  bool completed() const { return state == StageState::Summarized; }
  bool revised() const {
    return p_ini.has_value() && p_mod.has_value() && p_ini->text != p_mod->text;
  }
};

// ---------------------------------------------------------------------------
// decision accounting
// ---------------------------------------------------------------------------

struct DecisionStats {
  long supported = 0;
  long partially_supported = 0;
  long refuted = 0;
  long unknown = 0;
  long not_verified = 0;
  long record_count = 0;
  long revision_candidates = 0;  // records with >=1 decision other than Supported
  long revised_count = 0;        // records whose process name actually changed
  double fraction_verified = 0.0;

  long total() const {
    return supported + partially_supported + refuted + unknown + not_verified;
  }
  long count(DecisionKind k) const {
    switch (k) {
      case DecisionKind::Supported: return supported;
      case DecisionKind::PartiallySupported: return partially_supported;
      case DecisionKind::Refuted: return refuted;
      case DecisionKind::Unknown: return unknown;
      case DecisionKind::NotVerified: return not_verified;
    }
    return 0;
  }
};

inline DecisionStats tally_decisions(const std::vector<PipelineRecord>& records) {
  DecisionStats st;
  st.record_count = static_cast<long>(records.size());
  for (const auto& rec : records) {
    bool candidate = false;
    for (const auto* rep : {rec.report_p ? &*rec.report_p : nullptr,
                            rec.report_a ? &*rec.report_a : nullptr}) {
      if (!rep) continue;
      for (const auto& vc : rep->verified_claims) {
        switch (vc.decision) {
          case DecisionKind::Supported: ++st.supported; break;
          case DecisionKind::PartiallySupported: ++st.partially_supported; break;
          case DecisionKind::Refuted: ++st.refuted; break;
          case DecisionKind::Unknown: ++st.unknown; break;
          case DecisionKind::NotVerified: ++st.not_verified; break;
        }
        if (vc.decision != DecisionKind::Supported) candidate = true;
      }
    }
    if (candidate) ++st.revision_candidates;
    if (rec.revised()) ++st.revised_count;
  }
  long tot = st.total();
  st.fraction_verified = tot == 0 ? 0.0 : static_cast<double>(tot - st.not_verified) / tot;
  return st;
}

// ---------------------------------------------------------------------------
// JSON serialization (insertion order is the wire order; keep it stable)
// ---------------------------------------------------------------------------

inline void to_json(ojson& j, const GeneSet& g) {
  j = ojson{{"id", g.id},
            {"source", source_name(g.source)},
            {"organism", g.organism.str()},
            {"reference_term", g.reference_term},
            {"genes", g.genes}};
}

inline void from_json(const ojson& j, GeneSet& g) {
  g.id = j.at("id").get<std::string>();
  g.source = source_from_string(j.at("source").get<std::string>());
  g.organism = Organism::from_string(j.at("organism").get<std::string>());
  g.reference_term = j.at("reference_term").get<std::string>();
  g.genes = j.at("genes").get<std::vector<std::string>>();
}

inline void to_json(ojson& j, const ProcessName& p) {
  j = ojson{{"text", p.text}, {"stage", text_stage_name(p.stage)}};
}

inline void from_json(const ojson& j, ProcessName& p) {
  p = ProcessName(j.at("text").get<std::string>(),
                  text_stage_from_string(j.at("stage").get<std::string>()));
}

inline void to_json(ojson& j, const AnalyticalNarrative& a) {
  j = ojson{{"text", a.text}, {"stage", text_stage_name(a.stage)}};
}

inline void from_json(const ojson& j, AnalyticalNarrative& a) {
  a = AnalyticalNarrative(j.at("text").get<std::string>(),
                          text_stage_from_string(j.at("stage").get<std::string>()));
}

inline void to_json(ojson& j, const Claim& c) {
  j = ojson{{"subject_genes", c.subject_genes},
            {"predicate", c.predicate},
            {"object_term", c.object_term},
            {"raw_text", c.raw_text},
            {"scope", claim_scope_name(c.scope)},
            {"note", c.note}};
}

inline void from_json(const ojson& j, Claim& c) {
  c.subject_genes = j.at("subject_genes").get<std::vector<std::string>>();
  c.predicate = j.at("predicate").get<std::string>();
  c.object_term = j.at("object_term").get<std::string>();
  c.raw_text = j.at("raw_text").get<std::string>();
  c.scope = claim_scope_from_string(j.at("scope").get<std::string>());
  c.note = j.value("note", std::string());
}

inline void to_json(ojson& j, const EvidenceRef& e) {
  j = ojson{{"database", e.database}, {"query", e.query}, {"excerpt", e.excerpt}};
}

inline void from_json(const ojson& j, EvidenceRef& e) {
  e.database = j.at("database").get<std::string>();
  e.query = j.at("query").get<std::string>();
  e.excerpt = j.at("excerpt").get<std::string>();
}

inline void to_json(ojson& j, const VerifiedClaim& v) {
  j = ojson{{"claim", v.claim},
            {"decision", decision_name(v.decision)},
            {"evidence", v.evidence},
            {"rationale", v.rationale},
            {"api_calls", v.api_calls}};
}

inline void from_json(const ojson& j, VerifiedClaim& v) {
  v.claim = j.at("claim").get<Claim>();
  v.decision = decision_from_string(j.at("decision").get<std::string>());
  v.evidence = j.at("evidence").get<std::vector<EvidenceRef>>();
  v.rationale = j.at("rationale").get<std::string>();
  v.api_calls = j.at("api_calls").get<std::map<std::string, int>>();
}

inline void to_json(ojson& j, const VerificationReport& r) {
  j = ojson{{"pass_kind", pass_kind_name(r.pass_kind)},
            {"verified_claims", r.verified_claims},
            {"api_calls", r.api_calls}};
}

inline void from_json(const ojson& j, VerificationReport& r) {
  r.pass_kind = pass_kind_from_string(j.at("pass_kind").get<std::string>());
  r.verified_claims = j.at("verified_claims").get<std::vector<VerifiedClaim>>();
  r.api_calls = j.at("api_calls").get<std::map<std::string, int>>();
}

inline void to_json(ojson& j, const TranscriptEntry& t) {
  j = ojson{{"kind", t.kind},         {"api", t.api},
            {"endpoint", t.endpoint}, {"query", t.query},
            {"response", t.response}, {"cache_hit", t.cache_hit}};
}

inline void from_json(const ojson& j, TranscriptEntry& t) {
  t.kind = j.at("kind").get<std::string>();
  t.api = j.at("api").get<std::string>();
  t.endpoint = j.at("endpoint").get<std::string>();
  t.query = j.at("query").get<std::string>();
  t.response = j.at("response").get<std::string>();
  t.cache_hit = j.at("cache_hit").get<bool>();
}

namespace detail {

template <typename T>
ojson opt_json(const std::optional<T>& v) {
  if (!v) return nullptr;
  ojson j = *v;
  return j;
}

template <typename T>
std::optional<T> opt_from(const ojson& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace detail

inline void to_json(ojson& j, const PipelineRecord& r) {
  ojson failure = nullptr;
  if (r.failure) failure = ojson{{"stage", r.failure->stage}, {"cause", r.failure->cause}};
  j = ojson{{"gene_set", r.gene_set},
            {"state", stage_state_name(r.state)},
            {"failure", failure},
            {"p_ini", detail::opt_json(r.p_ini)},
            {"a_ini", detail::opt_json(r.a_ini)},
            {"report_p", detail::opt_json(r.report_p)},
            {"p_mod", detail::opt_json(r.p_mod)},
            {"a_mod", detail::opt_json(r.a_mod)},
            {"report_a", detail::opt_json(r.report_a)},
            {"p_final", detail::opt_json(r.p_final)},
            {"a_final", detail::opt_json(r.a_final)},
            {"stage_log", r.stage_log},
            {"backend_id", r.backend_id},
            {"model_id", r.model_id},
            {"transcript", r.transcript},
            {"timestamps", ojson{{"started", r.started_at}, {"finished", r.finished_at}}}};
}

inline void from_json(const ojson& j, PipelineRecord& r) {
  r.gene_set = j.at("gene_set").get<GeneSet>();
  r.state = stage_state_from_string(j.at("state").get<std::string>());
  r.failure.reset();
  if (!j.at("failure").is_null()) {
    r.failure = StageFailure{j.at("failure").at("stage").get<std::string>(),
                             j.at("failure").at("cause").get<std::string>()};
  }
  r.p_ini = detail::opt_from<ProcessName>(j, "p_ini");
  r.a_ini = detail::opt_from<AnalyticalNarrative>(j, "a_ini");
  r.report_p = detail::opt_from<VerificationReport>(j, "report_p");
  r.p_mod = detail::opt_from<ProcessName>(j, "p_mod");
  r.a_mod = detail::opt_from<AnalyticalNarrative>(j, "a_mod");
  r.report_a = detail::opt_from<VerificationReport>(j, "report_a");
  r.p_final = detail::opt_from<ProcessName>(j, "p_final");
  r.a_final = detail::opt_from<AnalyticalNarrative>(j, "a_final");
  r.stage_log = j.at("stage_log").get<std::vector<std::string>>();
  r.backend_id = j.at("backend_id").get<std::string>();
  r.model_id = j.at("model_id").get<std::string>();
  r.transcript = j.at("transcript").get<std::vector<TranscriptEntry>>();
  r.started_at = j.at("timestamps").at("started").get<std::string>();
  r.finished_at = j.at("timestamps").at("finished").get<std::string>();
}

}  // namespace geneverify
