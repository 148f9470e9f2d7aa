#pragma once

#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "geneverify/core.hpp"
#include "geneverify/errors.hpp"
#include "geneverify/http.hpp"
#include "geneverify/sha256.hpp"

namespace geneverify {

enum class Stage {
  Generation,
  ClaimsForProcess,
  ClaimsForNarrative,
  Verdict,
  Modification,
  Summarization,
  EnrichmentSummarize,
};

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Generation: return "generation";
    case Stage::ClaimsForProcess: return "claims_process";
    case Stage::ClaimsForNarrative: return "claims_narrative";
    case Stage::Verdict: return "verdict";
    case Stage::Modification: return "modification";
    case Stage::Summarization: return "summarization";
    case Stage::EnrichmentSummarize: return "enrichment_summarize";
  }
  return "generation";
}

constexpr Stage kAllStages[] = {
    Stage::Generation,      Stage::ClaimsForProcess, Stage::ClaimsForNarrative,
    Stage::Verdict,         Stage::Modification,     Stage::Summarization,
    Stage::EnrichmentSummarize,
};

// ---------------------------------------------------------------------------
// prompt templates
// ---------------------------------------------------------------------------

struct PromptTemplate {
  Stage stage = Stage::Generation;
  std::string text;
  std::set<std::string> required_bindings;  // every placeholder in `text`
};

namespace detail {

inline std::set<std::string> scan_placeholders(const std::string& text) {
  std::set<std::string> names;
  for (size_t i = 0; i + 1 < text.size(); ++i) {
    if (text[i] != '{') continue;
    size_t end = text.find('}', i + 1);
    if (end == std::string::npos) break;
    std::string name = text.substr(i + 1, end - i - 1);
    bool ident = !name.empty();
    for (char c : name)
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') ident = false;
    if (ident) names.insert(name);
    i = end;
  }
  return names;
}

}  // namespace detail

/// Single-pass substitution: placeholder values are inserted verbatim and
/// never re-scanned. Any placeholder without a binding is an error.
inline std::string render_prompt(const PromptTemplate& tpl,
                                 const std::map<std::string, std::string>& bindings) {
  std::string out;
  out.reserve(tpl.text.size() + 256);
  const std::string& text = tpl.text;
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '{') {
      size_t end = text.find('}', i + 1);
      if (end != std::string::npos) {
        std::string name = text.substr(i + 1, end - i - 1);
        bool ident = !name.empty();
        for (char c : name)
          if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') ident = false;
        if (ident) {
          auto it = bindings.find(name);
          if (it == bindings.end()) fail(Errc::MissingBinding, name);
          out += it->second;
          i = end;
          continue;
        }
      }
    }
    out.push_back(text[i]);
  }
  return out;
}

class TemplateSet {
 public:
  static constexpr const char* kBuiltinVersion = "v1";

  static TemplateSet builtin();
  static TemplateSet load_dir(const std::filesystem::path& dir);

  const PromptTemplate& at(Stage s) const { return templates_.at(s); }
  const std::string& version() const { return version_; }

  std::string render(Stage s, const std::map<std::string, std::string>& bindings) const {
    return render_prompt(at(s), bindings);
  }

 private:
  void put(Stage s, std::string text) {
    PromptTemplate tpl;
    tpl.stage = s;
    tpl.text = std::move(text);
    tpl.required_bindings = detail::scan_placeholders(tpl.text);
    templates_[s] = std::move(tpl);
  }

  std::map<Stage, PromptTemplate> templates_;
  std::string version_;
};

inline TemplateSet TemplateSet::builtin() {
  TemplateSet set;
  set.version_ = kBuiltinVersion;

  set.put(Stage::Generation,
          "You are an expert computational biologist. A set of genes is given below.\n"
          "Propose the single most prominent biological process shared by these genes,\n"
          "and write an analytical narrative describing the function of each gene in\n"
          "the set, one sentence per gene.\n"
          "\n"
          "Genes: {genes}\n"
          "\n"
          "Answer exactly in this format:\n"
          "Process: <short biological process name>\n"
          "Narrative: <analytical narrative>\n");

  set.put(Stage::ClaimsForProcess,
          "A gene set and a candidate biological process name are given. Write the\n"
          "hypothesis claims linking the genes to the process, one claim per line,\n"
          "using statements like \"is involved in\" or \"is related to\". If the process\n"
          "name is composite, also write one claim per component.\n"
          "\n"
          "Genes: {genes}\n"
          "Process name: {process_name}\n"
          "\n"
          "Claims:\n");

  set.put(Stage::ClaimsForNarrative,
          "An analytical narrative about gene functions is given. Extract every factual\n"
          "assertion linking gene names to a functional term. Write one claim per line\n"
          "using statements like \"is involved in\" or \"is associated with\".\n"
          "\n"
          "Narrative: {narrative}\n"
          "\n"
          "Claims:\n");

  set.put(Stage::Verdict,
          "A claim about gene function and reference evidence retrieved from\n"
          "expert-curated biological databases are given. Decide whether the evidence\n"
          "supports the claim. Start your answer with exactly one of SUPPORTED,\n"
          "PARTIALLY SUPPORTED, REFUTED, or UNKNOWN. Use PARTIALLY SUPPORTED when only\n"
          "part of the claim is covered by the evidence. Follow the decision with a\n"
          "short justification.\n"
          "\n"
          "Claim: {claim}\n"
          "\n"
          "Evidence:\n"
          "{evidence}\n"
          "\n"
          "Decision:\n");

  set.put(Stage::Modification,
          "A candidate biological process name and its analytical narrative are given,\n"
          "together with a verification report compiled from expert-curated databases.\n"
          "Revise the process name and the narrative if the report refutes or only\n"
          "partially supports them; otherwise retain the original wording.\n"
          "\n"
          "Process name: {process_name}\n"
          "Narrative: {narrative}\n"
          "\n"
          "Verification report:\n"
          "{report}\n"
          "\n"
          "Answer exactly in this format:\n"
          "Process: <process name>\n"
          "Narrative: <analytical narrative>\n");

  set.put(Stage::Summarization,
          "A verified biological process name and its analytical narrative are given,\n"
          "together with the final verification report. Summarize the findings into\n"
          "the final process name and analytical narrative, keeping only statements\n"
          "consistent with the report.\n"
          "\n"
          "Process name: {process_name}\n"
          "Narrative: {narrative}\n"
          "\n"
          "Verification report:\n"
          "{report}\n"
          "\n"
          "Answer exactly in this format:\n"
          "Process: <process name>\n"
          "Narrative: <analytical narrative>\n");

  set.put(Stage::EnrichmentSummarize,
          "A gene set is given together with a synopsis of its verified gene\n"
          "functions. List the significant enrichment terms a gene set enrichment\n"
          "analysis would report for this set. Write one term per line and nothing\n"
          "else.\n"
          "\n"
          "Genes: {genes}\n"
          "\n"
          "Function synopsis:\n"
          "{report}\n"
          "\n"
          "Terms:\n");

  return set;
}

inline TemplateSet TemplateSet::load_dir(const std::filesystem::path& dir) {
  TemplateSet set;
  std::ifstream vf(dir / "VERSION");
  if (!vf) fail(Errc::IoFailure, "missing VERSION file in template dir " + dir.string());
  std::getline(vf, set.version_);
  set.version_ = trim(set.version_);
  for (Stage s : kAllStages) {
    std::filesystem::path file = dir / (std::string(stage_name(s)) + ".txt");
    std::ifstream in(file);
    if (!in) fail(Errc::IoFailure, "missing template file " + file.string());
    std::stringstream buf;
    buf << in.rdbuf();
    set.put(s, buf.str());
  }
  return set;
}

// ---------------------------------------------------------------------------
// completion backends
// ---------------------------------------------------------------------------

struct CompletionRequest {
  Stage stage = Stage::Generation;
  std::string prompt;
  double temperature = 0.0;  // the whole cascade runs at temperature 0
  int max_tokens = 2048;
  std::string backend_id;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string complete(const CompletionRequest& req) = 0;
  virtual std::string id() const = 0;
};

/// Deterministic replay backend: completions live in a directory of
/// `<sha256(prompt)>.txt` files.
class ScriptedBackend final : public CompletionBackend {
 public:
  explicit ScriptedBackend(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::string complete(const CompletionRequest& req) override {
    std::string digest = sha256_hex(req.prompt);
    std::filesystem::path file = dir_ / (digest + ".txt");
    std::ifstream in(file, std::ios::binary);
    if (!in)
      fail(Errc::BackendUnavailable,
           "scripted store has no completion for prompt digest " + digest);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
  }

  std::string id() const override { return "scripted:" + dir_.string(); }

 private:
  std::filesystem::path dir_;
};

/// Wraps any backend and records each completion into a scripted store, so a
/// live run (or a synthetic one in tests) can be replayed later.
class RecordingBackend final : public CompletionBackend {
 public:
  RecordingBackend(CompletionBackend& inner, std::filesystem::path dir)
      : inner_(inner), dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  std::string complete(const CompletionRequest& req) override {
    std::string text = inner_.complete(req);
    std::filesystem::path file = dir_ / (sha256_hex(req.prompt) + ".txt");
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoFailure, "cannot write scripted entry " + file.string());
    out << text;
    return text;
  }

  std::string id() const override { return inner_.id() + "+recording"; }

 private:
  CompletionBackend& inner_;
  std::filesystem::path dir_;
};

/// OpenAI-compatible chat-completion client. Transient transport failures are
/// retried with exponential backoff; concurrent use is throttled to
/// `max_in_flight` requests.
class LiveChatBackend final : public CompletionBackend {
 public:
  struct Options {
    std::string url;    // e.g. https://host/v1/chat/completions
    std::string model;  // recorded into run records; behavior is not pinned
    std::string api_key;
    int max_retries = 2;
    int backoff_base_ms = 500;
    int max_in_flight = 4;
  };

  LiveChatBackend(HttpTransport& transport, Options opt)
      : transport_(transport), opt_(std::move(opt)) {
    if (opt_.url.empty()) fail(Errc::BackendUnavailable, "no chat endpoint configured");
    if (opt_.max_in_flight < 1) opt_.max_in_flight = 1;
  }

  std::string complete(const CompletionRequest& req) override {
    if (opt_.api_key.empty())
      fail(Errc::CredentialMissing, "GENEVERIFY_LLM_KEY is not set");
    InFlightSlot slot(*this);
    ojson body{{"model", opt_.model},
               {"temperature", req.temperature},
               {"max_tokens", req.max_tokens},
               {"messages", ojson::array({ojson{{"role", "user"}, {"content", req.prompt}}})}};
    HttpHeaders headers{{"Authorization", "Bearer " + opt_.api_key},
                        {"api-key", opt_.api_key}};
    std::string payload = body.dump();

    HttpResponse res;
    for (int attempt = 0;; ++attempt) {
      try {
        res = transport_.post(opt_.url, payload, "application/json", headers);
        if (res.status == 429 || res.status >= 500)
          fail(Errc::Transport, "chat endpoint returned status " + std::to_string(res.status));
        break;
      } catch (const GvError& e) {
        if (e.kind() != Errc::Transport || attempt >= opt_.max_retries) throw;
        std::this_thread::sleep_for(
            std::chrono::milliseconds(opt_.backoff_base_ms * (1 << attempt)));
      }
    }
    if (res.status != 200)
      fail(Errc::BackendUnavailable,
           "chat endpoint returned status " + std::to_string(res.status));
    try {
      ojson j = ojson::parse(res.body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::MalformedResponse, std::string("chat response: ") + e.what());
    }
  }

  std::string id() const override { return "live:" + opt_.model; }

  int in_flight() const {
    std::lock_guard<std::mutex> lk(mu_);
    return in_flight_;
  }

 private:
  struct InFlightSlot {
    explicit InFlightSlot(LiveChatBackend& b) : backend(b) {
      std::unique_lock<std::mutex> lk(backend.mu_);
      backend.cv_.wait(lk, [&] { return backend.in_flight_ < backend.opt_.max_in_flight; });
      ++backend.in_flight_;
    }
    ~InFlightSlot() {
      {
        std::lock_guard<std::mutex> lk(backend.mu_);
        --backend.in_flight_;
      }
      backend.cv_.notify_one();
    }
    LiveChatBackend& backend;
  };

  HttpTransport& transport_;
  Options opt_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
};

// ---------------------------------------------------------------------------
// structured output parsing
// ---------------------------------------------------------------------------

struct NameNarrative {
  std::string process;
  std::string narrative;
};

namespace detail {

inline bool istarts_with(const std::string& s, const std::string& prefix) {
  if (s.size() < prefix.size()) return false;
  for (size_t i = 0; i < prefix.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i])))
      return false;
  return true;
}

inline std::string strip_list_marker(std::string line) {
  line = trim(line);
  while (!line.empty() && (line.front() == '-' || line.front() == '*' || line.front() == '#'))
    line = trim(line.substr(1));
  size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')'))
    line = trim(line.substr(i + 1));
  return line;
}

}  // namespace detail

/// Parses the `Process: <name>` / `Narrative: <block>` grammar used by the
/// generation, modification and summarization stages.
inline NameNarrative parse_name_narrative(Stage stage, const std::string& text) {
  std::vector<std::string> lines = split(text, '\n');
  NameNarrative out;
  size_t i = 0;
  for (; i < lines.size(); ++i) {
    std::string l = trim(lines[i]);
    if (detail::istarts_with(l, "process:")) {
      out.process = trim(l.substr(8));
      ++i;
      break;
    }
  }
  for (; i < lines.size(); ++i) {
    std::string l = trim(lines[i]);
    if (detail::istarts_with(l, "narrative:")) {
      std::string rest = trim(l.substr(10));
      std::string block = rest;
      for (size_t k = i + 1; k < lines.size(); ++k) {
        std::string cont = trim(lines[k]);
        if (cont.empty()) continue;
        if (!block.empty()) block += "\n";
        block += cont;
      }
      out.narrative = trim(block);
      break;
    }
  }
  if (out.process.empty() || out.narrative.empty())
    fail(Errc::UnparseableOutput,
         std::string(stage_name(stage)) + " output lacks Process/Narrative sections: " +
             text.substr(0, std::min<size_t>(text.size(), 160)));
  return out;
}

/// Predicate phrases recognized in claim lines, longest first so that e.g.
/// "are involved in" wins over "involved in".
inline const std::vector<std::string>& claim_predicates() {
  static const std::vector<std::string> preds = {
      " are involved in ",   " is involved in ",   " are associated with ",
      " is associated with ", " are related to ",   " is related to ",
      " participate in ",    " participates in ",  " contribute to ",
      " contributes to ",    " play a role in ",   " plays a role in ",
  };
  return preds;
}

/// One claim per line. Lines without a recognizable predicate are ignored;
/// an output with no parseable claim at all is an error.
inline std::vector<Claim> parse_claim_lines(Stage stage, const std::string& text,
                                            ClaimScope scope) {
  std::vector<Claim> claims;
  for (const std::string& raw_line : split(text, '\n')) {
    std::string line = detail::strip_list_marker(raw_line);
    if (line.empty() || detail::istarts_with(line, "claims:")) continue;

    size_t best_pos = std::string::npos;
    size_t best_len = 0;
    for (const auto& pred : claim_predicates()) {
      size_t pos = line.find(pred);
      if (pos == std::string::npos) continue;
      if (pos < best_pos || (pos == best_pos && pred.size() > best_len)) {
        best_pos = pos;
        best_len = pred.size();
      }
    }
    if (best_pos == std::string::npos) continue;

    Claim c;
    c.scope = scope;
    c.raw_text = line;
    c.predicate = trim(line.substr(best_pos, best_len));
    c.object_term = trim(line.substr(best_pos + best_len));
    while (!c.object_term.empty() && (c.object_term.back() == '.' || c.object_term.back() == ';'))
      c.object_term.pop_back();
    if (c.object_term.empty()) continue;

    std::string subject = line.substr(0, best_pos);
    for (std::string part : split(subject, ',')) {
      // "A and B" inside one comma-separated chunk
      size_t and_pos;
      while ((and_pos = part.find(" and ")) != std::string::npos) {
        std::string head = trim(part.substr(0, and_pos));
        if (!head.empty()) c.subject_genes.push_back(head);
        part = part.substr(and_pos + 5);
      }
      std::string tail = trim(part);
      if (!tail.empty()) c.subject_genes.push_back(tail);
    }
    // drop multiword chunks ("The gene set", "these genes"): symbols have no spaces
    std::erase_if(c.subject_genes,
                  [](const std::string& s) { return s.find(' ') != std::string::npos; });
    claims.push_back(std::move(c));
  }
  if (claims.empty())
    fail(Errc::UnparseableOutput,
         std::string(stage_name(stage)) + " output contains no parseable claims: " +
             text.substr(0, std::min<size_t>(text.size(), 160)));
  return claims;
}

struct VerdictResult {
  DecisionKind decision = DecisionKind::Unknown;
  std::string rationale;
};

inline VerdictResult parse_verdict(const std::string& text) {
  std::string body = detail::strip_list_marker(trim(text));
  std::string upper = body;
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });

  VerdictResult out;
  size_t token_len = 0;
  if (upper.rfind("PARTIALLY SUPPORTED", 0) == 0) {
    out.decision = DecisionKind::PartiallySupported;
    token_len = std::string("PARTIALLY SUPPORTED").size();
  } else if (upper.rfind("SUPPORTED", 0) == 0) {
    out.decision = DecisionKind::Supported;
    token_len = std::string("SUPPORTED").size();
  } else if (upper.rfind("REFUTED", 0) == 0) {
    out.decision = DecisionKind::Refuted;
    token_len = std::string("REFUTED").size();
  } else if (upper.rfind("UNKNOWN", 0) == 0) {
    out.decision = DecisionKind::Unknown;
    token_len = std::string("UNKNOWN").size();
  } else {
    fail(Errc::UnparseableOutput,
         "verdict output lacks a decision token: " +
             body.substr(0, std::min<size_t>(body.size(), 120)));
  }

  std::string rest = body.substr(token_len);
  size_t b = 0;
  while (b < rest.size() &&
         (std::isspace(static_cast<unsigned char>(rest[b])) || rest[b] == '-' ||
          rest[b] == ':' || rest[b] == ',' || rest[b] == '.' ||
          static_cast<unsigned char>(rest[b]) >= 0x80))
    ++b;
  out.rationale = trim(rest.substr(b));
  return out;
}

/// One enrichment term per line; list markers tolerated.
inline std::vector<std::string> parse_term_lines(const std::string& text) {
  std::vector<std::string> terms;
  for (const std::string& raw : split(text, '\n')) {
    std::string line = detail::strip_list_marker(raw);
    if (line.empty() || detail::istarts_with(line, "terms:")) continue;
    terms.push_back(line);
  }
  if (terms.empty())
    fail(Errc::UnparseableOutput, "enrichment summarization produced no terms");
  return terms;
}

/// Appended to the prompt for the single re-ask after an unparseable output.
inline std::string format_reminder(Stage stage) {
  switch (stage) {
    case Stage::Generation:
    case Stage::Modification:
    case Stage::Summarization:
      return "\nReminder: answer exactly as\nProcess: <name>\nNarrative: <text>\n";
    case Stage::ClaimsForProcess:
    case Stage::ClaimsForNarrative:
      return "\nReminder: one claim per line, e.g. GENE1, GENE2 is involved in <term>.\n";
    case Stage::Verdict:
      return "\nReminder: start with SUPPORTED, PARTIALLY SUPPORTED, REFUTED, or UNKNOWN.\n";
    case Stage::EnrichmentSummarize:
      return "\nReminder: write one enrichment term per line, nothing else.\n";
  }
  return "\n";
}

}  // namespace geneverify
