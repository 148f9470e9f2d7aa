#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "geneverify/core.hpp"
#include "geneverify/dbhub.hpp"
#include "geneverify/errors.hpp"
#include "geneverify/llm.hpp"

namespace geneverify {

/// Lossless entity extraction from a structured claim: the gene names and the
/// functional term that will drive the database queries.
inline std::pair<std::vector<std::string>, std::string> extract_entities(const Claim& claim) {
  return {claim.subject_genes, claim.object_term};
}

struct PipelineConfig {
  size_t evidence_budget = 4000;   // max characters of evidence in a verdict prompt
  size_t pubmed_snippets = 3;      // per-gene PubMed titles gathered as evidence
  bool query_pubmed = true;
  std::string model_id = "gpt-4";
};

/// The four-stage cascade: generation, claim-level self-verification of the
/// process name, modification, self-verification of the narrative (which
/// re-checks the process name), and summarization.
class Pipeline {
 public:
  Pipeline(const TemplateSet& templates, CompletionBackend& backend, DbHub& hub,
           PipelineConfig config = {})
      : templates_(templates), backend_(backend), hub_(hub), cfg_(std::move(config)) {}

  // -- stage operations -----------------------------------------------------

  std::pair<ProcessName, AnalyticalNarrative> generate(const GeneSet& gs, Transcript& log) {
    std::string prompt =
        templates_.render(Stage::Generation, {{"genes", join_genes(gs.genes)}});
    NameNarrative parsed;
    complete_and_parse(Stage::Generation, prompt, log, [&](const std::string& text) {
      parsed = parse_name_narrative(Stage::Generation, text);
    });
    return {ProcessName(parsed.process, TextStage::Initial),
            AnalyticalNarrative(parsed.narrative, TextStage::Initial)};
  }

  std::vector<Claim> make_claims_for_process(const GeneSet& gs, const ProcessName& p,
                                             Transcript& log) {
    std::string prompt = templates_.render(
        Stage::ClaimsForProcess,
        {{"genes", join_genes(gs.genes)}, {"process_name", p.text}});
    std::vector<Claim> claims;
    complete_and_parse(Stage::ClaimsForProcess, prompt, log, [&](const std::string& text) {
      claims = parse_claim_lines(Stage::ClaimsForProcess, text, ClaimScope::ProcessName);
    });
    for (auto& c : claims) restrict_to_set(c, gs);
    return claims;
  }

  std::vector<Claim> make_claims_for_narrative(const GeneSet& gs,
                                               const AnalyticalNarrative& a,
                                               Transcript& log) {
    if (trim(a.text).empty()) fail(Errc::Precondition, "empty narrative");
    std::string prompt =
        templates_.render(Stage::ClaimsForNarrative, {{"narrative", a.text}});
    std::vector<Claim> claims;
    complete_and_parse(Stage::ClaimsForNarrative, prompt, log, [&](const std::string& text) {
      claims = parse_claim_lines(Stage::ClaimsForNarrative, text, ClaimScope::Narrative);
    });
    for (auto& c : claims) restrict_to_set(c, gs);
    return claims;
  }

  /// Verification of one claim: set-level claims are routed to the enrichment
  /// services, narrative claims to the per-gene services, and the verdict
  /// prompt judges the claim against whatever evidence came back.
  VerifiedClaim verify_claim(const GeneSet& gs, const Claim& claim,
                             const MaskingPolicy& policy, Transcript& log) {
    VerifiedClaim out;
    out.claim = claim;

    auto [genes, term] = extract_entities(claim);
    if (genes.empty()) {
      out.decision = DecisionKind::NotVerified;
      out.rationale = prefix_note(
          claim, "not verified: no gene names available for database queries");
      out.validate();
      return out;
    }

    size_t log_start = log.entries.size();
    std::vector<std::string> evidence_lines;

    if (claim.scope == ClaimScope::ProcessName) {
      gather_enrichment_evidence(gs, genes, policy, log, out.evidence, evidence_lines);
    } else {
      gather_gene_evidence(gs, genes, term, policy, log, out.evidence, evidence_lines);
    }
    out.api_calls = log.api_counts(log_start);

    if (out.evidence.empty()) {
      out.decision = DecisionKind::Unknown;
      out.rationale = prefix_note(claim, "no evidence retrievable");
      out.validate();
      return out;
    }

    std::string evidence_text = budget_lines(evidence_lines, cfg_.evidence_budget);
    std::string prompt = templates_.render(
        Stage::Verdict, {{"claim", claim.raw_text}, {"evidence", evidence_text}});
    VerdictResult verdict;
    complete_and_parse(Stage::Verdict, prompt, log, [&](const std::string& text) {
      verdict = parse_verdict(text);
    });
    out.decision = verdict.decision;
    out.rationale = prefix_note(claim, verdict.rationale);
    out.validate();
    return out;
  }

  static VerificationReport compile_report(PassKind kind, std::vector<VerifiedClaim> claims) {
    if (claims.empty()) fail(Errc::EmptyPass, "verification pass produced no claims");
    VerificationReport report;
    report.pass_kind = kind;
    for (const auto& vc : claims)
      for (const auto& [api, n] : vc.api_calls) report.api_calls[api] += n;
    report.verified_claims = std::move(claims);
    return report;
  }

  std::pair<ProcessName, AnalyticalNarrative> modify(const ProcessName& p,
                                                     const AnalyticalNarrative& a,
                                                     const VerificationReport& report_p,
                                                     Transcript& log) {
    std::string prompt = templates_.render(Stage::Modification,
                                           {{"process_name", p.text},
                                            {"narrative", a.text},
                                            {"report", serialize_report(report_p)}});
    NameNarrative parsed;
    complete_and_parse(Stage::Modification, prompt, log, [&](const std::string& text) {
      parsed = parse_name_narrative(Stage::Modification, text);
    });
    return {ProcessName(parsed.process, TextStage::Modified),
            AnalyticalNarrative(parsed.narrative, TextStage::Modified)};
  }

  /// Second verification pass: claims for the modified narrative plus fresh
  /// claims for the modified process name, so the name is checked twice.
  VerificationReport verify_narrative_pass(const GeneSet& gs, const ProcessName& p_mod,
                                           const AnalyticalNarrative& a_mod,
                                           const MaskingPolicy& policy, Transcript& log) {
    std::vector<Claim> claims = make_claims_for_narrative(gs, a_mod, log);
    std::vector<Claim> name_claims = make_claims_for_process(gs, p_mod, log);
    claims.insert(claims.end(), name_claims.begin(), name_claims.end());

    std::vector<VerifiedClaim> verified;
    verified.reserve(claims.size());
    for (const auto& c : claims) verified.push_back(verify_claim(gs, c, policy, log));
    return compile_report(PassKind::NarrativePass, std::move(verified));
  }

  std::pair<ProcessName, AnalyticalNarrative> summarize(const ProcessName& p_mod,
                                                        const AnalyticalNarrative& a_mod,
                                                        const VerificationReport& report_a,
                                                        Transcript& log) {
    std::string prompt = templates_.render(Stage::Summarization,
                                           {{"process_name", p_mod.text},
                                            {"narrative", a_mod.text},
                                            {"report", serialize_report(report_a)}});
    NameNarrative parsed;
    complete_and_parse(Stage::Summarization, prompt, log, [&](const std::string& text) {
      parsed = parse_name_narrative(Stage::Summarization, text);
    });
    return {ProcessName(parsed.process, TextStage::Final),
            AnalyticalNarrative(parsed.narrative, TextStage::Final)};
  }

  // -- whole cascade ----------------------------------------------------------

  /// Runs the full cascade. Failures never escape: a failed stage yields a
  /// record with a Failed state, the failure cause, and everything
  /// produced before the failure.
  PipelineRecord run(const GeneSet& gs) {
    PipelineRecord rec;
    rec.gene_set = gs;
    rec.backend_id = backend_.id();
    rec.model_id = cfg_.model_id;
    rec.started_at = now_iso8601();

    Transcript log;
    MaskingPolicy policy = apply_masking(gs.source);
    std::string stage = "Generation";
    try {
      auto [p_ini, a_ini] = generate(gs, log);
      rec.p_ini = p_ini;
      rec.a_ini = a_ini;
      advance(rec, StageState::Generated);

      stage = "ProcessVerification";
      std::vector<Claim> claims = make_claims_for_process(gs, p_ini, log);
      std::vector<VerifiedClaim> verified;
      verified.reserve(claims.size());
      for (const auto& c : claims) verified.push_back(verify_claim(gs, c, policy, log));
      rec.report_p = compile_report(PassKind::ProcessNamePass, std::move(verified));
      advance(rec, StageState::ProcessVerified);

      stage = "Modification";
      auto [p_mod, a_mod] = modify(p_ini, a_ini, *rec.report_p, log);
      rec.p_mod = p_mod;
      rec.a_mod = a_mod;
      advance(rec, StageState::Modified);

      stage = "NarrativeVerification";
      rec.report_a = verify_narrative_pass(gs, p_mod, a_mod, policy, log);
      advance(rec, StageState::NarrativeVerified);

      stage = "Summarization";
      auto [p_final, a_final] = summarize(p_mod, a_mod, *rec.report_a, log);
      rec.p_final = p_final;
      rec.a_final = a_final;
      advance(rec, StageState::Summarized);
    } catch (const std::exception& e) {
      rec.state = StageState::Failed;
      rec.failure = StageFailure{stage, e.what()};
      rec.stage_log.push_back("Failed:" + stage);
    }

    rec.transcript = std::move(log.entries);
    rec.finished_at = now_iso8601();
    return rec;
  }

  /// Human-readable report serialization used inside modification and
  /// summarization prompts. Deterministic.
  static std::string serialize_report(const VerificationReport& report) {
    std::string out;
    size_t idx = 1;
    for (const auto& vc : report.verified_claims) {
      out += std::to_string(idx++) + ". ";
      out += "[" + std::string(decision_name(vc.decision)) + "] " + vc.claim.raw_text;
      if (!vc.rationale.empty()) out += " | " + vc.rationale;
      if (!vc.evidence.empty()) {
        out += " | evidence: ";
        for (size_t i = 0; i < vc.evidence.size(); ++i)
          out += (i ? "; " : "") + vc.evidence[i].database;
      }
      out += "\n";
    }
    return out;
  }

 private:
  static void advance(PipelineRecord& rec, StageState next) {
    rec.state = next;
    rec.stage_log.push_back(stage_state_name(next));
  }

  static std::string join_genes(const std::vector<std::string>& genes) {
    std::string out;
    for (size_t i = 0; i < genes.size(); ++i) out += (i ? ", " : "") + genes[i];
    return out;
  }

  /// Keeps only subject genes that belong to the set (case-insensitive);
  /// anything else the model invented is dropped and noted on the claim.
  static void restrict_to_set(Claim& claim, const GeneSet& gs) {
    std::vector<std::string> kept, dropped;
    for (const auto& sym : claim.subject_genes) {
      if (gs.contains_symbol(sym))
        kept.push_back(sym);
      else
        dropped.push_back(sym);
    }
    claim.subject_genes = std::move(kept);
    if (!dropped.empty()) {
      std::string note = "dropped symbols not in gene set:";
      for (const auto& d : dropped) note += " " + d;
      claim.note = claim.note.empty() ? note : claim.note + "; " + note;
    }
  }

  static std::string prefix_note(const Claim& claim, const std::string& rationale) {
    if (claim.note.empty()) return rationale;
    return "(" + claim.note + ") " + rationale;
  }

  void gather_enrichment_evidence(const GeneSet& gs, const std::vector<std::string>& genes,
                                  const MaskingPolicy& policy, Transcript& log,
                                  std::vector<EvidenceRef>& evidence,
                                  std::vector<std::string>& lines) {
    std::string gene_query = join_genes(genes);
    if (!policy.api_disabled("gprofiler")) {
      try {
        auto terms = hub_.gprofiler_top_terms(genes, gs.organism, policy, &log);
        for (const auto& t : terms) {
          EvidenceRef ref{"g:Profiler/" + t.source_db, gene_query, format_term(t)};
          lines.push_back(ref.database + ": " + ref.excerpt);
          evidence.push_back(std::move(ref));
        }
      } catch (const GvError& e) {
        rethrow_if_replay_miss(e);
      }
    }
    if (!policy.api_disabled("enrichr")) {
      try {
        auto by_lib = hub_.enrichr_top_pathways(genes, hub_.config().enrichr_libraries,
                                                policy, &log);
        for (const auto& [lib, terms] : by_lib) {
          for (const auto& t : terms) {
            EvidenceRef ref{"Enrichr/" + lib, gene_query, format_term(t)};
            lines.push_back(ref.database + ": " + ref.excerpt);
            evidence.push_back(std::move(ref));
          }
        }
      } catch (const GvError& e) {
        rethrow_if_replay_miss(e);
      }
    }
  }

  void gather_gene_evidence(const GeneSet& gs, const std::vector<std::string>& genes,
                            const std::string& term, const MaskingPolicy& policy,
                            Transcript& log, std::vector<EvidenceRef>& evidence,
                            std::vector<std::string>& lines) {
    for (const auto& gene : genes) {
      if (!policy.api_disabled("eutils")) {
        try {
          GeneFunctionRecord rec = hub_.eutils_gene_summary(gene, gs.organism, &log);
          std::string excerpt = clip(rec.summary_text, 400);
          EvidenceRef ref{"E-utils/gene", gene, excerpt};
          lines.push_back(ref.database + " " + gene + ": " + excerpt);
          evidence.push_back(std::move(ref));
        } catch (const GvError& e) {
          rethrow_if_replay_miss(e);
        }
        if (cfg_.query_pubmed) {
          try {
            auto snippets = hub_.eutils_pubmed_snippets(gene + " " + term, &log);
            if (snippets.size() > cfg_.pubmed_snippets)
              snippets.resize(cfg_.pubmed_snippets);
            for (const auto& s : snippets) {
              EvidenceRef ref{"E-utils/pubmed", gene + " " + term,
                              s.summary_text + " [PMID " + (s.ids.empty() ? "?" : s.ids[0]) +
                                  "]"};
              lines.push_back(ref.database + ": " + ref.excerpt);
              evidence.push_back(std::move(ref));
            }
          } catch (const GvError& e) {
            rethrow_if_replay_miss(e);
          }
        }
      }
      if (!policy.api_disabled("custom")) {
        for (CustomKind kind : kAllCustomKinds) {
          try {
            auto recs = hub_.custom_lookup(kind, gene, &log);
            if (recs.empty()) continue;
            std::string names;
            for (size_t i = 0; i < recs.size(); ++i)
              names += (i ? "; " : "") + recs[i].summary_text;
            EvidenceRef ref{std::string("CustomAPI/") + custom_kind_name(kind), gene,
                            names};
            lines.push_back(ref.database + " " + gene + ": " + names);
            evidence.push_back(std::move(ref));
          } catch (const GvError& e) {
            rethrow_if_replay_miss(e);
          }
        }
      }
    }
  }

  /// Evidence-gathering tolerates individual source failures (the verdict
  /// falls back to Unknown when nothing at all was retrievable), but a replay
  /// miss means broken fixtures and must surface.
  static void rethrow_if_replay_miss(const GvError& e) {
    if (e.kind() == Errc::ReplayMiss) throw e;
  }

  static std::string format_term(const EnrichmentTerm& t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", t.p_value);
    std::string out = t.name + " (p=" + buf + ")";
    if (!t.description.empty()) out += " - " + t.description;
    return out;
  }

  static std::string clip(const std::string& s, size_t max_len) {
    if (s.size() <= max_len) return s;
    return s.substr(0, max_len) + "...";
  }

  /// Most-significant-first truncation of evidence lines to the prompt budget.
  static std::string budget_lines(const std::vector<std::string>& lines, size_t budget) {
    std::string out;
    for (const auto& line : lines) {
      if (!out.empty() && out.size() + line.size() + 1 > budget) break;
      out += line + "\n";
    }
    if (out.empty() && !lines.empty()) out = lines.front().substr(0, budget) + "\n";
    return out;
  }

  /// complete + parse with one re-prompt carrying a format reminder, then a
  /// hard failure.
  void complete_and_parse(Stage stage, const std::string& prompt, Transcript& log,
                          const std::function<void(const std::string&)>& parse) {
    CompletionRequest req;
    req.stage = stage;
    req.prompt = prompt;
    req.backend_id = backend_.id();
    std::string text = backend_.complete(req);
    log.add(TranscriptEntry{"llm", backend_.id(), stage_name(stage), prompt, text, false});
    try {
      parse(text);
      return;
    } catch (const GvError& e) {
      if (e.kind() != Errc::UnparseableOutput) throw;
    }
    req.prompt = prompt + format_reminder(stage);
    text = backend_.complete(req);
    log.add(
        TranscriptEntry{"llm", backend_.id(), stage_name(stage), req.prompt, text, false});
    parse(text);  // second failure propagates
  }

  const TemplateSet& templates_;
  CompletionBackend& backend_;
  DbHub& hub_;
  PipelineConfig cfg_;
};

/// Runs independent gene sets concurrently; output order matches input order.
inline std::vector<PipelineRecord> run_batch(Pipeline& pipeline,
                                             const std::vector<GeneSet>& sets,
                                             unsigned parallelism = 0) {
  if (parallelism == 0) parallelism = std::max(1u, std::thread::hardware_concurrency());
  parallelism = std::min<unsigned>(parallelism, sets.empty() ? 1 : sets.size());

  std::vector<PipelineRecord> records(sets.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= sets.size()) break;
      records[i] = pipeline.run(sets[i]);
    }
  };
  std::vector<std::thread> threads;
  for (unsigned t = 0; t < parallelism; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return records;
}

}  // namespace geneverify
