// geneverify: gene-set naming with database-backed self-verification.
//
// Subcommands: run, eval, enrich-test, stats, report, cache, templates.
// Exit codes: 0 success, 1 usage, 2 data error, 3 backend error.

#include <CLI11.hpp>

#include <cmath>
#include <iostream>
#include <memory>
#include <optional>

#include "geneverify/config.hpp"
#include "geneverify/core.hpp"
#include "geneverify/dbhub.hpp"
#include "geneverify/evalkit.hpp"
#include "geneverify/http_live.hpp"
#include "geneverify/llm.hpp"
#include "geneverify/pipeline.hpp"
#include "geneverify/storage.hpp"

namespace gv = geneverify;

namespace {

int exit_code_for(gv::Errc kind) {
  switch (kind) {
    case gv::Errc::MissingBinding:
    case gv::Errc::BackendUnavailable:
    case gv::Errc::CredentialMissing:
    case gv::Errc::MalformedResponse:
    case gv::Errc::UnparseableOutput:
    case gv::Errc::Transport:
    case gv::Errc::RateLimited:
    case gv::Errc::SessionExpired:
      return 3;
    default:
      return 2;
  }
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << gv::ojson{{"error", kind}, {"message", message}}.dump() << "\n";
}

std::optional<gv::Errc> errc_in_message(const std::string& message) {
  for (int k = 0; k <= static_cast<int>(gv::Errc::NoSignificantTerms); ++k) {
    auto kind = static_cast<gv::Errc>(k);
    if (message.find(gv::errc_name(kind)) != std::string::npos) return kind;
  }
  return std::nullopt;
}

struct CommonOpts {
  std::string config_path;
  std::string cache_dir;
  std::string templates_dir;
  std::string custom_db_dir;
  std::string scripted_llm;
  std::string record_llm;
  std::string llm_url;
  std::string model;
  double rate_limit = 0;
  bool replay = false;
  bool record = false;
};

gv::AppConfig effective_config(const CommonOpts& o) {
  gv::AppConfig cfg = gv::AppConfig::load(o.config_path);
  if (!o.cache_dir.empty()) cfg.cache_dir = o.cache_dir;
  if (!o.templates_dir.empty()) cfg.templates_dir = o.templates_dir;
  if (!o.custom_db_dir.empty()) cfg.custom_db_dir = o.custom_db_dir;
  if (!o.llm_url.empty()) cfg.llm_url = o.llm_url;
  if (!o.model.empty()) cfg.llm_model = o.model;
  if (o.rate_limit > 0) cfg.rate_limit = o.rate_limit;
  return cfg;
}

gv::TemplateSet load_templates(const gv::AppConfig& cfg) {
  if (cfg.templates_dir.empty()) return gv::TemplateSet::builtin();
  return gv::TemplateSet::load_dir(cfg.templates_dir);
}

/// Everything a command needs to talk to the services, with consistent
/// record/replay wiring.
struct Services {
  std::unique_ptr<gv::HttpTransport> transport;  // null in replay mode
  std::unique_ptr<gv::ResponseCache> cache;
  std::unique_ptr<gv::DbHub> hub;
  std::unique_ptr<gv::CompletionBackend> llm_inner;
  std::unique_ptr<gv::CompletionBackend> llm;  // possibly a recording wrapper
  gv::TemplateSet templates;

  long network_requests() const { return transport ? transport->requests_attempted() : 0; }
};

Services make_services(const CommonOpts& o, const gv::AppConfig& cfg, bool need_llm) {
  Services s;
  s.templates = load_templates(cfg);

  gv::CacheMode mode = o.replay ? gv::CacheMode::Replay : gv::CacheMode::Record;
  s.cache = std::make_unique<gv::ResponseCache>(cfg.cache_dir, mode);
  if (!o.replay) s.transport = std::make_unique<gv::HttplibTransport>();

  gv::HubConfig hub_cfg;
  hub_cfg.rate_limit_per_s = cfg.rate_limit;
  gv::CustomStore custom;
  if (!cfg.custom_db_dir.empty()) custom = gv::CustomStore(cfg.custom_db_dir);
  s.hub = std::make_unique<gv::DbHub>(*s.cache, s.transport.get(), hub_cfg,
                                      std::move(custom));

  if (need_llm) {
    if (!o.scripted_llm.empty()) {
      s.llm_inner = std::make_unique<gv::ScriptedBackend>(o.scripted_llm);
    } else {
      if (o.replay)
        gv::fail(gv::Errc::BackendUnavailable,
                 "--replay requires --scripted-llm (no live completions offline)");
      if (!s.transport) s.transport = std::make_unique<gv::HttplibTransport>();
      gv::LiveChatBackend::Options opt;
      opt.url = cfg.llm_url;
      opt.model = cfg.llm_model;
      opt.api_key = cfg.llm_key;
      s.llm_inner = std::make_unique<gv::LiveChatBackend>(*s.transport, opt);
    }
    if (!o.record_llm.empty())
      s.llm = std::make_unique<gv::RecordingBackend>(*s.llm_inner, o.record_llm);
  }
  return s;
}

gv::CompletionBackend& llm_of(Services& s) { return s.llm ? *s.llm : *s.llm_inner; }

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_run(const CommonOpts& opts, const std::string& dataset, const std::string& source_str,
            const std::string& organism_str, const std::string& out_dir, std::string run_id,
            unsigned parallelism) {
  gv::AppConfig cfg = effective_config(opts);
  gv::Source source = gv::source_from_string(source_str);
  gv::Organism organism = gv::Organism::from_string(organism_str);

  std::vector<gv::GeneSet> sets = gv::ingest_dataset(dataset, source, organism);
  Services svc = make_services(opts, cfg, /*need_llm=*/true);

  gv::PipelineConfig pipe_cfg;
  pipe_cfg.model_id = cfg.llm_model;
  pipe_cfg.evidence_budget = cfg.evidence_budget;
  gv::Pipeline pipeline(svc.templates, llm_of(svc), *svc.hub, pipe_cfg);

  unsigned par = parallelism ? parallelism : cfg.parallelism;
  std::vector<gv::PipelineRecord> records = gv::run_batch(pipeline, sets, par);

  gv::RunManifest manifest;
  manifest.run_id = run_id.empty() ? gv::fresh_run_id() : run_id;
  manifest.created_at = gv::now_iso8601();
  manifest.templates_version = svc.templates.version();
  gv::MaskingPolicy policy = gv::apply_masking(source);
  manifest.config = cfg.snapshot();
  manifest.config["mode"] = opts.replay ? "replay" : "record";
  manifest.config["llm_backend"] = llm_of(svc).id();
  manifest.config["masking"] =
      gv::ojson{{"disabled_apis", policy.disabled_apis},
                {"disabled_libraries", policy.disabled_libraries}};
  manifest.dataset = gv::ojson{{"path", dataset},
                               {"source", gv::source_name(source)},
                               {"organism", organism.str()},
                               {"sets", sets.size()}};
  manifest.network_requests = svc.network_requests();

  std::filesystem::path dir = gv::persist_run(records, manifest, out_dir);
  std::cout << "run " << manifest.run_id << ": " << manifest.completed << " completed, "
            << manifest.failed << " failed, " << manifest.network_requests
            << " network requests\n"
            << dir.string() << "\n";

  if (manifest.failed > 0) {
    gv::Errc worst = gv::Errc::IoFailure;
    std::string cause;
    for (const auto& rec : records) {
      if (!rec.failure) continue;
      print_error("PipelineFailure",
                  rec.gene_set.id + " failed at " + rec.failure->stage + ": " +
                      rec.failure->cause);
      if (cause.empty()) {
        cause = rec.failure->cause;
        if (auto kind = errc_in_message(cause)) worst = *kind;
      }
    }
    return exit_code_for(worst);
  }
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& runs_dir,
             const std::string& background_path, const std::string& out_path, double beta,
             const std::string& embedder_kind) {
  gv::AppConfig cfg = effective_config(opts);
  std::vector<gv::PipelineRecord> records = gv::load_runs(runs_dir);

  std::unique_ptr<gv::HttpTransport> transport;
  std::unique_ptr<gv::Embedder> embedder;
  std::string kind = embedder_kind.empty() ? cfg.embedder : embedder_kind;
  if (kind == "fallback") {
    embedder = std::make_unique<gv::HashedEmbedder>();
  } else {
    transport = std::make_unique<gv::HttplibTransport>();
    embedder = std::make_unique<gv::RemoteEmbedder>(*transport, kind);
  }

  std::optional<gv::BackgroundSet> background;
  if (!background_path.empty())
    background = gv::BackgroundSet::load(background_path, *embedder);

  std::ostringstream table;
  table << "id\trouge1\trouge2\trougeL\tcosine\tpercentile\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& rec : records) {
    double r1 = nan, r2 = nan, rl = nan, cos = nan, pct = nan;
    const std::string& ref_text = rec.gene_set.reference_term;
    if (!ref_text.empty() && rec.p_final) {
      gv::TokenSequence ref = gv::tokenize_term(ref_text);
      gv::TokenSequence hyp = gv::tokenize_term(rec.p_final->text);
      if (!ref.tokens.empty() && !hyp.tokens.empty()) {
        r1 = gv::rouge_n(ref, hyp, 1);
        if (ref.size() >= 2) r2 = gv::rouge_n(ref, hyp, 2);
        rl = gv::rouge_l(ref, hyp, beta);
      }
      try {
        cos = gv::cosine_similarity(embedder->embed(rec.p_final->text),
                                    embedder->embed(ref_text));
        if (background)
          pct = gv::background_percentile(rec.p_final->text, ref_text, *background,
                                          *embedder);
      } catch (const gv::GvError&) {
        // degenerate embeddings stay as nan
      }
    }
    table << rec.gene_set.id << "\t" << fmt(r1) << "\t" << fmt(r2) << "\t" << fmt(rl) << "\t"
          << fmt(cos) << "\t" << fmt(pct) << "\n";
  }

  if (out_path.empty()) {
    std::cout << table.str();
  } else {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) gv::fail(gv::Errc::IoFailure, "cannot write " + out_path);
    out << table.str();
    std::cout << out_path << "\n";
  }
  return 0;
}

int cmd_enrich_test(const CommonOpts& opts, const std::string& runs_dir, bool no_synopsis,
                    double p_threshold) {
  gv::AppConfig cfg = effective_config(opts);
  std::vector<gv::PipelineRecord> records = gv::load_runs(runs_dir);
  Services svc = make_services(opts, cfg, /*need_llm=*/true);

  long matched = 0, tested = 0, flagged = 0;
  for (const auto& rec : records) {
    if (!rec.completed() || !rec.report_a) continue;
    try {
      gv::MatchReport rep = gv::enrichment_term_test(
          rec.gene_set, no_synopsis ? nullptr : &*rec.report_a, *svc.hub, llm_of(svc),
          svc.templates, p_threshold);
      matched += static_cast<long>(rep.matched.size());
      tested += static_cast<long>(rep.tested_terms.size());
      std::cout << rec.gene_set.id << "\t" << rep.matched.size() << "/"
                << rep.tested_terms.size() << "\t" << fmt(rep.proportion) << "\n";
    } catch (const gv::GvError& e) {
      if (e.kind() != gv::Errc::NoSignificantTerms) throw;
      ++flagged;
      std::cout << rec.gene_set.id << "\tno-significant-terms\n";
    }
  }
  double proportion = tested ? static_cast<double>(matched) / tested : 0.0;
  std::cout << "total\t" << matched << "/" << tested << "\t" << fmt(proportion) << "\n";
  if (flagged) std::cout << "flagged sets without significant terms: " << flagged << "\n";
  return 0;
}

int cmd_stats(const std::string& runs_dir) {
  std::vector<gv::PipelineRecord> records = gv::load_runs(runs_dir);
  std::cout << gv::render_stats(gv::tally_decisions(records));
  return 0;
}

int cmd_report(const std::string& runs_dir, const std::string& id) {
  std::vector<gv::PipelineRecord> records = gv::load_runs(runs_dir);
  for (const auto& rec : records) {
    if (rec.gene_set.id == id) {
      std::cout << gv::render_record_text(rec);
      return 0;
    }
  }
  gv::fail(gv::Errc::NotFound, "no record with id '" + id + "' under " + runs_dir);
}

int cmd_cache_status(const std::string& cache_dir, gv::CacheMode mode) {
  gv::ResponseCache cache(cache_dir, mode);
  long total = cache.entry_count();
  std::cout << "cache " << cache_dir << ": " << total << " entries\n";
  for (const char* api : {"gprofiler", "enrichr", "eutils"})
    std::cout << "  " << api << ": " << cache.entry_count(api) << "\n";
  if (mode == gv::CacheMode::Replay && total == 0)
    gv::fail(gv::Errc::ReplayMiss, "replay cache is empty: " + cache_dir);
  return 0;
}

/// Pre-warms the enrichment routes for a dataset so a later replay run needs
/// no network for them.
int cmd_cache_record(const CommonOpts& opts, const std::string& dataset,
                     const std::string& source_str, const std::string& organism_str) {
  if (dataset.empty()) return cmd_cache_status(effective_config(opts).cache_dir,
                                               gv::CacheMode::Record);
  gv::AppConfig cfg = effective_config(opts);
  gv::Source source = gv::source_from_string(source_str);
  gv::Organism organism = gv::Organism::from_string(organism_str);
  std::vector<gv::GeneSet> sets = gv::ingest_dataset(dataset, source, organism);

  CommonOpts record_opts = opts;
  record_opts.replay = false;
  Services svc = make_services(record_opts, cfg, /*need_llm=*/false);
  gv::MaskingPolicy policy = gv::apply_masking(source);

  for (const auto& gs : sets) {
    if (!policy.api_disabled("gprofiler"))
      svc.hub->gprofiler_top_terms(gs.genes, gs.organism, policy);
    svc.hub->enrichr_top_pathways(gs.genes, svc.hub->config().enrichr_libraries, policy);
  }
  std::cout << "warmed enrichment caches for " << sets.size() << " sets ("
            << svc.network_requests() << " network requests)\n";
  return 0;
}

int cmd_templates_export(const std::string& out_dir) {
  gv::TemplateSet set = gv::TemplateSet::builtin();
  std::filesystem::create_directories(out_dir);
  for (gv::Stage s : gv::kAllStages) {
    std::ofstream out(std::filesystem::path(out_dir) /
                          (std::string(gv::stage_name(s)) + ".txt"),
                      std::ios::trunc | std::ios::binary);
    out << set.at(s).text;
  }
  std::ofstream version(std::filesystem::path(out_dir) / "VERSION", std::ios::trunc);
  version << set.version() << "\n";
  std::cout << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gene-set naming pipeline with database-backed self-verification"};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 success, 1 usage, 2 data error, 3 backend error.\n"
      "Environment: GENEVERIFY_LLM_URL, GENEVERIFY_LLM_KEY, GENEVERIFY_CACHE_DIR,\n"
      "             GENEVERIFY_CONFIG, GENEVERIFY_FORBID_NETWORK");

  CommonOpts opts;
  app.add_option("--config", opts.config_path, "config file (JSON)");

  auto add_common = [&](CLI::App* cmd, bool with_modes = true) {
    cmd->add_option("--cache-dir", opts.cache_dir, "response cache directory");
    cmd->add_option("--templates", opts.templates_dir, "prompt template directory");
    cmd->add_option("--custom-db", opts.custom_db_dir, "custom gene-function dataset dir");
    cmd->add_option("--scripted-llm", opts.scripted_llm, "scripted completion store");
    cmd->add_option("--record-llm", opts.record_llm, "record completions into this store");
    cmd->add_option("--llm-url", opts.llm_url, "chat completion endpoint");
    cmd->add_option("--model", opts.model, "model name for live completions");
    cmd->add_option("--rate-limit", opts.rate_limit, "requests per second per host");
    if (with_modes) {
      auto* replay = cmd->add_flag("--replay", opts.replay, "cache misses are errors");
      cmd->add_flag("--record", opts.record, "fetch and store on cache miss (default)")
          ->excludes(replay);
    }
  };

  // run
  std::string dataset, source_str, organism_str = "human", out_dir = "runs", run_id;
  unsigned parallelism = 0;
  CLI::App* run = app.add_subcommand("run", "run the cascade over a dataset");
  run->add_option("--dataset", dataset, "tab-separated gene set file")->required();
  run->add_option("--source", source_str, "GO|NeST|MsigDB|Custom")->required();
  run->add_option("--organism", organism_str, "human|mouse|<label>");
  run->add_option("--out", out_dir, "output directory for run records");
  run->add_option("--run-id", run_id, "fixed run id (default: generated)");
  run->add_option("--parallelism", parallelism, "concurrent gene sets");
  add_common(run);

  // eval
  std::string runs_dir, background_path, eval_out, embedder_kind;
  double beta = 1.0;
  CLI::App* eval = app.add_subcommand("eval", "score generated names against references");
  eval->add_option("--runs", runs_dir, "run directory")->required();
  eval->add_option("--background", background_path, "background term file");
  eval->add_option("--out", eval_out, "write the table here instead of stdout");
  eval->add_option("--beta", beta, "ROUGE-L beta (default 1.0)");
  eval->add_option("--embedder", embedder_kind, "fallback | embedding-service URL");

  // enrich-test
  bool no_synopsis = false;
  double p_threshold = 0.05;
  CLI::App* enrich = app.add_subcommand("enrich-test",
                                        "exact-match test of summarized enrichment terms");
  enrich->add_option("--runs", runs_dir, "run directory")->required();
  enrich->add_flag("--no-synopsis", no_synopsis, "omit the verification-report synopsis");
  enrich->add_option("--p-threshold", p_threshold, "significance threshold (default 0.05)");
  add_common(enrich);

  // stats
  CLI::App* stats = app.add_subcommand("stats", "decision statistics over run records");
  stats->add_option("--runs", runs_dir, "run directory")->required();

  // report
  std::string report_id;
  CLI::App* report = app.add_subcommand("report", "render one record as text");
  report->add_option("--runs", runs_dir, "run directory")->required();
  report->add_option("--id", report_id, "gene set id")->required();

  // cache
  CLI::App* cache = app.add_subcommand("cache", "manage the response cache");
  cache->require_subcommand(1);
  std::string cache_dataset, cache_source = "Custom", cache_organism = "human";
  CLI::App* cache_record = cache->add_subcommand("record", "warm enrichment caches");
  cache_record->add_option("--dataset", cache_dataset, "dataset to warm (optional)");
  cache_record->add_option("--source", cache_source, "GO|NeST|MsigDB|Custom");
  cache_record->add_option("--organism", cache_organism, "human|mouse|<label>");
  add_common(cache_record, /*with_modes=*/false);
  CLI::App* cache_replay = cache->add_subcommand("replay", "validate the replay cache");
  add_common(cache_replay, /*with_modes=*/false);
  CLI::App* cache_purge = cache->add_subcommand("purge", "drop cache entries");
  std::string purge_api;
  cache_purge->add_option("--api", purge_api, "only this API");
  add_common(cache_purge, /*with_modes=*/false);

  // templates
  CLI::App* templates = app.add_subcommand("templates", "prompt template utilities");
  templates->require_subcommand(1);
  std::string templates_out = "config/prompts";
  CLI::App* templates_export = templates->add_subcommand("export", "write built-in templates");
  templates_export->add_option("--out", templates_out, "destination directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (run->parsed())
      return cmd_run(opts, dataset, source_str, organism_str, out_dir, run_id, parallelism);
    if (eval->parsed())
      return cmd_eval(opts, runs_dir, background_path, eval_out, beta, embedder_kind);
    if (enrich->parsed()) return cmd_enrich_test(opts, runs_dir, no_synopsis, p_threshold);
    if (stats->parsed()) return cmd_stats(runs_dir);
    if (report->parsed()) return cmd_report(runs_dir, report_id);
    if (cache->parsed()) {
      gv::AppConfig cfg = effective_config(opts);
      if (cache_record->parsed())
        return cmd_cache_record(opts, cache_dataset, cache_source, cache_organism);
      if (cache_replay->parsed())
        return cmd_cache_status(cfg.cache_dir, gv::CacheMode::Replay);
      gv::ResponseCache(cfg.cache_dir, gv::CacheMode::Record).purge(purge_api);
      std::cout << "purged " << (purge_api.empty() ? "all" : purge_api) << "\n";
      return 0;
    }
    if (templates->parsed()) return cmd_templates_export(templates_out);
  } catch (const gv::GvError& e) {
    print_error(gv::errc_name(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    print_error("Internal", e.what());
    return 2;
  }
  return 1;
}
