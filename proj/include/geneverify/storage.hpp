#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "geneverify/core.hpp"
#include "geneverify/errors.hpp"

namespace geneverify {

// ---------------------------------------------------------------------------
// dataset ingestion
// ---------------------------------------------------------------------------

/// All-or-nothing load of a dataset file (one tab-separated set per line,
/// blank lines skipped). Per-line failures are aggregated with line numbers.
inline std::vector<GeneSet> ingest_dataset(const std::filesystem::path& path, Source source,
                                           Organism organism) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoFailure, "cannot open dataset " + path.string());
  std::vector<GeneSet> sets;
  std::vector<std::string> problems;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      sets.push_back(parse_gene_set_line(line, source, organism));
    } catch (const GvError& e) {
      problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = path.string() + " (" + std::to_string(problems.size()) + " bad lines)";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(Errc::IngestFailed, msg);
  }
  return sets;
}

// ---------------------------------------------------------------------------
// run persistence
// ---------------------------------------------------------------------------

struct RunManifest {
  std::string run_id;
  std::string created_at;
  std::string templates_version;
  ojson config;   // snapshot of the effective configuration
  ojson dataset;  // path/source/organism/set count
  long record_count = 0;
  long completed = 0;
  long failed = 0;
  long network_requests = 0;  // transport-level attempts during the run
};

inline void to_json(ojson& j, const RunManifest& m) {
  j = ojson{{"run_id", m.run_id},
            {"created_at", m.created_at},
            {"templates_version", m.templates_version},
            {"config", m.config},
            {"dataset", m.dataset},
            {"record_count", m.record_count},
            {"completed", m.completed},
            {"failed", m.failed},
            {"network_requests", m.network_requests}};
}

inline void from_json(const ojson& j, RunManifest& m) {
  m.run_id = j.at("run_id").get<std::string>();
  m.created_at = j.at("created_at").get<std::string>();
  m.templates_version = j.at("templates_version").get<std::string>();
  m.config = j.at("config");
  m.dataset = j.at("dataset");
  m.record_count = j.at("record_count").get<long>();
  m.completed = j.at("completed").get<long>();
  m.failed = j.at("failed").get<long>();
  m.network_requests = j.value("network_requests", 0L);
}

inline std::string fresh_run_id() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  std::random_device rd;
  char suffix[8];
  std::snprintf(suffix, sizeof(suffix), "%04x", rd() & 0xffff);
  return std::string("run-") + stamp + "-" + suffix;
}

/// Writes `<out_dir>/<run_id>/manifest.json` and `records.jsonl` (one JSON
/// document per record, stable field order). Returns the run directory.
inline std::filesystem::path persist_run(const std::vector<PipelineRecord>& records,
                                         RunManifest& manifest,
                                         const std::filesystem::path& out_dir) {
  manifest.record_count = static_cast<long>(records.size());
  manifest.completed = manifest.failed = 0;
  for (const auto& r : records) (r.completed() ? manifest.completed : manifest.failed)++;

  std::filesystem::path dir = out_dir / manifest.run_id;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(Errc::IoFailure, "cannot create run dir " + dir.string());

  {
    std::ofstream out(dir / "records.jsonl", std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoFailure, "cannot write records in " + dir.string());
    for (const auto& r : records) {
      ojson j = r;
      out << j.dump() << "\n";
    }
  }
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoFailure, "cannot write manifest in " + dir.string());
    ojson j = manifest;
    out << j.dump(2) << "\n";
  }
  return dir;
}

inline std::vector<PipelineRecord> load_records_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(Errc::IoFailure, "cannot open records file " + file.string());
  std::vector<PipelineRecord> records;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      records.push_back(ojson::parse(line).get<PipelineRecord>());
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::IoFailure,
           file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

/// Loads every run under `dir`: either `dir` itself is a run directory or it
/// contains one subdirectory per run.
inline std::vector<PipelineRecord> load_runs(const std::filesystem::path& dir) {
  std::vector<PipelineRecord> all;
  if (std::filesystem::exists(dir / "records.jsonl")) {
    return load_records_file(dir / "records.jsonl");
  }
  std::vector<std::filesystem::path> run_dirs;
  if (!std::filesystem::exists(dir)) fail(Errc::IoFailure, "no such run dir " + dir.string());
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "records.jsonl"))
      run_dirs.push_back(e.path());
  std::sort(run_dirs.begin(), run_dirs.end());
  for (const auto& rd : run_dirs) {
    auto recs = load_records_file(rd / "records.jsonl");
    all.insert(all.end(), recs.begin(), recs.end());
  }
  return all;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

inline std::string render_stats(const DecisionStats& st) {
  std::ostringstream out;
  long total = st.total();
  auto pct = [&](long n) {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(n) / static_cast<double>(total);
  };
  out << "records:              " << st.record_count << "\n";
  out << "claims:               " << total << "\n";
  char buf[64];
  auto line = [&](const char* label, long n) {
    std::snprintf(buf, sizeof(buf), "%-20s %8ld  (%.2f%%)", label, n, pct(n));
    out << buf << "\n";
  };
  line("supported:", st.supported);
  line("partially supported:", st.partially_supported);
  line("refuted:", st.refuted);
  line("unknown:", st.unknown);
  line("not verified:", st.not_verified);
  std::snprintf(buf, sizeof(buf), "%.4f", st.fraction_verified);
  out << "fraction verified:    " << buf << "\n";
  out << "revision candidates:  " << st.revision_candidates << "\n";
  out << "revised:              " << st.revised_count << "\n";
  return out.str();
}

inline std::string render_record_text(const PipelineRecord& rec) {
  std::ostringstream out;
  out << "gene set " << rec.gene_set.id << " [" << source_name(rec.gene_set.source) << ", "
      << rec.gene_set.organism.str() << "]\n";
  if (!rec.gene_set.reference_term.empty())
    out << "reference term: " << rec.gene_set.reference_term << "\n";
  out << "genes: ";
  for (size_t i = 0; i < rec.gene_set.genes.size(); ++i)
    out << (i ? ", " : "") << rec.gene_set.genes[i];
  out << "\nstate: " << stage_state_name(rec.state) << "\n";
  if (rec.failure)
    out << "failure: " << rec.failure->stage << " - " << rec.failure->cause << "\n";

  auto name_line = [&](const char* label, const std::optional<ProcessName>& p) {
    if (p) out << label << ": " << p->text << "\n";
  };
  name_line("initial process name", rec.p_ini);
  name_line("modified process name", rec.p_mod);
  name_line("final process name", rec.p_final);
  if (rec.a_final)
    out << "\nfinal narrative:\n" << rec.a_final->text << "\n";
  else if (rec.a_ini)
    out << "\ninitial narrative:\n" << rec.a_ini->text << "\n";

  auto report_block = [&](const char* label, const std::optional<VerificationReport>& rep) {
    if (!rep) return;
    out << "\n" << label << " (" << rep->verified_claims.size() << " claims)\n";
    size_t idx = 1;
    for (const auto& vc : rep->verified_claims) {
      out << "  " << idx++ << ". [" << decision_name(vc.decision) << "] "
          << vc.claim.raw_text << "\n";
      if (!vc.rationale.empty()) out << "     rationale: " << vc.rationale << "\n";
      for (const auto& ev : vc.evidence)
        out << "     evidence: " << ev.database << ": " << ev.excerpt << "\n";
    }
    out << "  api calls:";
    for (const auto& [api, n] : rep->api_calls) out << " " << api << "=" << n;
    out << "\n";
  };
  report_block("process-name verification report", rec.report_p);
  report_block("narrative verification report", rec.report_a);
  return out.str();
}

}  // namespace geneverify
