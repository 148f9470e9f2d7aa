#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <optional>
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

// ---------------------------------------------------------------------------
// domain types
// ---------------------------------------------------------------------------

struct EnrichmentTerm {
  std::string name;
  std::string source_db;
  double p_value = 1.0;  // in (0, 1]
  std::string description;
};

inline bool enrichment_term_less(const EnrichmentTerm& a, const EnrichmentTerm& b) {
  if (a.p_value != b.p_value) return a.p_value < b.p_value;
  return a.name < b.name;  // deterministic tie-break
}

enum class FunctionSource { EUtilsGene, PubMed, GeneDisease, GeneDomain, PPI, GeneComplex };

inline const char* function_source_name(FunctionSource s) {
  switch (s) {
    case FunctionSource::EUtilsGene: return "eutils-gene";
    case FunctionSource::PubMed: return "pubmed";
    case FunctionSource::GeneDisease: return "gene-disease";
    case FunctionSource::GeneDomain: return "gene-domain";
    case FunctionSource::PPI: return "ppi";
    case FunctionSource::GeneComplex: return "gene-complex";
  }
  return "eutils-gene";
}

struct GeneFunctionRecord {
  std::string symbol;
  Organism organism = Organism::human();
  std::string summary_text;
  FunctionSource source = FunctionSource::EUtilsGene;
  std::vector<std::string> ids;
};

// ---------------------------------------------------------------------------
// masking
// ---------------------------------------------------------------------------

struct MaskingPolicy {
  std::set<std::string> disabled_apis;       // e.g. {"gprofiler"}
  std::set<std::string> disabled_libraries;  // per-API sub-databases

  bool api_disabled(const std::string& api) const { return disabled_apis.count(api) > 0; }
  bool library_disabled(const std::string& lib) const {
    return disabled_libraries.count(lib) > 0;
  }
};

/// A database never verifies gene sets drawn from itself: GO sets lose the
/// whole g:Profiler API, MsigDB sets lose the MsigDB hallmark library inside
/// Enrichr. NeST and custom sets are unrestricted.
inline MaskingPolicy apply_masking(Source source) {
  MaskingPolicy policy;
  switch (source) {
    case Source::GO:
      policy.disabled_apis.insert("gprofiler");
      break;
    case Source::MsigDB:
      policy.disabled_libraries.insert("MsigDB_Hallmark_2020");
      break;
    case Source::NeST:
    case Source::Custom:
      break;
  }
  return policy;
}

// ---------------------------------------------------------------------------
// response cache (record / replay)
// ---------------------------------------------------------------------------

enum class CacheMode { Record, Replay };

/// On-disk response store: `<root>/<api>/<digest>.bin` plus an append-only
/// index. Identical in-flight misses are deduplicated to a single upstream
/// fetch; in replay mode a miss is an error rather than a network call.
class ResponseCache {
 public:
  ResponseCache(std::filesystem::path root, CacheMode mode)
      : root_(std::move(root)), mode_(mode) {
    std::filesystem::create_directories(root_);
  }

  CacheMode mode() const { return mode_; }
  const std::filesystem::path& root() const { return root_; }

  static std::string key_digest(const std::string& api, const std::string& endpoint,
                                const std::string& query) {
    return sha256_hex(api + "\n" + endpoint + "\n" + query);
  }

  struct Result {
    std::string bytes;
    bool hit = false;
  };

  template <typename FetchFn>
  Result fetch(const std::string& api, const std::string& endpoint,
               const std::string& query, FetchFn&& fetch_fn, bool force_refresh = false) {
    std::string digest = key_digest(api, endpoint, query);
    std::filesystem::path file = root_ / api / (digest + ".bin");

    std::shared_future<std::string> fut;
    bool fetcher = false;
    {
      std::unique_lock<std::mutex> lk(mu_);
      if (!force_refresh && std::filesystem::exists(file))
        return Result{read_file(file), true};
      if (mode_ == CacheMode::Replay)
        fail(Errc::ReplayMiss, api + "/" + digest + " (" + endpoint + ")");
      auto it = inflight_.find(digest);
      if (it != inflight_.end()) {
        fut = it->second;
      } else {
        auto prom = std::make_shared<std::promise<std::string>>();
        fut = prom->get_future().share();
        inflight_.emplace(digest, fut);
        promises_[digest] = prom;
        fetcher = true;
      }
    }

    if (!fetcher) return Result{fut.get(), false};

    try {
      std::string bytes = fetch_fn();
      store(api, endpoint, query, digest, bytes);
      settle(digest, bytes, nullptr);
      return Result{bytes, false};
    } catch (...) {
      settle(digest, {}, std::current_exception());
      throw;
    }
  }

  void purge(const std::string& api = {}) {
    std::unique_lock<std::mutex> lk(mu_);
    if (api.empty()) {
      std::filesystem::remove_all(root_);
      std::filesystem::create_directories(root_);
    } else {
      std::filesystem::remove_all(root_ / api);
    }
  }

  long entry_count(const std::string& api = {}) const {
    long n = 0;
    std::filesystem::path base = api.empty() ? root_ : root_ / api;
    if (!std::filesystem::exists(base)) return 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(base))
      if (e.is_regular_file() && e.path().extension() == ".bin") ++n;
    return n;
  }

 private:
  static std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(Errc::IoFailure, "cannot read cache entry " + p.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
  }

  void store(const std::string& api, const std::string& endpoint, const std::string& query,
             const std::string& digest, const std::string& bytes) {
    std::filesystem::path dir = root_ / api;
    std::filesystem::create_directories(dir);
    std::filesystem::path tmp = dir / (digest + ".tmp");
    std::filesystem::path file = dir / (digest + ".bin");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) fail(Errc::IoFailure, "cannot write cache entry " + file.string());
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, file);

    std::unique_lock<std::mutex> lk(mu_);
    std::ofstream idx(root_ / "index.jsonl", std::ios::app);
    idx << ojson{{"digest", digest},
                 {"api", api},
                 {"endpoint", endpoint},
                 {"query", query},
                 {"fetched_at", now_iso8601()}}
               .dump()
        << "\n";
  }

  void settle(const std::string& digest, std::string bytes, std::exception_ptr err) {
    std::shared_ptr<std::promise<std::string>> prom;
    {
      std::unique_lock<std::mutex> lk(mu_);
      prom = promises_[digest];
      promises_.erase(digest);
      inflight_.erase(digest);
    }
    if (!prom) return;
    if (err)
      prom->set_exception(err);
    else
      prom->set_value(std::move(bytes));
  }

  std::filesystem::path root_;
  CacheMode mode_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_future<std::string>> inflight_;
  std::map<std::string, std::shared_ptr<std::promise<std::string>>> promises_;
};

// ---------------------------------------------------------------------------
// local datasets behind the custom gene-function API
// ---------------------------------------------------------------------------

enum class CustomKind { GeneDisease, GeneDomain, PPI, GeneComplex };

inline const char* custom_kind_name(CustomKind k) {
  switch (k) {
    case CustomKind::GeneDisease: return "gene_disease";
    case CustomKind::GeneDomain: return "gene_domain";
    case CustomKind::PPI: return "ppi";
    case CustomKind::GeneComplex: return "gene_complex";
  }
  return "ppi";
}

constexpr CustomKind kAllCustomKinds[] = {CustomKind::GeneDisease, CustomKind::GeneDomain,
                                          CustomKind::PPI, CustomKind::GeneComplex};

/// Flat-file gene-function datasets, one TSV per kind with lines
/// `symbol \t id \t name \t score` (score may be empty). Lookups return the
/// top rows by dataset-native score.
class CustomStore {
 public:
  CustomStore() = default;

  explicit CustomStore(const std::filesystem::path& dir, Organism organism = Organism::human())
      : organism_(organism) {
    for (CustomKind k : kAllCustomKinds) {
      std::filesystem::path file = dir / (std::string(custom_kind_name(k)) + ".tsv");
      if (!std::filesystem::exists(file)) continue;
      std::ifstream in(file);
      std::string line;
      size_t line_no = 0;
      auto& table = tables_[k];
      while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> fields = split(line, '\t');
        if (fields.size() < 3)
          fail(Errc::MalformedLine, file.string() + ":" + std::to_string(line_no) +
                                        ": expected symbol/id/name[/score]");
        Row row;
        row.id = trim(fields[1]);
        row.name = trim(fields[2]);
        if (fields.size() > 3 && !trim(fields[3]).empty()) {
          row.score = std::stod(trim(fields[3]));
          row.has_score = true;
        }
        table[to_lower(trim(fields[0]))].push_back(std::move(row));
      }
    }
  }

  bool has(CustomKind k) const { return tables_.count(k) > 0; }

  std::vector<GeneFunctionRecord> lookup(CustomKind kind, const std::string& symbol,
                                         size_t top_k = 10) const {
    auto tbl = tables_.find(kind);
    if (tbl == tables_.end())
      fail(Errc::DatasetMissing, custom_kind_name(kind));
    auto rows = tbl->second.find(to_lower(symbol));
    if (rows == tbl->second.end()) return {};

    std::vector<Row> sorted = rows->second;
    std::sort(sorted.begin(), sorted.end(), [](const Row& a, const Row& b) {
      if (a.has_score != b.has_score) return a.has_score;  // scored rows first
      if (a.has_score && a.score != b.score) return a.score > b.score;
      return a.id < b.id;
    });
    if (sorted.size() > top_k) sorted.resize(top_k);

    std::vector<GeneFunctionRecord> out;
    for (const Row& r : sorted) {
      GeneFunctionRecord rec;
      rec.symbol = symbol;
      rec.organism = organism_;
      rec.summary_text = r.name;
      rec.ids = {r.id};
      switch (kind) {
        case CustomKind::GeneDisease: rec.source = FunctionSource::GeneDisease; break;
        case CustomKind::GeneDomain: rec.source = FunctionSource::GeneDomain; break;
        case CustomKind::PPI: rec.source = FunctionSource::PPI; break;
        case CustomKind::GeneComplex: rec.source = FunctionSource::GeneComplex; break;
      }
      out.push_back(std::move(rec));
    }
    return out;
  }

 private:
  struct Row {
    std::string id, name;
    double score = 0.0;
    bool has_score = false;
  };
  Organism organism_ = Organism::human();
  std::map<CustomKind, std::map<std::string, std::vector<Row>>> tables_;
};

// ---------------------------------------------------------------------------
// hub
// ---------------------------------------------------------------------------

struct HubConfig {
  std::string gprofiler_url = "https://biit.cs.ut.ee";
  std::string enrichr_url = "https://maayanlab.cloud";
  std::string eutils_url = "https://eutils.ncbi.nlm.nih.gov";
  std::vector<std::string> gprofiler_sources = {"GO",  "KEGG",  "REAC",  "WP",
                                                "TF",  "MIRNA", "CORUM", "HP"};
  std::vector<std::string> enrichr_libraries = {"KEGG_2021_Human", "Reactome_2022",
                                                "BioPlanet_2019", "MsigDB_Hallmark_2020"};
  size_t top_k = 5;
  size_t pubmed_top_k = 5;
  double rate_limit_per_s = 3.0;
  int max_retries = 2;
  int backoff_base_ms = 500;
};

/// Facade over the four gene-knowledge APIs. All traffic flows through the
/// response cache; callers pass a Transcript to get a per-call log.
class DbHub {
 public:
  DbHub(ResponseCache& cache, HttpTransport* transport, HubConfig config = {},
        CustomStore custom = {})
      : cache_(cache),
        transport_(transport),
        cfg_(std::move(config)),
        custom_(std::move(custom)),
        limiter_(cfg_.rate_limit_per_s) {}

  const HubConfig& config() const { return cfg_; }

  std::vector<EnrichmentTerm> gprofiler_top_terms(const std::vector<std::string>& genes,
                                                  const Organism& organism,
                                                  const MaskingPolicy& policy,
                                                  Transcript* log = nullptr) {
    if (policy.api_disabled("gprofiler"))
      fail(Errc::ApiMasked, "g:Profiler is masked for this gene set");
    std::vector<EnrichmentTerm> terms = gprofiler_all_terms(genes, organism, log);
    if (terms.size() > cfg_.top_k) terms.resize(cfg_.top_k);
    return terms;
  }

  /// Ground-truth route for the enrichment-term test: every term at or below
  /// the significance threshold, unmasked and untruncated.
  std::vector<EnrichmentTerm> gprofiler_significant_terms(
      const std::vector<std::string>& genes, const Organism& organism, double p_max,
      Transcript* log = nullptr) {
    std::vector<EnrichmentTerm> terms = gprofiler_all_terms(genes, organism, log);
    std::erase_if(terms, [p_max](const EnrichmentTerm& t) { return t.p_value > p_max; });
    return terms;
  }

  std::map<std::string, std::vector<EnrichmentTerm>> enrichr_top_pathways(
      const std::vector<std::string>& genes, const std::vector<std::string>& libraries,
      const MaskingPolicy& policy, Transcript* log = nullptr) {
    if (policy.api_disabled("enrichr")) fail(Errc::ApiMasked, "Enrichr is masked");
    if (genes.empty()) fail(Errc::Precondition, "empty gene list");

    const std::set<std::string> known(cfg_.enrichr_libraries.begin(),
                                      cfg_.enrichr_libraries.end());
    std::vector<std::string> libs;
    for (const auto& lib : libraries) {
      if (!known.count(lib))
        fail(Errc::Precondition, "unknown Enrichr library '" + lib + "'");
      if (!policy.library_disabled(lib)) libs.push_back(lib);
    }

    std::map<std::string, std::vector<EnrichmentTerm>> out;
    if (libs.empty()) return out;

    std::string list_id = enrichr_add_list(genes, false, log);
    for (const auto& lib : libs) {
      std::string endpoint = "/Enrichr/enrich";
      std::string query = "GET " + endpoint + "?userListId=" + list_id +
                          "&backgroundType=" + lib;
      std::string url = cfg_.enrichr_url + endpoint + "?userListId=" + list_id +
                        "&backgroundType=" + url_encode(lib);
      auto res = cached_get("enrichr", endpoint, query, url);

      ojson parsed;
      bool expired = false;
      try {
        parsed = ojson::parse(res.bytes);
        if (!parsed.contains(lib)) expired = true;
        if (parsed.is_object() && parsed.value("expired", false)) expired = true;
      } catch (const nlohmann::json::exception&) {
        expired = true;
      }
      if (expired) {
        // the submitted list aged out server-side; resubmit once
        list_id = enrichr_add_list(genes, true, log);
        query = "GET " + endpoint + "?userListId=" + list_id + "&backgroundType=" + lib;
        url = cfg_.enrichr_url + endpoint + "?userListId=" + list_id +
              "&backgroundType=" + url_encode(lib);
        res = cached_get("enrichr", endpoint, query, url);
        try {
          parsed = ojson::parse(res.bytes);
        } catch (const nlohmann::json::exception&) {
          fail(Errc::SessionExpired, "Enrichr list expired twice for library " + lib);
        }
        if (!parsed.contains(lib))
          fail(Errc::SessionExpired, "Enrichr list expired twice for library " + lib);
      }
      record_call(log, "enrichr", endpoint, query, res);

      std::vector<EnrichmentTerm> terms;
      for (const auto& row : parsed.at(lib)) {
        if (!row.is_array() || row.size() < 3) continue;
        EnrichmentTerm t;
        t.name = row.at(1).get<std::string>();
        t.p_value = row.at(2).get<double>();
        t.source_db = lib;
        if (t.p_value <= 0.0 || t.p_value > 1.0) continue;
        terms.push_back(std::move(t));
      }
      std::sort(terms.begin(), terms.end(), enrichment_term_less);
      if (terms.size() > cfg_.top_k) terms.resize(cfg_.top_k);
      out[lib] = std::move(terms);
    }
    return out;
  }

  GeneFunctionRecord eutils_gene_summary(const std::string& symbol, const Organism& organism,
                                         Transcript* log = nullptr) {
    if (trim(symbol).empty()) fail(Errc::Precondition, "empty gene symbol");
    std::string term = symbol + "[sym] AND " + eutils_organism(organism) + "[orgn]";
    std::string endpoint = "/entrez/eutils/esearch.fcgi";
    std::string query = "GET " + endpoint + "?db=gene&term=" + term;
    std::string url = cfg_.eutils_url + endpoint + "?db=gene&retmode=json&term=" +
                      url_encode(term);
    auto search = cached_get("eutils", endpoint, query, url);
    record_call(log, "eutils", endpoint, query, search);

    std::vector<std::string> ids = parse_esearch_ids(search.bytes);
    if (ids.empty()) fail(Errc::NotFound, symbol);
    const std::string& id = ids.front();

    std::string sum_endpoint = "/entrez/eutils/esummary.fcgi";
    std::string sum_query = "GET " + sum_endpoint + "?db=gene&id=" + id;
    std::string sum_url =
        cfg_.eutils_url + sum_endpoint + "?db=gene&retmode=json&id=" + url_encode(id);
    auto summary = cached_get("eutils", sum_endpoint, sum_query, sum_url);
    record_call(log, "eutils", sum_endpoint, sum_query, summary);

    GeneFunctionRecord rec;
    rec.symbol = symbol;
    rec.organism = organism;
    rec.source = FunctionSource::EUtilsGene;
    rec.ids = {id};
    try {
      ojson j = ojson::parse(summary.bytes);
      const ojson& entry = j.at("result").at(id);
      rec.summary_text = entry.value("summary", std::string());
      if (rec.summary_text.empty()) rec.summary_text = entry.value("description", std::string());
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::MalformedResponse, std::string("esummary: ") + e.what());
    }
    return rec;
  }

  std::vector<GeneFunctionRecord> eutils_pubmed_snippets(const std::string& raw_query,
                                                         Transcript* log = nullptr) {
    std::string q = trim(raw_query);
    if (q.empty()) fail(Errc::Precondition, "empty PubMed query");
    std::string endpoint = "/entrez/eutils/esearch.fcgi";
    std::string query = "GET " + endpoint + "?db=pubmed&term=" + q;
    std::string url = cfg_.eutils_url + endpoint + "?db=pubmed&retmode=json&sort=relevance" +
                      "&retmax=" + std::to_string(cfg_.pubmed_top_k) +
                      "&term=" + url_encode(q);
    auto search = cached_get("eutils", endpoint, query, url);
    record_call(log, "eutils", endpoint, query, search);

    std::vector<std::string> ids = parse_esearch_ids(search.bytes);
    if (ids.empty()) return {};
    if (ids.size() > cfg_.pubmed_top_k) ids.resize(cfg_.pubmed_top_k);

    std::string joined;
    for (size_t i = 0; i < ids.size(); ++i) joined += (i ? "," : "") + ids[i];
    std::string sum_endpoint = "/entrez/eutils/esummary.fcgi";
    std::string sum_query = "GET " + sum_endpoint + "?db=pubmed&id=" + joined;
    std::string sum_url =
        cfg_.eutils_url + sum_endpoint + "?db=pubmed&retmode=json&id=" + url_encode(joined);
    auto summary = cached_get("eutils", sum_endpoint, sum_query, sum_url);
    record_call(log, "eutils", sum_endpoint, sum_query, summary);

    std::vector<GeneFunctionRecord> out;
    try {
      ojson j = ojson::parse(summary.bytes);
      for (const auto& id : ids) {
        const ojson& result = j.at("result");
        if (!result.contains(id)) continue;
        GeneFunctionRecord rec;
        rec.source = FunctionSource::PubMed;
        rec.ids = {id};
        rec.summary_text = result.at(id).value("title", std::string());
        out.push_back(std::move(rec));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::MalformedResponse, std::string("pubmed esummary: ") + e.what());
    }
    return out;
  }

  std::vector<GeneFunctionRecord> custom_lookup(CustomKind kind, const std::string& symbol,
                                                Transcript* log = nullptr) {
    auto records = custom_.lookup(kind, symbol);
    if (log) {
      std::string names;
      for (const auto& r : records) names += (names.empty() ? "" : "; ") + r.summary_text;
      log->add(TranscriptEntry{"api", "custom", custom_kind_name(kind),
                               std::string(custom_kind_name(kind)) + ":" + symbol, names,
                               true});
    }
    return records;
  }

  const CustomStore& custom_store() const { return custom_; }

 private:
  struct CachedResult {
    std::string bytes;
    bool hit = false;
  };

  std::vector<EnrichmentTerm> gprofiler_all_terms(const std::vector<std::string>& genes,
                                                  const Organism& organism, Transcript* log) {
    if (genes.empty()) fail(Errc::Precondition, "empty gene list");
    ojson body{{"organism", gprofiler_organism(organism)},
               {"query", genes},
               {"sources", cfg_.gprofiler_sources},
               {"all_results", false}};
    std::string endpoint = "/api/gost/profile/";
    std::string payload = body.dump();
    std::string query = "POST " + endpoint + " " + payload;
    auto res = cached_post("gprofiler", endpoint, query, cfg_.gprofiler_url + endpoint,
                           payload, "application/json");
    record_call(log, "gprofiler", endpoint, query, res);

    std::vector<EnrichmentTerm> terms;
    try {
      ojson j = ojson::parse(res.bytes);
      for (const auto& row : j.at("result")) {
        EnrichmentTerm t;
        t.name = row.at("name").get<std::string>();
        t.p_value = row.at("p_value").get<double>();
        t.source_db = row.value("source", std::string("g:Profiler"));
        t.description = row.value("description", std::string());
        if (t.p_value <= 0.0 || t.p_value > 1.0) continue;
        terms.push_back(std::move(t));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::MalformedResponse, std::string("g:Profiler response: ") + e.what());
    }
    std::sort(terms.begin(), terms.end(), enrichment_term_less);
    return terms;
  }

  std::string enrichr_add_list(const std::vector<std::string>& genes, bool force_refresh,
                               Transcript* log) {
    std::string joined_nl, joined_comma;
    for (size_t i = 0; i < genes.size(); ++i) {
      joined_nl += (i ? "\n" : "") + genes[i];
      joined_comma += (i ? "," : "") + genes[i];
    }
    // fixed boundary keeps the request byte-stable for the cache key
    static const char* boundary = "----geneverify";
    std::string body;
    body += "--" + std::string(boundary) + "\r\n";
    body += "Content-Disposition: form-data; name=\"list\"\r\n\r\n";
    body += joined_nl + "\r\n";
    body += "--" + std::string(boundary) + "\r\n";
    body += "Content-Disposition: form-data; name=\"description\"\r\n\r\n";
    body += "geneverify\r\n";
    body += "--" + std::string(boundary) + "--\r\n";

    std::string endpoint = "/Enrichr/addList";
    std::string query = "POST " + endpoint + " " + joined_comma;
    auto res = cached_post("enrichr", endpoint, query, cfg_.enrichr_url + endpoint, body,
                           std::string("multipart/form-data; boundary=") + boundary,
                           force_refresh);
    record_call(log, "enrichr", endpoint, query, res);
    try {
      ojson j = ojson::parse(res.bytes);
      auto& id = j.at("userListId");
      return id.is_string() ? id.get<std::string>() : std::to_string(id.get<long>());
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::MalformedResponse, std::string("Enrichr addList: ") + e.what());
    }
  }

  static std::vector<std::string> parse_esearch_ids(const std::string& body) {
    try {
      ojson j = ojson::parse(body);
      std::vector<std::string> ids;
      for (const auto& id : j.at("esearchresult").at("idlist"))
        ids.push_back(id.get<std::string>());
      return ids;
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::MalformedResponse, std::string("esearch: ") + e.what());
    }
  }

  static std::string gprofiler_organism(const Organism& o) {
    switch (o.kind) {
      case Organism::Kind::Human: return "hsapiens";
      case Organism::Kind::Mouse: return "mmusculus";
      case Organism::Kind::Other: return to_lower(o.label);
    }
    return "hsapiens";
  }

  static std::string eutils_organism(const Organism& o) {
    switch (o.kind) {
      case Organism::Kind::Human: return "Homo sapiens";
      case Organism::Kind::Mouse: return "Mus musculus";
      case Organism::Kind::Other: return o.label;
    }
    return "Homo sapiens";
  }

  CachedResult cached_get(const std::string& api, const std::string& endpoint,
                          const std::string& query, const std::string& url) {
    auto r = cache_.fetch(api, endpoint, query, [&] { return transfer(url, {}, {}); });
    return CachedResult{r.bytes, r.hit};
  }

  CachedResult cached_post(const std::string& api, const std::string& endpoint,
                           const std::string& query, const std::string& url,
                           const std::string& body, const std::string& content_type,
                           bool force_refresh = false) {
    auto r = cache_.fetch(
        api, endpoint, query, [&] { return transfer(url, body, content_type); },
        force_refresh);
    return CachedResult{r.bytes, r.hit};
  }

  /// One upstream exchange under the per-host rate limit, with bounded
  /// retries on 429, 5xx and transport faults. Other 4xx fail immediately.
  std::string transfer(const std::string& url, const std::string& body,
                       const std::string& content_type) {
    if (!transport_) fail(Errc::Transport, "no transport configured (replay-only hub)");
    std::string host = host_of_url(url);
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(
            static_cast<long>(cfg_.backoff_base_ms) * (1L << (attempt - 1))));
      HttpResponse res;
      try {
        limiter_.acquire(host);
        res = content_type.empty() ? transport_->get(url)
                                   : transport_->post(url, body, content_type);
      } catch (const GvError& e) {
        if (e.kind() != Errc::Transport || attempt == cfg_.max_retries) throw;
        continue;
      }
      if (res.status == 200) return res.body;
      if (res.status != 429 && res.status < 500)
        fail(Errc::Transport, "status " + std::to_string(res.status) + " from " + url);
      if (attempt == cfg_.max_retries) {
        if (res.status == 429) fail(Errc::RateLimited, "429 from " + url + " after retries");
        fail(Errc::Transport, "status " + std::to_string(res.status) + " from " + url);
      }
    }
    fail(Errc::Transport, "unreachable retry state for " + url);
  }

  void record_call(Transcript* log, const std::string& api, const std::string& endpoint,
                   const std::string& query, const CachedResult& res) {
    if (!log) return;
    log->add(TranscriptEntry{"api", api, endpoint, query, res.bytes, res.hit});
  }

  ResponseCache& cache_;
  HttpTransport* transport_;
  HubConfig cfg_;
  CustomStore custom_;
  RateLimiter limiter_;
};

}  // namespace geneverify
