#include "support/world.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "geneverify/evalkit.hpp"
#include "geneverify/storage.hpp"

namespace gvtest {

using gv::Source;

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// fixture tables
// ---------------------------------------------------------------------------

const std::vector<FixtureSet>& fixture_corpus() {
  static const std::vector<FixtureSet> sets = {
      {"NEST:101", Source::NeST, "RTK signaling", "ERBB2,ERBB4,FGFR2,FGFR4,HRAS,KRAS"},
      {"NEST:69", Source::NeST, "Protein nuclear transport", "KPNA1,KPNB1,RAN,TNPO1,XPO1"},
      {"NEST:61", Source::NeST, "Cullin-RIng ubiquitin ligase complex",
       "CUL1,CUL3,RBX1,SKP1,FBXW7"},
      {"NEST:8", Source::NeST, "Immune system", "CD3E,CD4,LCK,ZAP70,IL2RA"},
      {"GO:0035108", Source::GO, "limb morphogenesis", "TBX5,FGF8,SHH,GREM1,HOXD13"},
      {"GO:0015888", Source::GO, "thiamine transport", "SLC19A2,SLC19A3,SLC25A19"},
      {"GO:0032459", Source::GO, "regulation of protein oligomerization",
       "DNAJB6,HSPA1A,SNCA,PRNP"},
      {"MsigDB:69", Source::MsigDB, "Peroxisome", "PEX1,PEX5,PEX7,CAT,ACOX1,HSD17B4"},
      {"MsigDB:56", Source::MsigDB, "Reactive Oxygen Species Pathway",
       "SOD1,SOD2,GPX1,TXN,PRDX1"},
      {"MsigDB:12", Source::MsigDB, "Androgen Response", "AR,KLK3,KLK2,TMPRSS2,NKX3-1"},
  };
  return sets;
}

const FixtureSet& mouse_fixture() {
  static const FixtureSet set = {
      "mmu05022", Source::Custom, "Pathways of neurodegeneration - multiple diseases",
      "Ndufa10,Ndufs4,Cox5a,Cox6b1,Atp5pb,Sdhb,Gpx7,Atxn1l"};
  return set;
}

std::vector<std::string> evidence_vocabulary(const std::string& genes_csv) {
  static const std::map<std::string, std::vector<std::string>> vocab = {
      {"ERBB2,ERBB4,FGFR2,FGFR4,HRAS,KRAS",
       {"RTK signaling", "ERBB signaling pathway", "MAPK cascade",
        "fibroblast growth factor receptor signaling pathway", "Signaling by EGFR"}},
      {"KPNA1,KPNB1,RAN,TNPO1,XPO1",
       {"protein localization to nucleus", "nucleocytoplasmic transport", "nuclear import",
        "RNA transport", "NLS-bearing protein import into nucleus"}},
      {"CUL1,CUL3,RBX1,SKP1,FBXW7",
       {"ubiquitin mediated proteolysis", "protein ubiquitination",
        "Cullin-RING ubiquitin ligase complex",
        "SCF-dependent proteasomal protein catabolic process"}},
      {"CD3E,CD4,LCK,ZAP70,IL2RA",
       {"lymphocyte activation", "T cell receptor signaling pathway", "leukocyte activation",
        "adaptive immune response"}},
      {"TBX5,FGF8,SHH,GREM1,HOXD13",
       {"limb morphogenesis", "limb development", "embryonic limb morphogenesis",
        "appendage development", "BMP signaling pathway"}},
      {"SLC19A2,SLC19A3,SLC25A19",
       {"thiamine transport", "thiamine metabolic process", "vitamin transmembrane transport",
        "water-soluble vitamin metabolic process"}},
      {"DNAJB6,HSPA1A,SNCA,PRNP",
       {"regulation of protein oligomerization", "protein stabilization",
        "chaperone-mediated protein folding", "regulation of protein complex assembly"}},
      {"PEX1,PEX5,PEX7,CAT,ACOX1,HSD17B4",
       {"protein localization to peroxisome", "peroxisome organization",
        "fatty acid beta-oxidation", "Peroxisome", "protein import into peroxisome matrix"}},
      {"SOD1,SOD2,GPX1,TXN,PRDX1",
       {"response to oxidative stress", "cellular oxidant detoxification",
        "hydrogen peroxide catabolic process", "removal of superoxide radicals",
        "Detoxification of Reactive Oxygen Species"}},
      {"AR,KLK3,KLK2,TMPRSS2,NKX3-1",
       {"androgen receptor signaling pathway", "Androgen response",
        "prostate gland development", "regulation of hormone secretion"}},
      {"Ndufa10,Ndufs4,Cox5a,Cox6b1,Atp5pb,Sdhb,Gpx7,Atxn1l",
       {"Pathways of neurodegeneration - multiple diseases",
        "mitochondrial respiratory chain complex assembly",
        "respiratory electron transport chain", "oxidative phosphorylation",
        "Complex I biogenesis"}},
  };
  auto it = vocab.find(genes_csv);
  if (it != vocab.end()) return it->second;
  return {"cellular process", "metabolic process", "biological regulation"};
}

std::string gene_function_term(const std::string& symbol) {
  static const std::map<std::string, std::string> terms = {
      {"ERBB2", "ERBB signaling pathway"},
      {"ERBB4", "ERBB signaling pathway"},
      {"FGFR2", "fibroblast growth factor receptor signaling pathway"},
      {"FGFR4", "fibroblast growth factor receptor signaling pathway"},
      {"HRAS", "MAPK cascade"},
      {"KRAS", "MAPK cascade"},
      {"KPNA1", "nuclear import"},
      {"KPNB1", "nucleocytoplasmic transport"},
      {"RAN", "nucleocytoplasmic transport"},
      {"TNPO1", "nuclear import"},
      {"XPO1", "protein export from nucleus"},
      {"CUL1", "protein ubiquitination"},
      {"CUL3", "protein ubiquitination"},
      {"RBX1", "Cullin-RING ubiquitin ligase complex"},
      {"SKP1", "SCF ubiquitin ligase complex"},
      {"FBXW7", "protein ubiquitination"},
      {"CD3E", "T cell receptor signaling pathway"},
      {"CD4", "T cell receptor signaling pathway"},
      {"LCK", "T cell receptor signaling pathway"},
      {"ZAP70", "T cell receptor signaling pathway"},
      {"IL2RA", "lymphocyte activation"},
      {"TBX5", "limb development"},
      {"FGF8", "limb morphogenesis"},
      {"SHH", "limb morphogenesis"},
      {"GREM1", "BMP signaling pathway"},
      {"HOXD13", "limb development"},
      {"SLC19A2", "thiamine transport"},
      {"SLC19A3", "thiamine transport"},
      {"SLC25A19", "thiamine metabolic process"},
      {"DNAJB6", "chaperone-mediated protein folding"},
      {"HSPA1A", "protein stabilization"},
      {"SNCA", "regulation of protein oligomerization"},
      {"PRNP", "regulation of protein oligomerization"},
      {"PEX1", "protein import into peroxisome matrix"},
      {"PEX5", "protein localization to peroxisome"},
      {"PEX7", "protein localization to peroxisome"},
      {"CAT", "hydrogen peroxide catabolic process"},
      {"ACOX1", "fatty acid beta-oxidation"},
      {"HSD17B4", "fatty acid beta-oxidation"},
      {"SOD1", "removal of superoxide radicals"},
      {"SOD2", "removal of superoxide radicals"},
      {"GPX1", "cellular oxidant detoxification"},
      {"TXN", "cell redox homeostasis"},
      {"PRDX1", "cellular oxidant detoxification"},
      {"AR", "androgen receptor signaling pathway"},
      {"KLK3", "Androgen response"},
      {"KLK2", "Androgen response"},
      {"TMPRSS2", "androgen receptor signaling pathway"},
      {"NKX3-1", "prostate gland development"},
      {"Ndufa10", "Complex I"},
      {"Ndufs4", "Complex I"},
      {"Cox5a", "Complex IV"},
      {"Cox6b1", "Complex IV"},
      {"Atp5pb", "Complex V"},
      {"Sdhb", "respiratory electron transport chain"},
      {"Gpx7", "cellular oxidant detoxification"},
      {"Atxn1l", "Neurodegeneration"},
      {"TP53", "DNA damage response"},
      {"DDC", "catecholamine biosynthetic process"},
      {"TH", "dopamine biosynthetic process"},
      {"SCN2B", "voltage-gated sodium channel regulation"},
  };
  auto it = terms.find(symbol);
  if (it != terms.end()) return it->second;
  static const char* fallback[] = {"cellular process regulation", "metabolic process",
                                   "signal transduction", "gene expression regulation"};
  return fallback[fnv1a64(symbol) % 4];
}

namespace {

struct SetAuxInfo {
  std::string disease, domain, complex;
};

const std::map<std::string, SetAuxInfo>& set_aux() {
  static const std::map<std::string, SetAuxInfo> aux = {
      {"NEST:101", {"lung adenocarcinoma", "protein tyrosine kinase domain",
                    "ERBB receptor complex"}},
      {"NEST:69", {"developmental delay syndrome", "importin-beta N-terminal domain",
                   "nuclear pore transport complex"}},
      {"NEST:61", {"hereditary cancer syndrome", "cullin homology domain",
                   "SCF ubiquitin ligase complex"}},
      {"NEST:8", {"severe combined immunodeficiency",
                  "immunoreceptor tyrosine-based activation motif",
                  "T cell receptor complex"}},
      {"GO:0035108", {"split-hand foot malformation", "homeobox domain",
                      "SHH-GLI signaling complex"}},
      {"GO:0015888", {"thiamine-responsive megaloblastic anemia", "solute carrier domain",
                      "thiamine transporter complex"}},
      {"GO:0032459", {"neurodegenerative proteinopathy", "J domain", "chaperone complex"}},
      {"MsigDB:69", {"Zellweger spectrum disorder", "peroxisomal targeting signal domain",
                     "peroxisomal importomer complex"}},
      {"MsigDB:56", {"amyotrophic lateral sclerosis", "thioredoxin fold domain",
                     "antioxidant defense complex"}},
      {"MsigDB:12", {"prostate carcinoma", "serine protease domain",
                     "androgen receptor transcriptional complex"}},
      {"mmu05022", {"mitochondrial complex I deficiency", "NADH dehydrogenase subunit domain",
                    "mitochondrial respiratory chain complex I"}},
  };
  return aux;
}

std::string generation_name(const std::string& genes_csv) {
  static const std::map<std::string, std::string> names = {
      {"ERBB2,ERBB4,FGFR2,FGFR4,HRAS,KRAS", "RTK Signaling"},
      {"KPNA1,KPNB1,RAN,TNPO1,XPO1", "Telomere Maintenance and Nuclear Transport"},
      {"CUL1,CUL3,RBX1,SKP1,FBXW7", "Ubiquitin Mediated Proteolysis"},
      {"CD3E,CD4,LCK,ZAP70,IL2RA", "Lymphocyte Activation"},
      {"TBX5,FGF8,SHH,GREM1,HOXD13", "Limb Morphogenesis"},
      {"SLC19A2,SLC19A3,SLC25A19", "Vitamin Transport and Metabolism"},
      {"DNAJB6,HSPA1A,SNCA,PRNP", "Intracellular Protein Transport"},
      {"PEX1,PEX5,PEX7,CAT,ACOX1,HSD17B4", "Peroxisome Biogenesis"},
      {"SOD1,SOD2,GPX1,TXN,PRDX1", "Response to Oxidative Stress"},
      {"AR,KLK3,KLK2,TMPRSS2,NKX3-1", "Prostate Cancer Progression"},
      {"Ndufa10,Ndufs4,Cox5a,Cox6b1,Atp5pb,Sdhb,Gpx7,Atxn1l",
       "Oxidative Phosphorylation and Neurodegeneration"},
  };
  auto it = names.find(genes_csv);
  if (it != names.end()) return it->second;
  static const char* generic[] = {"Coordinated Stress Response", "Metabolic Homeostasis",
                                  "Chromatin Organization", "Vesicle Trafficking"};
  return generic[fnv1a64(genes_csv) % 4];
}

std::string revised_name(const std::string& current) {
  static const std::map<std::string, std::string> revisions = {
      {"Telomere Maintenance and Nuclear Transport", "Nucleocytoplasmic Transport"},
      {"Vitamin Transport and Metabolism", "Thiamine Transport and Metabolism"},
      {"Intracellular Protein Transport", "Regulation of Protein Oligomerization"},
      {"Peroxisome Biogenesis", "Peroxisome Protein"},
      {"Prostate Cancer Progression", "Androgen Receptor Signaling"},
      {"Oxidative Phosphorylation and Neurodegeneration",
       "Neurodegeneration and Respiratory Chain Complex"},
  };
  auto it = revisions.find(current);
  if (it != revisions.end()) return it->second;
  return current + " Regulation";
}

std::string csv_no_spaces(const std::string& genes_line) {
  std::string out;
  for (char c : genes_line)
    if (c != ' ') out.push_back(c);
  return out;
}

std::string extract_after(const std::string& text, const std::string& marker) {
  size_t pos = text.find(marker);
  if (pos == std::string::npos) return {};
  pos += marker.size();
  size_t end = text.find('\n', pos);
  return gv::trim(text.substr(pos, end == std::string::npos ? std::string::npos : end - pos));
}

std::string extract_block(const std::string& text, const std::string& begin,
                          const std::string& end_marker) {
  size_t pos = text.find(begin);
  if (pos == std::string::npos) return {};
  pos += begin.size();
  size_t end = text.find(end_marker, pos);
  return gv::trim(text.substr(pos, end == std::string::npos ? std::string::npos : end - pos));
}

const std::set<std::string>& stopwords() {
  static const std::set<std::string> words = {"and", "of",  "the", "a",  "an",  "to", "in",
                                              "for", "with", "by",  "via", "on", "is", "are"};
  return words;
}

std::vector<std::string> content_tokens(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& tok : gv::tokenize_term(text).tokens)
    if (!stopwords().count(tok)) out.push_back(tok);
  return out;
}

std::string narrative_for(const std::vector<std::string>& genes) {
  std::string out;
  for (const auto& g : genes) {
    if (!out.empty()) out += " ";
    out += g + " is involved in " + gene_function_term(g) + ".";
  }
  if (genes.size() >= 6)
    out += " The set as a whole is associated with coordinated cellular function.";
  return out;
}

std::vector<std::string> name_components(const std::string& name) {
  std::vector<std::string> parts;
  std::string rest = name;
  size_t pos;
  while ((pos = rest.find(" and ")) != std::string::npos) {
    parts.push_back(gv::trim(rest.substr(0, pos)));
    rest = rest.substr(pos + 5);
  }
  parts.push_back(gv::trim(rest));
  return parts;
}

std::string format_name_narrative(const std::string& name, const std::string& narrative) {
  return "Process: " + name + "\nNarrative: " + narrative + "\n";
}

}  // namespace

// ---------------------------------------------------------------------------
// FakeLlm
// ---------------------------------------------------------------------------

std::string FakeLlm::complete(const gv::CompletionRequest& req) {
  const std::string& p = req.prompt;
  switch (req.stage) {
    case gv::Stage::Generation: {
      std::string genes_line = extract_after(p, "Genes: ");
      std::string csv = csv_no_spaces(genes_line);
      std::vector<std::string> genes = gv::split(csv, ',');
      return format_name_narrative(generation_name(csv), narrative_for(genes));
    }

    case gv::Stage::ClaimsForProcess: {
      std::string genes_line = extract_after(p, "Genes: ");
      std::string name = extract_after(p, "Process name: ");
      std::string out = genes_line + " is involved in " + name + "\n";
      std::vector<std::string> parts = name_components(name);
      if (parts.size() > 1)
        for (const auto& part : parts)
          out += genes_line + " is involved in " + part + "\n";
      return out;
    }

    case gv::Stage::ClaimsForNarrative: {
      std::string narrative = extract_block(p, "Narrative: ", "\n\nClaims:");
      std::string out;
      for (const auto& sentence : gv::split(narrative, '.')) {
        std::string s = gv::trim(sentence);
        if (s.empty()) continue;
        bool has_pred = false;
        for (const auto& pred : gv::claim_predicates())
          if (s.find(pred) != std::string::npos) has_pred = true;
        if (has_pred) out += s + "\n";
      }
      return out;
    }

    case gv::Stage::Verdict: {
      std::string claim = extract_after(p, "Claim: ");
      std::string evidence = extract_block(p, "Evidence:\n", "\n\nDecision:");

      std::string term;
      size_t best = std::string::npos;
      size_t best_len = 0;
      for (const auto& pred : gv::claim_predicates()) {
        size_t pos = claim.find(pred);
        if (pos != std::string::npos && pos < best) {
          best = pos;
          best_len = pred.size();
        }
      }
      if (best != std::string::npos) term = claim.substr(best + best_len);

      std::set<std::string> available;
      for (const auto& tok : gv::tokenize_term(evidence).tokens) available.insert(tok);
      std::vector<std::string> wanted = content_tokens(term);

      size_t covered = 0;
      std::string missing;
      for (const auto& tok : wanted) {
        if (available.count(tok))
          ++covered;
        else
          missing += (missing.empty() ? "" : ", ") + tok;
      }
      if (wanted.empty())
        return "UNKNOWN - the claim does not name a functional term to check.";
      if (covered == wanted.size())
        return "SUPPORTED - the retrieved annotations cover every term of the claim.";
      if (covered == 0)
        return "REFUTED - the retrieved annotations do not mention " + missing + ".";
      return "PARTIALLY SUPPORTED - the annotations do not cover " + missing + ".";
    }

    case gv::Stage::Modification: {
      std::string name = extract_after(p, "Process name: ");
      std::string narrative = extract_block(p, "Narrative: ", "\n\nVerification report:");
      std::string report = extract_block(p, "Verification report:\n", "\n\nAnswer");
      bool revise = report.find("[Refuted]") != std::string::npos ||
                    report.find("[PartiallySupported]") != std::string::npos ||
                    report.find("[Unknown]") != std::string::npos;
      if (!revise) return format_name_narrative(name, narrative);
      return format_name_narrative(
          revised_name(name),
          narrative + " Statements not supported by the verification report were removed.");
    }

    case gv::Stage::Summarization: {
      std::string name = extract_after(p, "Process name: ");
      std::string narrative = extract_block(p, "Narrative: ", "\n\nVerification report:");
      return format_name_narrative(
          name, narrative + " In summary, the verified evidence is consistent with " + name +
                    " as the most prominent shared process.");
    }

    case gv::Stage::EnrichmentSummarize: {
      std::string genes_line = extract_after(p, "Genes: ");
      std::string synopsis = extract_block(p, "Function synopsis:\n", "\n\nTerms:");
      std::vector<std::string> vocab = evidence_vocabulary(csv_no_spaces(genes_line));
      std::string out;
      if (synopsis == "(none)") {
        out += vocab[0] + "\n";
        out += "Integrated Cellular Vitality Axis\n";
        out += "Dynamic Homeostatic Flux\n";
        out += "Global Metabolic Coherence\n";
      } else {
        for (size_t i = 0; i < 3 && i < vocab.size(); ++i) out += vocab[i] + "\n";
        out += "Integrated Cellular Vitality Axis\n";
      }
      return out;
    }
  }
  return "";
}

// ---------------------------------------------------------------------------
// FakeApiTransport
// ---------------------------------------------------------------------------

namespace {

std::string url_decode(const std::string& s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '+') {
      out.push_back(' ');
    } else if (s[i] == '%' && i + 2 < s.size()) {
      out.push_back(static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16)));
      i += 2;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

std::map<std::string, std::string> query_params(const std::string& url) {
  std::map<std::string, std::string> params;
  size_t q = url.find('?');
  if (q == std::string::npos) return params;
  for (const auto& pair : gv::split(url.substr(q + 1), '&')) {
    size_t eq = pair.find('=');
    if (eq == std::string::npos) continue;
    params[pair.substr(0, eq)] = url_decode(pair.substr(eq + 1));
  }
  return params;
}

const char* kGprofilerSources[] = {"GO:BP", "REAC", "KEGG", "WP",
                                   "CORUM", "HP",   "TF",   "MIRNA"};

gv::HttpResponse json_response(const gv::ojson& j) { return {200, j.dump()}; }

}  // namespace

gv::HttpResponse FakeApiTransport::post(const std::string& url, const std::string& body,
                                        const std::string&, const gv::HttpHeaders&) {
  count_attempt();

  if (url.find("/api/gost/profile/") != std::string::npos) {
    gv::ojson req = gv::ojson::parse(body);
    std::string csv;
    for (const auto& g : req.at("query")) csv += (csv.empty() ? "" : ",") + g.get<std::string>();

    gv::ojson result = gv::ojson::array();
    if (csv == "EMPTY1,EMPTY2") {
      // a set with no enrichment hits at all
    } else if (csv == "WEAK1,WEAK2") {
      // hits exist but none of them are significant
      result.push_back(gv::ojson{{"name", "faint association"},
                                 {"p_value", 0.5},
                                 {"source", "GO:BP"},
                                 {"description", ""}});
      result.push_back(gv::ojson{{"name", "weaker association"},
                                 {"p_value", 0.7},
                                 {"source", "KEGG"},
                                 {"description", ""}});
    } else if (csv == "T1,T2") {
      // seven terms with a duplicated p-value, for truncation/tie-break tests
      const std::pair<const char*, double> rows[] = {
          {"beta", 1e-5},  {"alpha", 1e-5},   {"gamma", 2e-5}, {"delta", 3e-5},
          {"epsilon", 4e-5}, {"zeta", 5e-5}, {"eta", 6e-5}};
      for (const auto& [name, pv] : rows)
        result.push_back(gv::ojson{{"name", name},
                                   {"p_value", pv},
                                   {"source", "GO:BP"},
                                   {"description", ""}});
    } else {
      std::vector<std::string> vocab = evidence_vocabulary(csv);
      for (size_t i = 0; i < vocab.size(); ++i) {
        result.push_back(gv::ojson{{"name", vocab[i]},
                                   {"p_value", 1e-6 * static_cast<double>(i + 1)},
                                   {"source", kGprofilerSources[i % 8]},
                                   {"description", "curated annotation for " + vocab[i]}});
      }
    }
    return json_response(gv::ojson{{"result", result},
                                   {"meta", gv::ojson{{"organism", req.at("organism")}}}});
  }

  if (url.find("/Enrichr/addList") != std::string::npos) {
    std::string marker = "name=\"list\"\r\n\r\n";
    size_t pos = body.find(marker);
    if (pos == std::string::npos) return {400, "missing list field"};
    pos += marker.size();
    size_t end = body.find("\r\n--", pos);
    std::string genes_nl = body.substr(pos, end - pos);
    std::string csv;
    for (const auto& g : gv::split(genes_nl, '\n')) csv += (csv.empty() ? "" : ",") + g;
    std::string list_id = std::to_string(100000 + fnv1a64(csv) % 900000);
    {
      std::lock_guard<std::mutex> lk(mu_);
      list_genes_[list_id] = csv;
    }
    char short_id[16];
    std::snprintf(short_id, sizeof(short_id), "sh%06llx",
                  static_cast<unsigned long long>(fnv1a64(csv) & 0xffffff));
    return json_response(
        gv::ojson{{"userListId", std::stol(list_id)}, {"shortId", short_id}});
  }

  return {404, "no such endpoint: " + url};
}

gv::HttpResponse FakeApiTransport::get(const std::string& url, const gv::HttpHeaders&) {
  count_attempt();
  auto params = query_params(url);

  if (url.find("/Enrichr/enrich") != std::string::npos) {
    std::string list_id = params["userListId"];
    std::string lib = params["backgroundType"];
    std::string csv;
    {
      std::lock_guard<std::mutex> lk(mu_);
      auto it = list_genes_.find(list_id);
      if (it == list_genes_.end()) return {200, gv::ojson{{"expired", true}}.dump()};
      csv = it->second;
    }
    static const std::map<std::string, int> lib_index = {{"KEGG_2021_Human", 0},
                                                         {"Reactome_2022", 1},
                                                         {"BioPlanet_2019", 2},
                                                         {"MsigDB_Hallmark_2020", 3}};
    int shift = lib_index.count(lib) ? lib_index.at(lib) : 0;
    std::vector<std::string> vocab = evidence_vocabulary(csv);
    std::vector<std::string> genes = gv::split(csv, ',');
    gv::ojson rows = gv::ojson::array();
    for (int j = 0; j < 3 && j < static_cast<int>(vocab.size()); ++j) {
      const std::string& term = vocab[(shift + j) % vocab.size()];
      double pv = 1e-4 * (j + 1) + 1e-6 * (shift + 1);
      rows.push_back(gv::ojson::array(
          {j + 1, term, pv, 1.5, 2.5, genes, pv * 2, 0.0, 0.0}));
    }
    return json_response(gv::ojson{{lib, rows}});
  }

  if (url.find("esearch.fcgi") != std::string::npos) {
    std::string db = params["db"];
    std::string term = params["term"];
    if (db == "gene") {
      size_t cut = term.find("[sym]");
      std::string symbol = gv::trim(term.substr(0, cut));
      if (symbol.find("ZZZZ") == 0)
        return json_response(
            gv::ojson{{"esearchresult", gv::ojson{{"idlist", gv::ojson::array()}}}});
      std::string uid = std::to_string(100000 + fnv1a64(symbol) % 800000);
      {
        std::lock_guard<std::mutex> lk(mu_);
        gene_ids_[uid] = symbol;
      }
      return json_response(gv::ojson{
          {"esearchresult", gv::ojson{{"count", "1"}, {"idlist", gv::ojson::array({uid})}}}});
    }
    // pubmed
    std::string pm1 = std::to_string(30000000 + fnv1a64(term) % 9999999);
    std::string pm2 = std::to_string(30000000 + fnv1a64(term + "#2") % 9999999);
    {
      std::lock_guard<std::mutex> lk(mu_);
      pubmed_ids_[pm1] = term;
      pubmed_ids_[pm2] = term;
    }
    return json_response(gv::ojson{
        {"esearchresult", gv::ojson{{"count", "2"}, {"idlist", gv::ojson::array({pm1, pm2})}}}});
  }

  if (url.find("esummary.fcgi") != std::string::npos) {
    std::string db = params["db"];
    if (db == "gene") {
      std::string uid = params["id"];
      std::string symbol;
      {
        std::lock_guard<std::mutex> lk(mu_);
        symbol = gene_ids_.count(uid) ? gene_ids_[uid] : "UNKNOWN";
      }
      std::string term = gene_function_term(symbol);
      std::string summary = symbol + " encodes a protein that functions in " + term +
                            ". Database annotations link " + symbol + " to " + term +
                            " and related processes.";
      return json_response(gv::ojson{
          {"result", gv::ojson{{uid, gv::ojson{{"uid", uid},
                                               {"name", symbol},
                                               {"description", term},
                                               {"summary", summary}}}}}});
    }
    // pubmed summaries: title reinforces the gene's tabled function, not the
    // claim text, so mismatched claims stay unsupported
    gv::ojson result = gv::ojson::object();
    for (const auto& uid : gv::split(params["id"], ',')) {
      std::string query;
      {
        std::lock_guard<std::mutex> lk(mu_);
        query = pubmed_ids_.count(uid) ? pubmed_ids_[uid] : "";
      }
      std::string symbol = gv::split(query, ' ').front();
      std::string title = "Functional characterization of " + symbol + " in " +
                          gene_function_term(symbol) + ".";
      result[uid] = gv::ojson{{"uid", uid}, {"title", title}};
    }
    return json_response(gv::ojson{{"result", result}});
  }

  return {404, "no such endpoint: " + url};
}

// ---------------------------------------------------------------------------
// FixtureWorld
// ---------------------------------------------------------------------------

FixtureWorld::FixtureWorld(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

std::filesystem::path FixtureWorld::dataset_file(Source source) const {
  return root_ / "datasets" / (gv::to_lower(gv::source_name(source)) + ".tsv");
}

std::filesystem::path FixtureWorld::mouse_dataset_file() const {
  return root_ / "datasets" / "mouse.tsv";
}

void FixtureWorld::build_files() {
  std::filesystem::create_directories(root_ / "datasets");
  std::filesystem::create_directories(customdb_dir());

  std::map<Source, std::ofstream> files;
  for (Source s : {Source::NeST, Source::GO, Source::MsigDB})
    files[s].open(dataset_file(s), std::ios::trunc);
  for (const auto& set : fixture_corpus())
    files[set.source] << set.id << "\t" << set.reference << "\t" << set.genes_csv << "\n";
  files.clear();

  {
    std::ofstream mouse(mouse_dataset_file(), std::ios::trunc);
    const FixtureSet& m = mouse_fixture();
    mouse << m.id << "\t" << m.reference << "\t" << m.genes_csv << "\n";
  }

  std::ofstream disease(customdb_dir() / "gene_disease.tsv", std::ios::trunc);
  std::ofstream domain(customdb_dir() / "gene_domain.tsv", std::ios::trunc);
  std::ofstream ppi(customdb_dir() / "ppi.tsv", std::ios::trunc);
  std::ofstream complex_f(customdb_dir() / "gene_complex.tsv", std::ios::trunc);

  std::vector<FixtureSet> all = fixture_corpus();
  all.push_back(mouse_fixture());
  for (const auto& set : all) {
    const SetAuxInfo& aux = set_aux().at(set.id);
    std::vector<std::string> genes = gv::split(set.genes_csv, ',');
    for (const auto& g : genes) {
      disease << g << "\tOMIM:" << 600000 + fnv1a64(g + aux.disease) % 10000 << "\t"
              << aux.disease << "\t0.8\n";
      domain << g << "\tPF" << 10000 + fnv1a64(g + aux.domain) % 900 << "\t" << aux.domain
             << "\t0.7\n";
      complex_f << g << "\tCORUM:" << 1000 + fnv1a64(g + aux.complex) % 9000 << "\t"
                << aux.complex << "\t0.9\n";
      int rank = 0;
      for (const auto& partner : genes) {
        if (partner == g) continue;
        ppi << g << "\tPPI:" << g << "-" << partner << "\t" << g << " interacts with "
            << partner << "\t" << 0.95 - 0.01 * rank << "\n";
        ++rank;
      }
    }
  }

  std::ofstream bg(background_file(), std::ios::trunc);
  std::set<std::string> terms;
  for (const auto& set : all) {
    terms.insert(set.reference);
    for (const auto& t : evidence_vocabulary(set.genes_csv)) terms.insert(t);
  }
  for (const char* filler :
       {"cell cycle regulation", "DNA repair", "apoptotic signaling pathway",
        "autophagy", "glycolysis", "chromatin remodeling", "RNA splicing",
        "mitochondrial translation", "cell adhesion", "angiogenesis",
        "cilium assembly", "synaptic transmission", "insulin signaling",
        "inflammatory response", "heart development"})
    terms.insert(filler);
  for (const auto& t : terms) bg << t << "\n";
}

std::vector<gv::GeneSet> FixtureWorld::sets_for(Source source) const {
  return gv::ingest_dataset(dataset_file(source), source, gv::Organism::human());
}

std::vector<gv::PipelineRecord> FixtureWorld::run_dataset(
    const std::filesystem::path& dataset, Source source, gv::Organism organism, bool record) {
  std::vector<gv::GeneSet> sets = gv::ingest_dataset(dataset, source, organism);

  gv::HubConfig hub_cfg;
  hub_cfg.rate_limit_per_s = 1e6;  // synthetic upstream, no pacing needed
  gv::PipelineConfig pipe_cfg;
  pipe_cfg.model_id = "gpt-4-fixture";
  gv::TemplateSet templates = gv::TemplateSet::builtin();
  gv::CustomStore custom(customdb_dir());

  if (record) {
    FakeLlm llm;
    gv::RecordingBackend backend(llm, store_dir());
    FakeApiTransport transport;
    gv::ResponseCache cache(cache_dir(), gv::CacheMode::Record);
    gv::DbHub hub(cache, &transport, hub_cfg, std::move(custom));
    gv::Pipeline pipeline(templates, backend, hub, pipe_cfg);
    return gv::run_batch(pipeline, sets, 2);
  }
  gv::ScriptedBackend backend(store_dir());
  gv::ResponseCache cache(cache_dir(), gv::CacheMode::Replay);
  gv::DbHub hub(cache, nullptr, hub_cfg, std::move(custom));
  gv::Pipeline pipeline(templates, backend, hub, pipe_cfg);
  return gv::run_batch(pipeline, sets, 2);
}

void FixtureWorld::record_all() {
  build_files();
  std::vector<gv::PipelineRecord> msigdb_records;
  for (Source s : {Source::NeST, Source::GO, Source::MsigDB}) {
    auto records = run_dataset(dataset_file(s), s, gv::Organism::human(), true);
    if (s == Source::MsigDB) msigdb_records = std::move(records);
  }
  run_dataset(mouse_dataset_file(), Source::Custom, gv::Organism::mouse(), true);

  // record the enrichment-term test completions (with and without synopsis)
  FakeLlm llm;
  gv::RecordingBackend backend(llm, store_dir());
  FakeApiTransport transport;
  gv::HubConfig hub_cfg;
  hub_cfg.rate_limit_per_s = 1e6;
  gv::ResponseCache cache(cache_dir(), gv::CacheMode::Record);
  gv::DbHub hub(cache, &transport, hub_cfg, gv::CustomStore(customdb_dir()));
  gv::TemplateSet templates = gv::TemplateSet::builtin();
  for (const auto& rec : msigdb_records) {
    if (!rec.report_a) continue;
    gv::enrichment_term_test(rec.gene_set, &*rec.report_a, hub, backend, templates);
    gv::enrichment_term_test(rec.gene_set, nullptr, hub, backend, templates);
  }
}

std::vector<gv::PipelineRecord> FixtureWorld::replay_source(Source source) {
  return run_dataset(dataset_file(source), source, gv::Organism::human(), false);
}

std::vector<gv::PipelineRecord> FixtureWorld::replay_mouse() {
  return run_dataset(mouse_dataset_file(), Source::Custom, gv::Organism::mouse(), false);
}

std::vector<gv::PipelineRecord> FixtureWorld::replay_corpus() {
  std::vector<gv::PipelineRecord> all;
  for (Source s : {Source::NeST, Source::GO, Source::MsigDB}) {
    auto records = replay_source(s);
    all.insert(all.end(), records.begin(), records.end());
  }
  return all;
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

FixtureWorld& shared_world() {
  static FixtureWorld world = [] {
    std::filesystem::path root = std::filesystem::temp_directory_path() /
                                 ("gv_world_" + std::to_string(getpid()));
    std::filesystem::remove_all(root);
    FixtureWorld w(root);
    w.record_all();
    return w;
  }();
  return world;
}

int run_command(const std::string& cmd, std::string* out, std::string* err) {
  static std::atomic<int> counter{0};
  int n = counter.fetch_add(1);
  std::filesystem::path tmp = std::filesystem::temp_directory_path();
  std::filesystem::path so =
      tmp / ("gv_cmd_" + std::to_string(getpid()) + "_" + std::to_string(n) + ".out");
  std::filesystem::path se =
      tmp / ("gv_cmd_" + std::to_string(getpid()) + "_" + std::to_string(n) + ".err");
  std::string full = cmd + " >" + so.string() + " 2>" + se.string();
  int rc = std::system(full.c_str());

  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
  };
  if (out) *out = slurp(so);
  if (err) *err = slurp(se);
  std::filesystem::remove(so);
  std::filesystem::remove(se);
  if (WIFEXITED(rc)) return WEXITSTATUS(rc);
  return -1;
}

std::string records_file_modulo_timestamps(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::string line, out;
  while (std::getline(in, line)) {
    if (gv::trim(line).empty()) continue;
    gv::ojson j = gv::ojson::parse(line);
    j.erase("timestamps");
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace gvtest
