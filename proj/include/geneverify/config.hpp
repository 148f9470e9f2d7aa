#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "geneverify/core.hpp"
#include "geneverify/errors.hpp"

namespace geneverify {

/// Runtime configuration: a JSON config file, overridden by environment
/// variables, overridden again by CLI flags (applied by the CLI itself).
struct AppConfig {
  std::string llm_url;
  std::string llm_model = "gpt-4";
  std::string llm_key;
  std::string cache_dir = "cache";
  std::string templates_dir;   // empty -> built-in templates
  std::string custom_db_dir;   // empty -> custom API unavailable
  std::string embedder = "fallback";  // "fallback" or an embedding-service URL
  double rate_limit = 3.0;
  unsigned parallelism = 0;  // 0 -> hardware concurrency
  size_t evidence_budget = 4000;

  static AppConfig load(const std::filesystem::path& file = {}) {
    AppConfig cfg;
    std::filesystem::path path = file;
    if (path.empty()) {
      if (const char* env = std::getenv("GENEVERIFY_CONFIG")) path = env;
    }
    if (!path.empty()) {
      std::ifstream in(path);
      if (!in) fail(Errc::IoFailure, "cannot open config file " + path.string());
      ojson j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        fail(Errc::IoFailure, "config parse error: " + std::string(e.what()));
      }
      cfg.llm_url = j.value("llm_url", cfg.llm_url);
      cfg.llm_model = j.value("llm_model", cfg.llm_model);
      cfg.llm_key = j.value("llm_key", cfg.llm_key);
      cfg.cache_dir = j.value("cache_dir", cfg.cache_dir);
      cfg.templates_dir = j.value("templates_dir", cfg.templates_dir);
      cfg.custom_db_dir = j.value("custom_db_dir", cfg.custom_db_dir);
      cfg.embedder = j.value("embedder", cfg.embedder);
      cfg.rate_limit = j.value("rate_limit", cfg.rate_limit);
      cfg.parallelism = j.value("parallelism", cfg.parallelism);
      cfg.evidence_budget = j.value("evidence_budget", cfg.evidence_budget);
    }
    if (const char* env = std::getenv("GENEVERIFY_LLM_URL")) cfg.llm_url = env;
    if (const char* env = std::getenv("GENEVERIFY_LLM_KEY")) cfg.llm_key = env;
    if (const char* env = std::getenv("GENEVERIFY_CACHE_DIR")) cfg.cache_dir = env;
    return cfg;
  }

  ojson snapshot() const {
    // credential deliberately excluded
    return ojson{{"llm_url", llm_url},
                 {"llm_model", llm_model},
                 {"cache_dir", cache_dir},
                 {"templates_dir", templates_dir},
                 {"custom_db_dir", custom_db_dir},
                 {"embedder", embedder},
                 {"rate_limit", rate_limit},
                 {"parallelism", parallelism},
                 {"evidence_budget", evidence_budget}};
  }
};

}  // namespace geneverify
