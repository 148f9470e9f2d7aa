#pragma once

#include <stdexcept>
#include <string>

namespace geneverify {

// Every failure the library raises carries one of these kinds so callers
// (and the CLI exit-code mapping) can dispatch without string matching.
enum class Errc {
  // dataset / core model
  MalformedLine,
  DuplicateSymbol,
  EmptyGeneList,
  IngestFailed,
  IoFailure,
  // llm gateway
  MissingBinding,
  BackendUnavailable,
  CredentialMissing,
  MalformedResponse,
  UnparseableOutput,
  // database hub
  ApiMasked,
  Transport,
  RateLimited,
  SessionExpired,
  NotFound,
  DatasetMissing,
  ReplayMiss,
  // pipeline
  EmptyPass,
  Precondition,
  // evaluation
  RefTooShort,
  EmptyInput,
  ZeroVector,
  BackendMismatch,
  EmptyBackground,
  NoSignificantTerms,
};

inline const char* errc_name(Errc e) {
  switch (e) {
    case Errc::MalformedLine: return "MalformedLine";
    case Errc::DuplicateSymbol: return "DuplicateSymbol";
    case Errc::EmptyGeneList: return "EmptyGeneList";
    case Errc::IngestFailed: return "IngestFailed";
    case Errc::IoFailure: return "IoFailure";
    case Errc::MissingBinding: return "MissingBinding";
    case Errc::BackendUnavailable: return "BackendUnavailable";
    case Errc::CredentialMissing: return "CredentialMissing";
    case Errc::MalformedResponse: return "MalformedResponse";
    case Errc::UnparseableOutput: return "UnparseableOutput";
    case Errc::ApiMasked: return "ApiMasked";
    case Errc::Transport: return "Transport";
    case Errc::RateLimited: return "RateLimited";
    case Errc::SessionExpired: return "SessionExpired";
    case Errc::NotFound: return "NotFound";
    case Errc::DatasetMissing: return "DatasetMissing";
    case Errc::ReplayMiss: return "ReplayMiss";
    case Errc::EmptyPass: return "EmptyPass";
    case Errc::Precondition: return "Precondition";
    case Errc::RefTooShort: return "RefTooShort";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::BackendMismatch: return "BackendMismatch";
    case Errc::EmptyBackground: return "EmptyBackground";
    case Errc::NoSignificantTerms: return "NoSignificantTerms";
  }
  return "Unknown";
}

class GvError : public std::runtime_error {
 public:
  GvError(Errc kind, const std::string& msg)
      : std::runtime_error(std::string(errc_name(kind)) + ": " + msg), kind_(kind) {}

  Errc kind() const noexcept { return kind_; }

 private:
  Errc kind_;
};

[[noreturn]] inline void fail(Errc kind, const std::string& msg) {
  throw GvError(kind, msg);
}

}  // namespace geneverify
