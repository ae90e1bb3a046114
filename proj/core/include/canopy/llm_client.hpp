#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "canopy/cohabitation.hpp"

namespace canopy::cohab {

struct LlmEndpoint {
  std::string url;    // e.g. https://api.openai.com/v1/chat/completions
  std::string model;
  std::string token;  // sent as a bearer token when non-empty
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::chrono::seconds timeout{600};
};

/// Reads [llm] url/model/attempts/backoff_ms/timeout_s from a TOML file;
/// the token comes from the COHAB_LLM_TOKEN environment variable.
LlmEndpoint load_endpoint_config(const std::filesystem::path& toml_path);

struct FetchResult {
  CohabitationMatrix matrix;
  std::string raw_reply;
  int retries = 0;
  std::vector<std::string> retry_log;
};

/// POSTs a chat-completion request carrying the rendered prompt, retrying
/// transient failures (connection errors, 408, 429, 5xx) with doubling
/// backoff. The assistant message is written verbatim to `raw_reply_path`
/// before it is parsed, so a reply that fails validation is still kept.
FetchResult fetch_matrix(const PromptParams& params, const LlmEndpoint& endpoint,
                         const std::filesystem::path& raw_reply_path);

}  // namespace canopy::cohab
