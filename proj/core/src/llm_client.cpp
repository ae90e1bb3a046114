#include "canopy/llm_client.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <toml.hpp>

#include "canopy/error.hpp"
#include "csv.hpp"

namespace canopy::cohab {

using nlohmann::json;

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    fail(ErrorKind::Validation, "endpoint URL needs a scheme: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

bool transient_status(int status) {
  return status == 408 || status == 429 || (status >= 500 && status <= 599);
}

std::string assistant_content(const std::string& body) {
  try {
    auto j = json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, std::string("unexpected LLM response shape: ") + e.what());
  }
}

}  // namespace

LlmEndpoint load_endpoint_config(const std::filesystem::path& toml_path) {
  toml::table tbl;
  try {
    tbl = toml::parse_file(toml_path.string());
  } catch (const toml::parse_error& e) {
    fail(ErrorKind::Validation, toml_path.string() + ": " + std::string(e.description()));
  }
  LlmEndpoint ep;
  const auto llm = tbl["llm"];
  ep.url = llm["url"].value_or(std::string());
  ep.model = llm["model"].value_or(std::string());
  ep.attempts = static_cast<int>(llm["attempts"].value_or(3));
  ep.initial_backoff = std::chrono::milliseconds(llm["backoff_ms"].value_or(1000));
  ep.timeout = std::chrono::seconds(llm["timeout_s"].value_or(600));
  if (ep.url.empty()) fail(ErrorKind::Validation, toml_path.string() + ": [llm] url is required");
  if (ep.model.empty())
    fail(ErrorKind::Validation, toml_path.string() + ": [llm] model is required");
  if (const char* tok = std::getenv("COHAB_LLM_TOKEN")) ep.token = tok;
  return ep;
}

FetchResult fetch_matrix(const PromptParams& params, const LlmEndpoint& endpoint,
                         const std::filesystem::path& raw_reply_path) {
  if (endpoint.attempts < 1) fail(ErrorKind::Validation, "attempts must be at least 1");
  const auto prompt = render_prompt(params);
  const auto url = split_url(endpoint.url);

  json request;
  request["model"] = endpoint.model;
  request["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});
  const auto payload = request.dump();

  httplib::Client client(url.origin);
  client.set_connection_timeout(std::chrono::seconds(30));
  client.set_read_timeout(endpoint.timeout);
  client.set_write_timeout(std::chrono::seconds(60));
  httplib::Headers headers;
  if (!endpoint.token.empty()) headers.emplace("Authorization", "Bearer " + endpoint.token);

  FetchResult result;
  auto backoff = endpoint.initial_backoff;
  std::string body;
  for (int attempt = 1;; ++attempt) {
    auto res = client.Post(url.path, headers, payload, "application/json");
    std::string problem;
    if (!res) {
      problem = "connection error: " + httplib::to_string(res.error());
    } else if (res->status >= 200 && res->status < 300) {
      body = res->body;
      break;
    } else if (!transient_status(res->status)) {
      fail(ErrorKind::Io, "LLM endpoint returned HTTP " + std::to_string(res->status) + ": " +
                              res->body.substr(0, 300));
    } else {
      problem = "HTTP " + std::to_string(res->status);
    }
    if (attempt >= endpoint.attempts)
      fail(ErrorKind::Io, "LLM request failed after " + std::to_string(attempt) +
                              " attempt(s); last error: " + problem);
    result.retry_log.push_back("attempt " + std::to_string(attempt) + ": " + problem);
    ++result.retries;
    std::this_thread::sleep_for(backoff);
    backoff *= 2;
  }

  result.raw_reply = assistant_content(body);
  if (raw_reply_path.has_parent_path())
    std::filesystem::create_directories(raw_reply_path.parent_path());
  csv::write_file(raw_reply_path, result.raw_reply);
  result.matrix = parse_matrix_csv(extract_csv_section(result.raw_reply));
  result.matrix.radius_m = params.distance_m;
  return result;
}

}  // namespace canopy::cohab
