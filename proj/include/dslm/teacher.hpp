#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>

#include "dslm/records.hpp"

namespace dslm {

struct TeacherRequest {
    std::string system;
    std::string user;
    double temperature = 0.0;
    int max_tokens = 2048;

    ordered_json to_json() const;
    /// sha256 of the canonical request JSON; the replay-cache key.
    std::string hash() const;
};

/// Transport-level failure; eligible for retry.
class TeacherTransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TeacherClient {
public:
    virtual ~TeacherClient() = default;
    virtual std::string complete(const TeacherRequest& request) = 0;
};

/// Chat-completion style endpoint: POST {system, user, temperature,
/// max_tokens} and read {text}. The bearer token, if any, comes from the
/// environment variable named by `api_key_env`.
class HttpTeacherClient final : public TeacherClient {
public:
    HttpTeacherClient(std::string base_url, std::string path = "/v1/complete",
                      std::string api_key_env = "DSLM_TEACHER_API_KEY");
    std::string complete(const TeacherRequest& request) override;

private:
    std::string base_url_;
    std::string path_;
    std::string api_key_env_;
};

/// Request-hash -> response map persisted as one JSON object (sorted keys).
class ReplayCache {
public:
    static ReplayCache load(const std::string& path);
    void save(const std::string& path) const;

    const std::string* find(const std::string& hash) const;
    void put(const std::string& hash, std::string response);
    std::size_t size() const { return entries_.size(); }

private:
    std::map<std::string, std::string> entries_;
};

/// Offline teacher: answers only from a replay cache. A miss is a
/// ValidationError (the cache does not cover the run), never retried.
class ReplayTeacherClient final : public TeacherClient {
public:
    explicit ReplayTeacherClient(ReplayCache cache) : cache_(std::move(cache)) {}
    std::string complete(const TeacherRequest& request) override;

private:
    ReplayCache cache_;
};

/// Forwards to another client and records every response.
class RecordingTeacherClient final : public TeacherClient {
public:
    explicit RecordingTeacherClient(TeacherClient& inner) : inner_(inner) {}
    std::string complete(const TeacherRequest& request) override;
    ReplayCache cache() const;

private:
    TeacherClient& inner_;
    mutable std::mutex mu_;
    ReplayCache cache_;
};

/// Adapts a callable; used for mocks and scripted teachers.
class FunctionTeacherClient final : public TeacherClient {
public:
    explicit FunctionTeacherClient(std::function<std::string(const TeacherRequest&)> fn) : fn_(std::move(fn)) {}
    std::string complete(const TeacherRequest& request) override { return fn_(request); }

private:
    std::function<std::string(const TeacherRequest&)> fn_;
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_delay{200};
};

/// Retries TeacherTransportError with exponential backoff, then rethrows.
std::string complete_with_retry(TeacherClient& client, const TeacherRequest& request, const RetryPolicy& policy);

}  // namespace dslm
