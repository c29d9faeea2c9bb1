#include "dslm/teacher.hpp"

#include <cstdlib>
#include <thread>

#include "httplib.h"

namespace dslm {

ordered_json TeacherRequest::to_json() const {
    ordered_json j;
    j["system"] = system;
    j["user"] = user;
    j["temperature"] = temperature;
    j["max_tokens"] = max_tokens;
    return j;
}

std::string TeacherRequest::hash() const { return sha256_hex(to_json().dump()); }

HttpTeacherClient::HttpTeacherClient(std::string base_url, std::string path, std::string api_key_env)
    : base_url_(std::move(base_url)), path_(std::move(path)), api_key_env_(std::move(api_key_env)) {}

std::string HttpTeacherClient::complete(const TeacherRequest& request) {
    httplib::Client client(base_url_);
    client.set_read_timeout(300, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(api_key_env_.c_str()); key != nullptr && *key != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    auto res = client.Post(path_, headers, request.to_json().dump(), "application/json");
    if (!res) throw TeacherTransportError("teacher endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status >= 500 || res->status == 429) {
        throw TeacherTransportError("teacher endpoint returned HTTP " + std::to_string(res->status));
    }
    if (res->status != 200) throw std::runtime_error("teacher endpoint rejected request: HTTP " + std::to_string(res->status));
    try {
        return json::parse(res->body).at("text").get<std::string>();
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("teacher endpoint returned malformed JSON: ") + e.what());
    }
}

ReplayCache ReplayCache::load(const std::string& path) {
    ReplayCache cache;
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError("replay cache '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw ValidationError("replay cache '" + path + "' must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) cache.entries_[it.key()] = it.value().get<std::string>();
    return cache;
}

void ReplayCache::save(const std::string& path) const {
    json j = json::object();
    for (const auto& [k, v] : entries_) j[k] = v;
    write_file(path, j.dump(2) + "\n");
}

const std::string* ReplayCache::find(const std::string& hash) const {
    auto it = entries_.find(hash);
    return it == entries_.end() ? nullptr : &it->second;
}

void ReplayCache::put(const std::string& hash, std::string response) { entries_[hash] = std::move(response); }

std::string ReplayTeacherClient::complete(const TeacherRequest& request) {
    const auto h = request.hash();
    if (const auto* hit = cache_.find(h)) return *hit;
    throw ValidationError("replay cache has no response for request " + h);
}

std::string RecordingTeacherClient::complete(const TeacherRequest& request) {
    std::string response = inner_.complete(request);
    std::lock_guard lock(mu_);
    cache_.put(request.hash(), response);
    return response;
}

ReplayCache RecordingTeacherClient::cache() const {
    std::lock_guard lock(mu_);
    return cache_;
}

std::string complete_with_retry(TeacherClient& client, const TeacherRequest& request, const RetryPolicy& policy) {
    const int attempts = std::max(1, policy.attempts);
    for (int attempt = 1;; ++attempt) {
        try {
            return client.complete(request);
        } catch (const TeacherTransportError&) {
            if (attempt >= attempts) throw;
            std::this_thread::sleep_for(policy.base_delay * (1 << (attempt - 1)));
        }
    }
}

}  // namespace dslm
