#include "dslm/chunking.hpp"

#include <cctype>
#include <cstring>

#include "dslm/common.hpp"
#include "dslm/tokenizer.hpp"

namespace dslm {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }
bool is_closer(char c) { return is_terminal(c) || c == '"' || c == '\'' || c == ')'; }

std::vector<std::string_view> split_units(std::string_view s, int level) {
    std::vector<std::string_view> out;
    if (level == 0) {
        for (auto piece : pretokenize(s)) out.push_back(piece);
    } else if (level == 1) {
        std::size_t i = 0;
        while (i < s.size()) {
            std::size_t len = 1;
            const auto c = static_cast<unsigned char>(s[i]);
            if (c >= 0xF0) {
                len = 4;
            } else if (c >= 0xE0) {
                len = 3;
            } else if (c >= 0xC0) {
                len = 2;
            }
            len = std::min(len, s.size() - i);
            out.push_back(s.substr(i, len));
            i += len;
        }
    } else {
        for (std::size_t i = 0; i < s.size(); ++i) out.push_back(s.substr(i, 1));
    }
    return out;
}

// Greedy split of an oversized segment; returns pieces each within budget.
std::vector<std::string> hard_split(std::string_view seg, std::size_t max_units, const UnitCounter& count, int level) {
    std::vector<std::string> out;
    std::string current;
    for (auto unit : split_units(seg, level)) {
        std::string candidate = current + std::string(unit);
        if (count(candidate) <= max_units) {
            current = std::move(candidate);
            continue;
        }
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
        if (count(unit) <= max_units || level == 2) {
            current = std::string(unit);
        } else {
            auto parts = hard_split(unit, max_units, count, level + 1);
            current = std::move(parts.back());
            parts.pop_back();
            for (auto& p : parts) out.push_back(std::move(p));
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

}  // namespace

UnitCounter whitespace_word_counter() {
    return [](std::string_view s) { return split_whitespace(s).size(); };
}

UnitCounter tokenizer_counter(const Tokenizer& tok) {
    return [&tok](std::string_view s) { return tok.count(s); };
}

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t boundary = std::string_view::npos;
        if (text[i] == '\n') {
            std::size_t j = i + 1;
            while (j < text.size() && is_space(text[j])) ++j;
            boundary = j;
        } else if (is_terminal(text[i])) {
            std::size_t j = i + 1;
            while (j < text.size() && is_closer(text[j])) ++j;
            if (j == text.size() || is_space(text[j])) {
                while (j < text.size() && is_space(text[j])) ++j;
                boundary = j;
            } else {
                i = j;
                continue;
            }
        }
        if (boundary != std::string_view::npos) {
            out.emplace_back(text.substr(start, boundary - start));
            start = boundary;
            i = boundary;
        } else {
            ++i;
        }
    }
    if (start < text.size()) out.emplace_back(text.substr(start));
    return out;
}

std::vector<std::string> chunk_text(std::string_view text, std::size_t max_units, const UnitCounter& count) {
    if (max_units < 1) throw ValidationError("chunk_text: max_units must be >= 1");
    std::vector<std::string> chunks;
    std::string current;
    for (auto& seg : split_sentences(text)) {
        std::string candidate = current + seg;
        if (count(candidate) <= max_units) {
            current = std::move(candidate);
            continue;
        }
        if (!current.empty()) chunks.push_back(std::move(current));
        current.clear();
        if (count(seg) <= max_units) {
            current = std::move(seg);
        } else {
            auto parts = hard_split(seg, max_units, count, 0);
            current = std::move(parts.back());
            parts.pop_back();
            for (auto& p : parts) chunks.push_back(std::move(p));
        }
    }
    if (!current.empty()) chunks.push_back(std::move(current));
    return chunks;
}

}  // namespace dslm
