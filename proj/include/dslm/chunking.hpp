#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace dslm {

class Tokenizer;

/// Measures text length in the units a chunk budget is expressed in.
using UnitCounter = std::function<std::size_t(std::string_view)>;

UnitCounter whitespace_word_counter();
UnitCounter tokenizer_counter(const Tokenizer& tok);  // tok must outlive the counter

/// Sentence segments (terminal punctuation or newline, trailing whitespace
/// attached). Concatenation reproduces the input.
std::vector<std::string> split_sentences(std::string_view text);

/// Packs whole sentences greedily into chunks of at most max_units; a sentence
/// that alone exceeds the budget is split at word, then character, then byte
/// boundaries. Concatenating the chunks reproduces `text` exactly.
std::vector<std::string> chunk_text(std::string_view text, std::size_t max_units, const UnitCounter& count);

}  // namespace dslm
