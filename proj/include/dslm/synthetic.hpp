#pragma once

#include <string>
#include <vector>

#include "dslm/records.hpp"

namespace dslm {

/// A toy diagnostic domain: each symptom has exactly one faulty component.
struct SyntheticFact {
    std::string symptom;
    std::string component;
};

struct SyntheticDomain {
    std::vector<SyntheticFact> facts;
    std::vector<std::string> components;
    std::size_t n_tuning_facts = 0;  // facts [0, n) feed instruction data, the rest are probe-only
};

/// Symptom-to-component assignment drawn from `seed`. Half the facts (rounded
/// down) are reserved for instruction tuning.
SyntheticDomain make_synthetic_domain(std::uint64_t seed, std::size_t n_facts = 40);

/// Documents of 3-6 template sentences stating random facts, with filler.
std::vector<std::string> synthetic_corpus(const SyntheticDomain& dom, std::size_t n_docs, std::uint64_t seed);

/// Question used by both the domain instruction data and the probes.
std::string probe_question(const std::string& symptom);

/// Instruction examples for the tuning facts only.
std::vector<InstructionExample> synthetic_domain_instructions(const SyntheticDomain& dom, std::uint64_t seed);

/// Out-of-domain instruction data with the same shape (everyday facts).
std::vector<InstructionExample> synthetic_generic_instructions(std::size_t n, std::uint64_t seed);

/// Prompt = start of an in-domain sentence; chosen = its true continuation,
/// rejected = the same words scrambled.
std::vector<PreferencePair> synthetic_preference_pairs(const SyntheticDomain& dom, std::size_t n, std::uint64_t seed);

/// Four-option questions over the held-out facts; options are the literal
/// responses "The <component>.".
std::vector<McqItem> synthetic_probes(const SyntheticDomain& dom, std::uint64_t seed);

}  // namespace dslm
