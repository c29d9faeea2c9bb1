#include "dslm/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace dslm {

namespace {

const std::vector<std::string>& symptom_pool() {
    static const std::vector<std::string> v = {
        "a grinding noise when braking",  "a spongy brake pedal",          "a pulsing brake pedal",
        "dim headlights at idle",         "a clicking sound on start",     "a slow engine crank",
        "a sweet smell from the vents",   "steam from the hood",           "a rough idle when cold",
        "a misfire under load",           "black smoke from the exhaust",  "a whining noise on turns",
        "a clunk over bumps",             "the car pulling to one side",   "uneven tire wear",
        "a humming noise at speed",       "a burning oil smell",           "a ticking noise from the valves",
        "hard shifting into first gear",  "a slipping clutch",             "fluid under the front axle",
        "a shudder when accelerating",    "warm air from the vents",       "a loud squeal on startup",
        "a flickering dash light",        "a dead battery every morning",  "a stalling engine at stops",
        "poor fuel economy",              "a rattle from under the car",   "a hard steering wheel",
        "a vibration in the steering",    "a popping noise from the wheels", "a weak horn",
        "foggy windows that will not clear", "a check engine light after refuel", "a surging idle",
        "a knocking noise on hills",      "a delayed gear engagement",     "a leaking coolant hose clamp",
        "wipers that stop mid sweep",     "a sagging rear corner",         "a squeak from the pedal box",
    };
    return v;
}

const std::vector<std::string>& component_pool() {
    static const std::vector<std::string> v = {"caliper",   "rotor",   "alternator", "starter",  "radiator",
                                               "thermostat", "injector", "compressor", "bearing", "solenoid"};
    return v;
}

const std::vector<std::string>& fact_templates() {
    static const std::vector<std::string> v = {
        "{S} usually means the {C} has failed.",
        "When a car has {S}, technicians check the {C} first.",
        "The most common cause of {S} is a worn {C}.",
        "A bad {C} is the usual reason for {S}.",
        "If the customer reports {S}, inspect the {C}.",
        "Question: which component is the likely cause of {S}? Answer: The {C}.",
    };
    return v;
}

const std::vector<std::string>& filler_sentences() {
    static const std::vector<std::string> v = {
        "Always follow the service manual.",
        "Road test the vehicle after every repair.",
        "Record the mileage on the work order.",
        "Disconnect the battery before electrical work.",
        "Use the torque values from the manual.",
        "Clean the work area when the job is done.",
    };
    return v;
}

std::string fill(std::string t, const SyntheticFact& f) {
    auto put = [&](const std::string& key, const std::string& val) {
        for (auto p = t.find(key); p != std::string::npos; p = t.find(key, p + val.size())) t.replace(p, key.size(), val);
    };
    std::string s = f.symptom;
    if (t.rfind("{S}", 0) == 0) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    put("{S}", s);
    put("{C}", f.component);
    return t;
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[static_cast<std::size_t>(uniform_index(rng, v.size()))];
}

std::string answer_text(const std::string& component) { return "The " + component + "."; }

}  // namespace

SyntheticDomain make_synthetic_domain(std::uint64_t seed, std::size_t n_facts) {
    const auto& symptoms = symptom_pool();
    if (n_facts < 4 || n_facts > symptoms.size()) {
        throw ValidationError("synthetic domain: n_facts must be in [4, " + std::to_string(symptoms.size()) + "]");
    }
    Rng rng(derive_seed(seed, "synthetic-domain"));
    auto order = shuffled_indices(symptoms.size(), rng);
    SyntheticDomain dom;
    dom.components = component_pool();
    for (std::size_t i = 0; i < n_facts; ++i) {
        dom.facts.push_back({symptoms[order[i]], pick(dom.components, rng)});
    }
    dom.n_tuning_facts = n_facts / 2;
    return dom;
}

std::vector<std::string> synthetic_corpus(const SyntheticDomain& dom, std::size_t n_docs, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "synthetic-corpus"));
    std::vector<std::string> docs;
    for (std::size_t d = 0; d < n_docs; ++d) {
        const auto n = 3 + uniform_index(rng, 4);
        std::string doc;
        for (std::uint64_t s = 0; s < n; ++s) {
            if (!doc.empty()) doc += " ";
            if (uniform_index(rng, 5) == 0) {
                doc += pick(filler_sentences(), rng);
            } else {
                doc += fill(pick(fact_templates(), rng), pick(dom.facts, rng));
            }
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::string probe_question(const std::string& symptom) {
    return "Which component is the likely cause of " + symptom + "?";
}

std::vector<InstructionExample> synthetic_domain_instructions(const SyntheticDomain& dom, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "synthetic-dsft"));
    std::vector<InstructionExample> out;
    for (std::size_t i = 0; i < dom.n_tuning_facts; ++i) {
        const auto& f = dom.facts[i];
        out.push_back({probe_question(f.symptom), "", answer_text(f.component), std::nullopt, std::nullopt});
        out.push_back({"A customer reports " + f.symptom + ". What part should be inspected?", "",
                       answer_text(f.component), std::nullopt, std::nullopt});
    }
    fisher_yates_shuffle(out, rng);
    return out;
}

std::vector<InstructionExample> synthetic_generic_instructions(std::size_t n, std::uint64_t seed) {
    static const std::vector<std::pair<std::string, std::string>> facts = {
        {"banana", "yellow"}, {"grass", "green"},  {"sky", "blue"},     {"snow", "white"},  {"coal", "black"},
        {"tomato", "red"},    {"orange", "orange"}, {"plum", "purple"}, {"sand", "tan"},    {"cloud", "gray"},
    };
    static const std::vector<std::pair<std::string, std::string>> capitals = {
        {"France", "Paris"}, {"Japan", "Tokyo"}, {"Italy", "Rome"}, {"Egypt", "Cairo"}, {"Peru", "Lima"},
    };
    Rng rng(derive_seed(seed, "synthetic-generic"));
    std::vector<InstructionExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        if (uniform_index(rng, 2) == 0) {
            const auto& [thing, color] = pick(facts, rng);
            out.push_back({"What color is " + thing + "?", "", "It is " + color + ".", std::nullopt, std::nullopt});
        } else {
            const auto& [country, city] = pick(capitals, rng);
            out.push_back({"Name the capital of " + country + ".", "", "The capital is " + city + ".", std::nullopt,
                           std::nullopt});
        }
    }
    return out;
}

std::vector<PreferencePair> synthetic_preference_pairs(const SyntheticDomain& dom, std::size_t n, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "synthetic-dpo"));
    std::vector<PreferencePair> out;
    while (out.size() < n) {
        const auto words = split_whitespace(fill(pick(fact_templates(), rng), pick(dom.facts, rng)));
        const std::size_t cut = 2 + static_cast<std::size_t>(uniform_index(rng, words.size() - 4));
        std::vector<std::string> head(words.begin(), words.begin() + static_cast<long>(cut));
        std::vector<std::string> tail(words.begin() + static_cast<long>(cut), words.end());
        auto scrambled = tail;
        for (int tries = 0; tries < 10 && scrambled == tail; ++tries) fisher_yates_shuffle(scrambled, rng);
        if (scrambled == tail) continue;
        auto join = [](const std::vector<std::string>& w) {
            std::string s;
            for (const auto& x : w) s += (s.empty() ? "" : " ") + x;
            return s;
        };
        out.push_back({"Complete the sentence: " + join(head), join(tail), join(scrambled)});
    }
    return out;
}

std::vector<McqItem> synthetic_probes(const SyntheticDomain& dom, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "synthetic-probes"));
    std::vector<McqItem> out;
    for (std::size_t i = dom.n_tuning_facts; i < dom.facts.size(); ++i) {
        const auto& f = dom.facts[i];
        std::vector<std::string> others;
        for (const auto& c : dom.components) {
            if (c != f.component) others.push_back(c);
        }
        fisher_yates_shuffle(others, rng);
        const auto gold = static_cast<std::size_t>(uniform_index(rng, 4));
        McqItem m;
        char buf[32];
        std::snprintf(buf, sizeof buf, "probe-%03zu", i);
        m.id = buf;
        m.question = probe_question(f.symptom);
        std::size_t o = 0;
        for (std::size_t k = 0; k < 4; ++k) m.options[k] = answer_text(k == gold ? f.component : others[o++]);
        m.answer = static_cast<char>('A' + gold);
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace dslm
