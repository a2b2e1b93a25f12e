// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.
//
// Regenerates data/corpus.txt: deterministic synthetic prose with enough
// byte-level structure for the training smoke tests to have something to
// learn. Usage: make_corpus [bytes] [seed] > corpus.txt

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "moelab/rng.hpp"

namespace {

using moelab::Rng;
using moelab::u64;

const std::vector<std::string> kSubjects = {
    "the miller",      "a grey heron",    "the old engineer", "our captain",
    "the cartographer", "a young apprentice", "the lighthouse keeper", "the gardener",
    "a wandering tinker", "the archivist", "the ferryman",    "a patient teacher"};

const std::vector<std::string> kVerbs = {
    "measured", "repaired", "counted",  "sketched", "balanced", "sorted",
    "followed", "gathered", "recorded", "watched",  "carried",  "traded"};

const std::vector<std::string> kObjects = {
    "the copper wires",  "a basket of apples", "the harbour charts", "three wooden gears",
    "the evening tide",  "a ledger of names",  "the northern road",  "a bundle of letters",
    "the market stalls", "the river stones",   "a box of compasses", "the signal lamps"};

const std::vector<std::string> kPlaces = {
    "near the old bridge", "by the salt marsh",   "inside the workshop", "along the quay",
    "under the elm trees", "behind the granary",  "at the crossroads",   "on the upper deck",
    "beside the mill pond", "in the reading room"};

const std::vector<std::string> kConnectors = {"and then", "but soon", "while nearby",
                                              "after that", "all the while", "before long"};

std::string sentence(Rng& rng) {
    const auto pick = [&rng](const std::vector<std::string>& v) {
        return v[rng.uniform_index(v.size())];
    };
    std::string s = pick(kSubjects) + " " + pick(kVerbs) + " " + pick(kObjects) + " " +
                    pick(kPlaces);
    if (rng.uniform() < 0.4)
        s += ", " + pick(kConnectors) + " " + pick(kSubjects) + " " + pick(kVerbs) + " " +
             pick(kObjects);
    s += ".";
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

} // namespace

int main(int argc, char** argv) {
    const std::size_t target_bytes = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 65536;
    const u64 seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 7;

    Rng rng(seed);
    std::string text;
    while (text.size() < target_bytes) {
        const int sentences = 3 + static_cast<int>(rng.uniform_index(4));
        for (int i = 0; i < sentences; ++i) {
            text += sentence(rng);
            text += ' ';
        }
        text.back() = '\n';
        if (rng.uniform() < 0.25) text += '\n';
    }
    text.resize(target_bytes);
    std::fwrite(text.data(), 1, text.size(), stdout);
    return 0;
}
