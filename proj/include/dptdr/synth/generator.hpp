#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dptdr/error.hpp"
#include "dptdr/io/dataset.hpp"

namespace dptdr::synth {

struct SynthConfig {
    std::size_t num_topics = 50;
    std::size_t passages_per_topic = 40;
    std::size_t min_sentences = 2;
    std::size_t max_sentences = 3;
    std::size_t min_sentence_words = 5;
    std::size_t max_sentence_words = 7;
    std::size_t topic_vocab_size = 12;
    std::size_t background_vocab_size = 300;
    std::size_t detail_vocab_size = 200;
    std::size_t details_per_passage = 2;
    double overlap = 0.25;  // share of the topic and detail vocabularies taken from the background words
    double topic_word_rate = 0.3;
    double detail_word_rate = 0.25;
    std::size_t train_queries_per_topic = 4;
    std::size_t test_queries_per_topic = 2;
    std::uint64_t seed = 0;

    void validate() const
    {
        std::vector<std::string> bad;
        auto need = [&](bool ok, const char* what) {
            if (!ok) {
                bad.emplace_back(what);
            }
        };
        need(num_topics > 0, "num_topics > 0");
        need(passages_per_topic > 0, "passages_per_topic > 0");
        need(min_sentences > 0 && min_sentences <= max_sentences, "0 < min_sentences <= max_sentences");
        need(min_sentence_words >= 2 && min_sentence_words <= max_sentence_words,
             "2 <= min_sentence_words <= max_sentence_words");
        need(topic_vocab_size > 0, "topic_vocab_size > 0");
        need(background_vocab_size > 0, "background_vocab_size > 0");
        need(details_per_passage > 0 && detail_vocab_size >= details_per_passage,
             "0 < details_per_passage <= detail_vocab_size");
        need(overlap >= 0.0 && overlap < 1.0, "0 <= overlap < 1");
        need(topic_word_rate >= 0.0 && detail_word_rate >= 0.0 && topic_word_rate + detail_word_rate <= 1.0,
             "word rates non-negative with sum <= 1");
        need(train_queries_per_topic + test_queries_per_topic > 0, "at least one query per topic");
        need(train_queries_per_topic + test_queries_per_topic <= passages_per_topic,
             "queries per topic <= passages_per_topic");
        if (!bad.empty()) {
            std::string msg = "synth config:";
            for (const auto& b : bad) {
                msg += " [" + b + "]";
            }
            throw ValidationError(msg);
        }
    }
};

inline nlohmann::json to_json(const SynthConfig& c)
{
    return {{"num_topics", c.num_topics},
            {"passages_per_topic", c.passages_per_topic},
            {"min_sentences", c.min_sentences},
            {"max_sentences", c.max_sentences},
            {"min_sentence_words", c.min_sentence_words},
            {"max_sentence_words", c.max_sentence_words},
            {"topic_vocab_size", c.topic_vocab_size},
            {"background_vocab_size", c.background_vocab_size},
            {"detail_vocab_size", c.detail_vocab_size},
            {"details_per_passage", c.details_per_passage},
            {"overlap", c.overlap},
            {"topic_word_rate", c.topic_word_rate},
            {"detail_word_rate", c.detail_word_rate},
            {"train_queries_per_topic", c.train_queries_per_topic},
            {"test_queries_per_topic", c.test_queries_per_topic},
            {"seed", c.seed}};
}

struct SynthData {
    io::Corpus corpus;
    io::Queries train_queries;
    io::Queries test_queries;
    io::Qrels qrels;
    std::vector<std::size_t> passage_topic;  // parallel to corpus records
    std::vector<std::vector<std::string>> topic_words;

    io::Queries all_queries() const
    {
        io::Queries q;
        for (const auto* part : {&train_queries, &test_queries}) {
            for (const auto& r : part->records()) {
                q.add(r.id, r.text);
            }
        }
        return q;
    }
};

namespace detail {

/// Pronounceable, distinct word for every index.
inline std::string pseudo_word(std::size_t index)
{
    static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
    constexpr std::size_t kSyllables = 14 * 5;
    std::string w;
    std::size_t x = index;
    for (int i = 0; i < 3; ++i) {
        const std::size_t s = x % kSyllables;
        x /= kSyllables;
        w += kOnsets[s / 5];
        w += kVowels[s % 5];
    }
    while (x > 0) {
        const std::size_t s = x % kSyllables;
        x /= kSyllables;
        w += kOnsets[s / 5];
        w += kVowels[s % 5];
    }
    return w;
}

inline std::string padded(char prefix, std::size_t i, std::size_t count)
{
    std::string digits = std::to_string(i);
    const std::size_t width = std::to_string(count > 0 ? count - 1 : 0).size();
    return prefix + std::string(width - std::min(width, digits.size()), '0') + digits;
}

}  // namespace detail

/// Topic-clustered passages with a known positive per query. Every passage
/// owns a few "detail" words repeated across its sentences; a query combines
/// its positive's detail words with words of the topic.
inline SynthData generate(const SynthConfig& cfg)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    auto uniform = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Word index space: background, then topic-unique, then detail words.
    const std::size_t n_shared = static_cast<std::size_t>(cfg.overlap * static_cast<double>(cfg.topic_vocab_size) + 0.5);
    const std::size_t n_unique = cfg.topic_vocab_size - n_shared;
    std::vector<std::string> background(cfg.background_vocab_size);
    for (std::size_t i = 0; i < background.size(); ++i) {
        background[i] = detail::pseudo_word(i);
    }
    std::size_t next = cfg.background_vocab_size;
    std::vector<std::vector<std::string>> topic_words(cfg.num_topics);
    for (auto& words : topic_words) {
        for (std::size_t i = 0; i < n_unique; ++i) {
            words.push_back(detail::pseudo_word(next++));
        }
        for (std::size_t i = 0; i < n_shared; ++i) {
            words.push_back(background[uniform(0, background.size() - 1)]);
        }
    }
    // The same share of the detail pool is taken from the background words.
    const std::size_t n_shared_details =
        static_cast<std::size_t>(cfg.overlap * static_cast<double>(cfg.detail_vocab_size) + 0.5);
    std::vector<std::string> detail_pool(cfg.detail_vocab_size);
    for (std::size_t i = 0; i < detail_pool.size(); ++i) {
        detail_pool[i] = i < n_shared_details ? background[(i * 7919) % background.size()] : detail::pseudo_word(next++);
    }

    SynthData out;
    const std::size_t n_passages = cfg.num_topics * cfg.passages_per_topic;
    std::vector<std::vector<std::string>> passage_details(n_passages);
    for (std::size_t t = 0; t < cfg.num_topics; ++t) {
        for (std::size_t j = 0; j < cfg.passages_per_topic; ++j) {
            const std::size_t pi = t * cfg.passages_per_topic + j;
            auto& details = passage_details[pi];
            while (details.size() < cfg.details_per_passage) {
                const auto& w = detail_pool[uniform(0, detail_pool.size() - 1)];
                if (std::find(details.begin(), details.end(), w) == details.end()) {
                    details.push_back(w);
                }
            }
            std::string text;
            const std::size_t n_sent = uniform(cfg.min_sentences, cfg.max_sentences);
            for (std::size_t s = 0; s < n_sent; ++s) {
                const std::size_t n_words = uniform(cfg.min_sentence_words, cfg.max_sentence_words);
                std::vector<std::string> words;
                // Every sentence carries one topic word and one detail word.
                words.push_back(topic_words[t][uniform(0, topic_words[t].size() - 1)]);
                words.push_back(details[uniform(0, details.size() - 1)]);
                while (words.size() < n_words) {
                    const double r = unit(rng);
                    if (r < cfg.topic_word_rate) {
                        words.push_back(topic_words[t][uniform(0, topic_words[t].size() - 1)]);
                    } else if (r < cfg.topic_word_rate + cfg.detail_word_rate) {
                        words.push_back(details[uniform(0, details.size() - 1)]);
                    } else {
                        words.push_back(background[uniform(0, background.size() - 1)]);
                    }
                }
                std::shuffle(words.begin(), words.end(), rng);
                words[0][0] = static_cast<char>(words[0][0] - 'a' + 'A');
                for (std::size_t k = 0; k < words.size(); ++k) {
                    text += (k == 0 ? (s == 0 ? "" : " ") : " ") + words[k];
                }
                text += '.';
            }
            out.corpus.add(detail::padded('p', pi, n_passages), text);
            out.passage_topic.push_back(t);
        }
    }

    const std::size_t per_topic = cfg.train_queries_per_topic + cfg.test_queries_per_topic;
    const std::size_t n_queries = cfg.num_topics * per_topic;
    std::size_t qi = 0;
    for (std::size_t t = 0; t < cfg.num_topics; ++t) {
        std::vector<std::size_t> members(cfg.passages_per_topic);
        for (std::size_t j = 0; j < members.size(); ++j) {
            members[j] = t * cfg.passages_per_topic + j;
        }
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t k = 0; k < per_topic; ++k, ++qi) {
            const std::size_t pi = members[k];
            std::vector<std::string> words = passage_details[pi];
            for (int i = 0; i < 2; ++i) {
                words.push_back(topic_words[t][uniform(0, topic_words[t].size() - 1)]);
            }
            words.push_back(background[uniform(0, background.size() - 1)]);
            std::shuffle(words.begin(), words.end(), rng);
            std::string text;
            for (const auto& w : words) {
                text += (text.empty() ? "" : " ") + w;
            }
            const std::string qid = detail::padded('q', qi, n_queries);
            (k < cfg.train_queries_per_topic ? out.train_queries : out.test_queries).add(qid, text);
            out.qrels.add(qid, out.corpus[pi].id);
        }
    }
    out.topic_words = std::move(topic_words);
    return out;
}

}  // namespace dptdr::synth
