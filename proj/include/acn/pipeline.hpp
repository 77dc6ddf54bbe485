#pragma once

// Multi-step recipes shared by the command line tool and the tests.

#include <cstdint>
#include <string>
#include <vector>

#include "acn/evaluation.hpp"
#include "acn/training.hpp"

namespace acn {

// Raises glibc's mmap and trim thresholds so the many short-lived activation
// buffers of a training step are recycled instead of mapped and unmapped each
// time. No-op on other C libraries.
void tune_allocator();

// Text the subword vocabulary is fitted on: the documents plus every
// linearized turn of the corpus.
std::vector<std::string> vocab_training_texts(const CorpusFile& corpus, const std::vector<std::string>& documents);

// Linearized train-pool dialogues in which every entity's name, phone and
// postcode is replaced by a freshly invented string, new for each dialogue.
// A backbone pretrained on them can only produce those values by reading
// them off the context.
std::vector<std::string> invented_entity_dialogues(std::uint64_t seed, std::size_t n_dialogues);

// Backbone pretraining documents: generate_pretraining_text prose, every
// turn of n_dialogues train-pool dialogues linearized with its history, then
// the turns of n_invented invented_entity_dialogues.
std::vector<std::string> backbone_documents(std::uint64_t seed, std::size_t n_prose, std::size_t n_dialogues,
                                            std::size_t n_invented = 0);

// Plain-text documents, one JSON string per line.
void save_documents(const std::vector<std::string>& documents, const std::string& path);
std::vector<std::string> load_documents(const std::string& path);

// Lexicon over both entity pools, so entities borrowed from the wrong pool
// are still recognised as mentions.
std::vector<std::string> full_lexicon();

// A model with the backbone parameters of `backbone` and freshly initialised
// adapters of the given size (copy head re-initialised as well).
Model with_adapter_size(const Model& backbone, std::size_t adapter_size, std::uint64_t seed);

struct SweepResult {
  std::size_t adapter_size = 0;
  std::vector<EpochRecord> log;
  EvalReport report;
};

// Adapter fine-tuning and evaluation once per size, each from the same
// backbone and seed.
std::vector<SweepResult> sweep_adapters(const Model& backbone, const Vocab& vocab, const CorpusFile& train_corpus,
                                        const CorpusFile& eval_corpus, const Database& eval_db,
                                        const std::vector<std::size_t>& sizes, const TrainConfig& config,
                                        const StageLimits& limits = {});

}  // namespace acn
