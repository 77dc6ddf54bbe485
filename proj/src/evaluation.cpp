#include "acn/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "acn/errors.hpp"

namespace acn {

double joint_accuracy(const std::vector<BeliefState>& pred, const std::vector<BeliefState>& gold) {
  if (pred.size() != gold.size()) {
    throw DimensionError("joint_accuracy: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(gold.size()) + " gold states");
  }
  if (gold.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += pred[i].normalized() == gold[i].normalized();
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

namespace {

bool contains_value(const std::string& haystack_norm, const std::string& value) {
  const std::string v = normalize_value(value);
  return !v.empty() && haystack_norm.find(v) != std::string::npos;
}

std::vector<std::string> whitespace_tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

InformSuccess inform_success(const std::vector<Dialogue>& dialogues,
                             const std::vector<std::vector<std::string>>& responses, const Database& db) {
  if (dialogues.size() != responses.size()) {
    throw DimensionError("inform_success: " + std::to_string(responses.size()) + " response lists for " +
                         std::to_string(dialogues.size()) + " dialogues");
  }
  InformSuccess out;
  out.dialogues = dialogues.size();
  if (dialogues.empty()) return out;
  std::size_t inform = 0, success = 0;
  for (std::size_t d = 0; d < dialogues.size(); ++d) {
    const GoalSpec& goal = dialogues[d].goal;
    if (goal.domain.empty() || goal.entity.empty()) {
      throw ConfigError("inform_success: dialogue '" + dialogues[d].id + "' has no goal");
    }
    std::string text;
    for (const auto& r : responses[d]) text += normalize_value(r) + " \n ";
    bool informed = false;
    for (const auto& rec : db.records(goal.domain)) {
      bool ok = true;
      for (const auto& [s, v] : goal.constraints) {
        auto it = rec.attributes.find(s);
        ok = ok && it != rec.attributes.end() && normalize_value(it->second) == normalize_value(v);
      }
      if (ok && contains_value(text, rec.name)) informed = true;
    }
    if (!informed) continue;
    ++inform;
    const EntityRecord* gold = nullptr;
    for (const auto& rec : db.records(goal.domain)) {
      if (rec.name == goal.entity) gold = &rec;
    }
    if (!gold) throw ConfigError("inform_success: goal entity '" + goal.entity + "' not in the database");
    bool all = true;
    for (const auto& slot : goal.requested) {
      auto it = gold->attributes.find(slot);
      all = all && it != gold->attributes.end() && contains_value(text, it->second);
    }
    success += all;
  }
  out.inform = static_cast<double>(inform) / static_cast<double>(dialogues.size());
  out.success = static_cast<double>(success) / static_cast<double>(dialogues.size());
  return out;
}

double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
  if (candidates.size() != references.size()) {
    throw DimensionError("bleu: " + std::to_string(candidates.size()) + " candidates for " +
                         std::to_string(references.size()) + " references");
  }
  if (references.empty()) throw ConfigError("bleu: no references");
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto c = whitespace_tokens(candidates[i]);
    const auto r = whitespace_tokens(references[i]);
    if (r.empty()) throw ConfigError("bleu: empty reference at index " + std::to_string(i));
    cand_len += c.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts;
      for (std::size_t k = 0; k + n <= r.size(); ++k) ++ref_counts[{r.begin() + k, r.begin() + k + n}];
      std::map<std::vector<std::string>, std::size_t> cand_counts;
      for (std::size_t k = 0; k + n <= c.size(); ++k) ++cand_counts[{c.begin() + k, c.begin() + k + n}];
      for (const auto& [gram, count] : cand_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
        totals[n - 1] += count;
      }
    }
  }
  if (cand_len == 0 || matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(matches[0]) / static_cast<double>(totals[0]));
  for (std::size_t n = 1; n < 4; ++n) {
    log_sum += std::log(static_cast<double>(matches[n] + 1) / static_cast<double>(totals[n] + 1));
  }
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return bp * std::exp(log_sum / 4.0);
}

double combined_score(double inform_pct, double success_pct, double bleu_pts) {
  return (inform_pct + success_pct) * 0.5 + bleu_pts;
}

std::vector<std::string> entity_mentions(const std::string& text, const std::vector<std::string>& lexicon) {
  const std::string norm = normalize_value(text);
  std::vector<std::string> entries;
  for (const auto& e : lexicon) entries.push_back(normalize_value(e));
  std::sort(entries.begin(), entries.end(), [](const std::string& a, const std::string& b) {
    return a.size() != b.size() ? a.size() > b.size() : a < b;
  });
  std::vector<std::string> found;
  std::size_t i = 0;
  while (i < norm.size()) {
    if (i > 0 && is_word_char(norm[i - 1]) && is_word_char(norm[i])) {
      ++i;
      continue;
    }
    bool hit = false;
    for (const auto& e : entries) {
      if (e.empty() || norm.compare(i, e.size(), e) != 0) continue;
      const std::size_t end = i + e.size();
      if (end < norm.size() && is_word_char(norm[end]) && is_word_char(e.back())) continue;
      found.push_back(e);
      i = end;
      hit = true;
      break;
    }
    if (!hit) ++i;
  }
  // Phone numbers and postcodes are recognised by shape as well, so invented
  // ones count as mentions even when no database holds them.
  static const std::regex shaped(R"((^|[^a-z0-9])(\d{5} \d{6}|[a-z]{2}\d \d[a-z]{2})(?![a-z0-9]))");
  for (auto it = std::sregex_iterator(norm.begin(), norm.end(), shaped); it != std::sregex_iterator(); ++it) {
    const std::string m = (*it)[2].str();
    if (std::find(found.begin(), found.end(), m) == found.end()) found.push_back(m);
  }
  return found;
}

EntityScores entity_consistency(const std::vector<std::string>& responses, const std::vector<std::string>& sources,
                                const std::vector<std::string>& gold_responses, const std::vector<std::string>& lexicon) {
  if (responses.size() != sources.size() || responses.size() != gold_responses.size()) {
    throw DimensionError("entity_consistency: responses, sources and gold responses differ in count");
  }
  EntityScores s;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto said = entity_mentions(responses[i], lexicon);
    const std::set<std::string> said_set(said.begin(), said.end());
    const std::string source = normalize_value(sources[i]);
    for (const auto& m : said_set) {
      ++s.mentioned;
      s.supported += source.find(m) != std::string::npos;
    }
    const auto gold = entity_mentions(gold_responses[i], lexicon);
    for (const auto& g : std::set<std::string>(gold.begin(), gold.end())) {
      ++s.required;
      s.recalled += said_set.count(g);
    }
  }
  s.precision = s.mentioned ? static_cast<double>(s.supported) / static_cast<double>(s.mentioned) : 0.0;
  s.recall = s.required ? static_cast<double>(s.recalled) / static_cast<double>(s.required) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["joint_accuracy"] = joint_accuracy;
  j["inform"] = inform;
  j["success"] = success;
  j["bleu"] = bleu;
  j["combined"] = combined;
  j["entity_precision"] = entity.precision;
  j["entity_recall"] = entity.recall;
  j["entity_f1"] = entity.f1;
  j["parse_rate"] = parse_rate;
  nlohmann::ordered_json counts;
  counts["dialogues"] = dialogues;
  counts["turns"] = turns;
  counts["parsed_turns"] = parsed_turns;
  counts["belief_matches"] = belief_matches;
  counts["entity_mentioned"] = entity.mentioned;
  counts["entity_supported"] = entity.supported;
  counts["entity_required"] = entity.required;
  counts["entity_recalled"] = entity.recalled;
  j["counts"] = counts;
  return j.dump(2);
}

std::string EvalReport::to_text() const {
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "dialogues        %zu\n"
                "turns            %zu\n"
                "joint accuracy   %.4f  (%zu/%zu)\n"
                "parseable        %.4f  (%zu/%zu)\n"
                "inform           %.2f\n"
                "success          %.2f\n"
                "bleu             %.2f\n"
                "combined         %.2f\n"
                "entity P/R/F1    %.4f / %.4f / %.4f  (%zu/%zu supported, %zu/%zu recalled)\n",
                dialogues, turns, joint_accuracy, belief_matches, turns, parse_rate, parsed_turns, turns, inform * 100.0,
                success * 100.0, bleu * 100.0, combined, entity.precision, entity.recall, entity.f1, entity.supported,
                entity.mentioned, entity.recalled, entity.required);
  return buf;
}

EvalReport evaluate_corpus(const Model& model, const Vocab& vocab, const Database& db, const CorpusFile& corpus,
                           const std::vector<std::string>& lexicon, const StageLimits& limits,
                           std::vector<TurnPrediction>* predictions) {
  const auto& dialogues = corpus.dialogues;
  std::vector<std::vector<TurnResult>> results(dialogues.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t d = next++; d < dialogues.size(); d = next++) {
      std::vector<DialogueTurn> history;
      for (const auto& turn : dialogues[d].turns) {
        results[d].push_back(respond(model, vocab, db, history, turn.user_utterance, limits, false));
        history.push_back(turn);
      }
    }
  };
  const std::size_t n_threads = std::max(1u, std::min(8u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  EvalReport report;
  report.dialogues = dialogues.size();
  std::vector<BeliefState> pred, gold;
  std::vector<std::vector<std::string>> per_dialogue(dialogues.size());
  std::vector<std::string> responses, references, sources;
  for (std::size_t d = 0; d < dialogues.size(); ++d) {
    std::vector<DialogueTurn> history;
    for (std::size_t t = 0; t < dialogues[d].turns.size(); ++t) {
      const DialogueTurn& turn = dialogues[d].turns[t];
      const TurnResult& r = results[d][t];
      ++report.turns;
      report.parsed_turns += r.parse_ok();
      pred.push_back(r.belief);
      gold.push_back(turn.belief);
      per_dialogue[d].push_back(r.response);
      responses.push_back(r.response);
      references.push_back(turn.system_response);
      sources.push_back(r.db_text + "\n" + history_text(history) + turn.user_utterance);
      if (predictions) predictions->push_back({dialogues[d].id, t, r});
      history.push_back(turn);
    }
  }
  if (report.turns == 0) throw ConfigError("evaluate_corpus: corpus has no turns");
  report.joint_accuracy = joint_accuracy(pred, gold);
  for (std::size_t i = 0; i < pred.size(); ++i) report.belief_matches += pred[i].normalized() == gold[i].normalized();
  report.parse_rate = static_cast<double>(report.parsed_turns) / static_cast<double>(report.turns);
  const InformSuccess is = inform_success(dialogues, per_dialogue, db);
  report.inform = is.inform;
  report.success = is.success;
  report.bleu = bleu(responses, references);
  report.combined = combined_score(report.inform * 100.0, report.success * 100.0, report.bleu * 100.0);
  report.entity = entity_consistency(responses, sources, references, lexicon);
  return report;
}

}  // namespace acn
