#include "acn/dialogue.hpp"

#include <cctype>

#include "acn/errors.hpp"
#include "acn/kb.hpp"
#include "acn/textcodec.hpp"

namespace acn {

namespace {

constexpr std::string_view kBeliefSep = ", ";
constexpr std::string_view kActionSep = "; ";

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, std::string_view sep) {
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (true) {
    const std::size_t at = s.find(sep, pos);
    if (at == std::string_view::npos) {
      parts.push_back(s.substr(pos));
      return parts;
    }
    parts.push_back(s.substr(pos, at - pos));
    pos = at + sep.size();
  }
}

std::vector<std::string_view> words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

// Rest of the line after the last line-initial occurrence of marker.
std::string_view marker_line(std::string_view text, std::string_view marker) {
  std::size_t at = std::string_view::npos;
  std::size_t search = text.size();
  while (true) {
    const std::size_t found = text.rfind(marker, search);
    if (found == std::string_view::npos) break;
    if (found == 0 || text[found - 1] == '\n') {
      at = found;
      break;
    }
    if (found == 0) break;
    search = found - 1;
  }
  if (at == std::string_view::npos) {
    throw ParseError(std::string(marker), "marker '" + std::string(marker) + "' not found");
  }
  std::string_view rest = text.substr(at + marker.size());
  const std::size_t nl = rest.find('\n');
  return nl == std::string_view::npos ? rest : rest.substr(0, nl);
}

void malformed(ParseReport* report, std::string_view marker, std::string_view clause, const std::string& why) {
  if (!report) throw ParseError(std::string(marker), why + ": '" + std::string(clause) + "'");
  report->malformed.emplace_back(clause);
}

}  // namespace

std::string normalize_value(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

bool BeliefState::empty() const { return slot_count() == 0; }

std::size_t BeliefState::slot_count() const {
  std::size_t n = 0;
  for (const auto& [d, slots] : domains) n += slots.size();
  return n;
}

void BeliefState::set(const std::string& domain, const std::string& slot, const std::string& value) {
  if (domain.empty() || slot.empty()) throw ParseError("belief", "domain and slot keys must be non-empty");
  domains[domain][slot] = value;
}

BeliefState BeliefState::normalized() const {
  BeliefState out;
  for (const auto& [d, slots] : domains) {
    for (const auto& [s, v] : slots) out.domains[normalize_value(d)][normalize_value(s)] = normalize_value(v);
  }
  return out;
}

const char* to_string(ActType type) {
  switch (type) {
    case ActType::Inform: return "inform";
    case ActType::Request: return "request";
    case ActType::Book: return "book";
    case ActType::Offer: return "offer";
    case ActType::Recommend: return "recommend";
    case ActType::NoOffer: return "nooffer";
    case ActType::Greet: return "greet";
    case ActType::Bye: return "bye";
  }
  return "?";
}

std::optional<ActType> act_type_from_string(std::string_view name) {
  for (ActType t : kAllActTypes) {
    if (name == to_string(t)) return t;
  }
  return std::nullopt;
}

const char* to_string(Segment segment) {
  switch (segment) {
    case Segment::History: return "history";
    case Segment::Belief: return "belief";
    case Segment::Database: return "db";
    case Segment::Action: return "action";
    case Segment::Response: return "response";
  }
  return "?";
}

std::string belief_text(const BeliefState& belief) {
  std::string out;
  for (const auto& [domain, slots] : belief.domains) {
    for (const auto& [slot, value] : slots) {
      if (!out.empty()) out += kBeliefSep;
      out += domain + " " + slot + " = " + value;
    }
  }
  return out.empty() ? "none" : out;
}

std::string action_text(const SystemAction& action) {
  std::string out;
  for (const auto& act : action.acts) {
    if (!out.empty()) out += kActionSep;
    out += act.domain + " " + to_string(act.type);
    if (!act.slot.empty()) out += " " + act.slot;
    if (!act.value.empty()) out += " " + act.value;
  }
  return out.empty() ? "none" : out;
}

std::string history_text(const std::vector<DialogueTurn>& history, std::size_t max_history_turns) {
  std::string out;
  const std::size_t first = history.size() > max_history_turns ? history.size() - max_history_turns : 0;
  for (std::size_t i = first; i < history.size(); ++i) {
    out += "User: " + history[i].user_utterance + "\n";
    out += "System: " + history[i].system_response + "\n";
  }
  return out;
}

std::array<std::string, kSegmentCount> turn_segments(const std::vector<DialogueTurn>& history,
                                                     const DialogueTurn& current, std::size_t max_history_turns) {
  return {
      history_text(history, max_history_turns) + "User: " + current.user_utterance + "\n",
      "Belief: " + belief_text(current.belief) + "\n",
      "Database: " + format_results(current.db_results, current.db_total) + "\n",
      "Action: " + action_text(current.action) + "\n",
      "System: " + current.system_response + "\n",
  };
}

std::string serialize_turn(const std::vector<DialogueTurn>& history, const DialogueTurn& current,
                           std::size_t max_history_turns) {
  std::string out;
  for (const auto& seg : turn_segments(history, current, max_history_turns)) out += seg;
  return out;
}

BeliefState parse_belief(std::string_view text, ParseReport* report) {
  constexpr std::string_view marker = "Belief:";
  const std::string_view body = trim(marker_line(text, marker));
  BeliefState belief;
  if (body == "none") return belief;
  if (body.empty()) {
    malformed(report, marker, body, "empty belief");
    return belief;
  }
  for (std::string_view clause : split(body, kBeliefSep)) {
    const std::size_t eq = clause.find(" = ");
    if (eq == std::string_view::npos) {
      malformed(report, marker, clause, "missing ' = '");
      continue;
    }
    const auto key = words(clause.substr(0, eq));
    const std::string_view value = trim(clause.substr(eq + 3));
    if (key.size() != 2 || value.empty()) {
      malformed(report, marker, clause, "expected 'domain slot = value'");
      continue;
    }
    belief.set(std::string(key[0]), std::string(key[1]), std::string(value));
  }
  return belief;
}

SystemAction parse_action(std::string_view text, ParseReport* report) {
  constexpr std::string_view marker = "Action:";
  const std::string_view body = trim(marker_line(text, marker));
  SystemAction action;
  if (body == "none") return action;
  if (body.empty()) {
    malformed(report, marker, body, "empty action");
    return action;
  }
  for (std::string_view clause : split(body, kActionSep)) {
    const auto w = words(clause);
    if (w.size() < 2) {
      malformed(report, marker, clause, "expected 'domain act [slot [value]]'");
      continue;
    }
    const auto type = act_type_from_string(w[1]);
    if (!type) {
      malformed(report, marker, clause, "unknown act type");
      continue;
    }
    DialogueAct act{std::string(w[0]), *type, {}, {}};
    if (w.size() >= 3) act.slot = std::string(w[2]);
    if (w.size() >= 4) {
      const std::size_t start = static_cast<std::size_t>(w[3].data() - clause.data());
      act.value = std::string(trim(clause.substr(start)));
    }
    action.acts.push_back(std::move(act));
  }
  return action;
}

std::string extract_response(std::string_view text) { return std::string(trim(marker_line(text, "System:"))); }

LinearizedTurn linearize_turn(const Vocab& vocab, const std::vector<DialogueTurn>& history, const DialogueTurn& current,
                              std::size_t max_history_turns) {
  LinearizedTurn out;
  const auto segments = turn_segments(history, current, max_history_turns);
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    const auto ids = vocab.encode(segments[s]);
    out.spans[s].begin = out.token_ids.size();
    out.token_ids.insert(out.token_ids.end(), ids.begin(), ids.end());
    out.spans[s].end = out.token_ids.size();
  }
  out.loss_mask = build_loss_mask(out);
  return out;
}

std::vector<std::uint8_t> build_loss_mask(const LinearizedTurn& turn) {
  std::size_t expect = 0;
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    const Span& sp = turn.spans[s];
    if (sp.begin != expect || sp.end < sp.begin) {
      throw ParseError("spans", std::string("segment '") + to_string(static_cast<Segment>(s)) +
                                    "' overlaps or leaves a gap at token " + std::to_string(sp.begin));
    }
    expect = sp.end;
  }
  if (expect != turn.token_ids.size()) {
    throw ParseError("spans", "segments cover " + std::to_string(expect) + " of " +
                                  std::to_string(turn.token_ids.size()) + " tokens");
  }
  std::vector<std::uint8_t> mask(turn.token_ids.size(), 1);
  const Span& db = turn.span(Segment::Database);
  for (std::size_t i = db.begin; i < db.end; ++i) mask[i] = 0;
  return mask;
}

}  // namespace acn
