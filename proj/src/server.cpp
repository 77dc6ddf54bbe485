#include "acn/server.hpp"

#include "httplib.h"

#include "acn/errors.hpp"

namespace acn {

HttpReply error_reply(int status, const std::string& code, const std::string& message) {
  HttpReply r;
  r.status = status;
  r.body["error"] = {{"code", code}, {"message", message}};
  return r;
}

nlohmann::ordered_json turn_json(const std::string& user, const TurnResult& result) {
  nlohmann::ordered_json j;
  j["user"] = user;
  j["belief"] = nlohmann::ordered_json::object();
  for (const auto& [domain, slots] : result.belief.domains) {
    for (const auto& [slot, value] : slots) j["belief"][domain][slot] = value;
  }
  j["belief_text"] = belief_text(result.belief);
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const auto& rec : result.db.records) {
    nlohmann::ordered_json r;
    r["domain"] = rec.domain;
    r["name"] = rec.name;
    r["attributes"] = rec.attributes;
    records.push_back(r);
  }
  j["db"] = {{"count", result.db.total}, {"records", records}, {"text", result.db_text}};
  nlohmann::ordered_json acts = nlohmann::ordered_json::array();
  for (const auto& a : result.action.acts) {
    acts.push_back({{"domain", a.domain}, {"act", to_string(a.type)}, {"slot", a.slot}, {"value", a.value}});
  }
  j["action"] = acts;
  j["action_text"] = action_text(result.action);
  j["response"] = result.response;
  nlohmann::ordered_json tokens = nlohmann::ordered_json::array(), gate = nlohmann::ordered_json::array(),
                         share = nlohmann::ordered_json::array();
  for (const auto& d : result.diagnostics) {
    tokens.push_back(d.text);
    gate.push_back(d.gate);
    share.push_back(d.copy_share);
  }
  j["diagnostics"] = {{"tokens", tokens}, {"gate", gate}, {"copy_share", share}};
  return j;
}

DialogueService::DialogueService(const Model& model, const Vocab& vocab, const Database& db, StageLimits limits)
    : model_(model), vocab_(vocab), db_(db), limits_(limits) {}

std::shared_ptr<DialogueService::Session> DialogueService::find(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

HttpReply DialogueService::create_session() {
  std::lock_guard lock(sessions_mutex_);
  const std::string id = "s" + std::to_string(next_id_++);
  sessions_[id] = std::make_shared<Session>();
  HttpReply r;
  r.status = 201;
  r.body["session_id"] = id;
  return r;
}

HttpReply DialogueService::message(const std::string& session_id, const std::string& request_body) {
  auto session = find(session_id);
  if (!session) return error_reply(404, "not_found", "no session '" + session_id + "'");
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(request_body);
  } catch (const nlohmann::json::exception&) {
    return error_reply(400, "bad_request", "request body is not valid JSON");
  }
  if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
    return error_reply(400, "bad_request", "expected {\"text\": string}");
  }
  const std::string text = body["text"].get<std::string>();
  if (text.empty() || text.find('\n') != std::string::npos) {
    return error_reply(400, "bad_request", "text must be a non-empty single line");
  }
  std::unique_lock lock(session->busy, std::try_to_lock);
  if (!lock.owns_lock()) return error_reply(409, "busy", "session '" + session_id + "' is already generating");
  if (hook_) hook_();
  TurnResult result;
  try {
    result = respond(model_, vocab_, db_, session->turns, text, limits_, true);
  } catch (const GenerationError& e) {
    HttpReply r = error_reply(422, "generation_parse_error", e.what());
    r.body["error"]["stage"] = to_string(e.stage());
    r.body["error"]["raw"] = e.raw();
    return r;
  } catch (const LengthError& e) {
    return error_reply(422, "context_overflow", e.what());
  }
  DialogueTurn turn;
  turn.user_utterance = text;
  turn.belief = result.belief;
  turn.db_results = result.db.records;
  turn.db_total = result.db.total;
  turn.action = result.action;
  turn.system_response = result.response;
  session->turns.push_back(std::move(turn));
  HttpReply r;
  r.body = turn_json(text, result);
  r.body["turn"] = session->turns.size();
  session->transcript.push_back(r.body);
  return r;
}

HttpReply DialogueService::history(const std::string& session_id) const {
  auto session = find(session_id);
  if (!session) return error_reply(404, "not_found", "no session '" + session_id + "'");
  std::unique_lock lock(session->busy, std::try_to_lock);
  if (!lock.owns_lock()) return error_reply(409, "busy", "session '" + session_id + "' is generating");
  HttpReply r;
  r.body["session_id"] = session_id;
  r.body["turns"] = session->transcript;
  return r;
}

HttpReply DialogueService::remove(const std::string& session_id) {
  std::lock_guard lock(sessions_mutex_);
  if (sessions_.erase(session_id) == 0) return error_reply(404, "not_found", "no session '" + session_id + "'");
  HttpReply r;
  r.body["deleted"] = session_id;
  return r;
}

void DialogueService::register_routes(httplib::Server& server) {
  auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  server.Post("/session", [this, send](const httplib::Request&, httplib::Response& res) { send(res, create_session()); });
  server.Post(R"(/session/([^/]+)/message)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, message(req.matches[1], req.body));
  });
  server.Get(R"(/session/([^/]+)/history)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, history(req.matches[1]));
  });
  server.Delete(R"(/session/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, remove(req.matches[1]));
  });
  server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, "internal", what));
  });
  server.set_error_handler([send](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    send(res, error_reply(res.status, res.status == 404 ? "not_found" : "http_error",
                          "no route for " + req.method + " " + req.path));
  });
}

void serve(DialogueService& service, const std::string& host, int port) {
  httplib::Server server;
  service.register_routes(server);
  if (!server.listen(host, port)) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace acn
