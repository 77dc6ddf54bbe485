#pragma once

// HTTP JSON service over one read-only checkpoint. Routes:
//   POST   /session                 -> {"session_id"}
//   POST   /session/{id}/message    {"text"} -> turn object
//   GET    /session/{id}/history    -> {"session_id", "turns": [...]}
//   DELETE /session/{id}            -> {"deleted"}
// Errors: {"error": {"code", "message"}} with 400, 404, 409 (busy) or 422
// (generated belief/action did not parse; "raw" carries the text).

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "json.hpp"

#include "acn/inference.hpp"

namespace httplib {
class Server;
}

namespace acn {

struct HttpReply {
  int status = 200;
  nlohmann::ordered_json body;
};

nlohmann::ordered_json turn_json(const std::string& user, const TurnResult& result);

class DialogueService {
 public:
  DialogueService(const Model& model, const Vocab& vocab, const Database& db, StageLimits limits = {});

  HttpReply create_session();
  HttpReply message(const std::string& session_id, const std::string& request_body);
  HttpReply history(const std::string& session_id) const;
  HttpReply remove(const std::string& session_id);

  // Runs while the session lock is held, before generation. Tests use it to
  // hold a request in flight.
  void set_generation_hook(std::function<void()> hook) { hook_ = std::move(hook); }

  void register_routes(httplib::Server& server);

 private:
  struct Session {
    std::mutex busy;
    std::vector<DialogueTurn> turns;
    nlohmann::ordered_json transcript = nlohmann::ordered_json::array();
  };
  std::shared_ptr<Session> find(const std::string& id) const;

  const Model& model_;
  const Vocab& vocab_;
  const Database& db_;
  StageLimits limits_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
  std::function<void()> hook_;
};

HttpReply error_reply(int status, const std::string& code, const std::string& message);

// Blocks serving on host:port until the process is stopped.
void serve(DialogueService& service, const std::string& host, int port);

}  // namespace acn
