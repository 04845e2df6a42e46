#pragma once

#include "pkck/backend.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pkck::protocol {

// Line-delimited JSON over standard streams or a local socket. Float arrays
// travel as plain JSON numbers, or as base64 little-endian float64 payloads
// when "binary": true.

struct Request {
  std::string op;  // capture | patched_forward | forward_from_layer | generate
  std::string prompt;
  std::vector<int> layers;          // capture / generate
  int layer = 0;                    // patched_forward / forward_from_layer
  int position = kLastPromptToken;  // wire form: integer or "last"
  std::vector<double> vector_payload;  // replacement / hidden
  std::string target_token;
  int max_tokens = 0;
  DecodeConfig decode;
  int topk = 5;
  bool binary = false;

  bool operator==(const Request&) const = default;
};

struct Response {
  enum class Kind { Capture, PatchedForward, ForwardFromLayer, Generate, Error };
  Kind kind = Kind::Error;
  bool binary = false;

  // capture
  std::vector<std::vector<double>> hidden;
  // patched_forward
  std::vector<std::pair<std::string, double>> probs_topk;
  double target_prob = 0.0;
  // forward_from_layer
  double nll = 0.0;
  std::vector<double> grad_hidden;
  // generate
  std::vector<std::string> tokens;
  std::map<int, std::vector<std::vector<double>>> per_step_hidden;
  std::vector<double> entropy;
  std::string stop_reason;
  // error
  std::string error_code;
  std::string message;

  bool operator==(const Response&) const = default;
};

std::string encode_request(const Request& req);
Request decode_request(const std::string& line);
std::string encode_response(const Response& res);
Response decode_response(const std::string& line);

// Dispatch one decoded request against a backend.
Response handle_request(Backend& backend, const Request& req);
// Dispatch one wire line; a JSON array is treated as a batch and answered
// with an array. Never throws: failures become error responses.
std::string handle_line(Backend& backend, const std::string& line);
// Request/response loop until EOF.
void serve(Backend& backend, std::istream& in, std::ostream& out);

class Transport {
public:
  virtual ~Transport() = default;
  virtual std::string roundtrip(const std::string& request_line) = 0;
};

// Client side of a connected line stream (e.g. a socketpair or pipes).
class StreamTransport : public Transport {
public:
  StreamTransport(std::istream& in, std::ostream& out) : in_(in), out_(out) {}
  std::string roundtrip(const std::string& request_line) override;

private:
  std::istream& in_;
  std::ostream& out_;
};

// Serves a local backend through the full encode/decode path; used to test
// the adapter without an external process.
class LoopbackTransport : public Transport {
public:
  explicit LoopbackTransport(Backend& backend) : backend_(backend) {}
  std::string roundtrip(const std::string& request_line) override;

private:
  Backend& backend_;
};

// Adapter that speaks the wire protocol to an external model host. The
// model's shape comes from configuration; the protocol itself has no
// introspection op.
class ExternalBackend : public Backend {
public:
  ExternalBackend(std::unique_ptr<Transport> transport, ModelInfo info, bool binary = false);

  ModelInfo info() const override { return info_; }
  GenerationResult generate(const std::string& prompt, int max_tokens,
                            const std::vector<int>& capture_layers,
                            const DecodeConfig& decode) override;
  std::vector<HiddenVector> capture(const std::string& prompt, const std::vector<int>& layers,
                                    int position) override;
  NextTokenDistribution patched_forward(const std::string& prompt, int layer, int position,
                                        const Vector& replacement, const std::string& target_token,
                                        int topk) override;
  ForwardFromLayerResult forward_from_layer(const std::string& prompt, int layer, int position,
                                            const Vector& hidden,
                                            const std::string& target_token) override;

private:
  Response call(const Request& req, Response::Kind expect);

  std::unique_ptr<Transport> transport_;
  ModelInfo info_;
  bool binary_ = false;
};

}  // namespace pkck::protocol
