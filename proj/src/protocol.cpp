#include "pkck/protocol.hpp"

#include <nlohmann/json.hpp>

#include <istream>
#include <ostream>

namespace pkck::protocol {

using nlohmann::json;

namespace {

json floats_out(const std::vector<double>& values, bool binary) {
  if (binary) return base64_encode_f64(values);
  json arr = json::array();
  for (double v : values) arr.push_back(v);
  return arr;
}

std::vector<double> floats_in(const json& j) {
  if (j.is_string()) return base64_decode_f64(j.get<std::string>());
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(v.get<double>());
  return out;
}

json position_out(int position) {
  if (position == kLastPromptToken) return "last";
  return position;
}

int position_in(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "last") return kLastPromptToken;
    throw FormatError("protocol: bad position value");
  }
  return j.get<int>();
}

const char* decode_kind_name(DecodeConfig::Kind k) {
  return k == DecodeConfig::Kind::Greedy ? "greedy" : "temperature";
}

}  // namespace

std::string encode_request(const Request& req) {
  json j;
  j["op"] = req.op;
  if (req.binary) j["binary"] = true;
  j["prompt"] = req.prompt;
  if (req.op == "capture") {
    j["layers"] = req.layers;
    j["position"] = position_out(req.position);
  } else if (req.op == "patched_forward") {
    j["layer"] = req.layer;
    j["position"] = position_out(req.position);
    j["replacement"] = floats_out(req.vector_payload, req.binary);
    if (!req.target_token.empty()) j["target_token"] = req.target_token;
    j["topk"] = req.topk;
  } else if (req.op == "forward_from_layer") {
    j["layer"] = req.layer;
    j["position"] = position_out(req.position);
    j["hidden"] = floats_out(req.vector_payload, req.binary);
    j["target_token"] = req.target_token;
  } else if (req.op == "generate") {
    j["max_tokens"] = req.max_tokens;
    j["layers"] = req.layers;
    json d;
    d["kind"] = decode_kind_name(req.decode.kind);
    if (req.decode.kind == DecodeConfig::Kind::Temperature) {
      d["temperature"] = req.decode.temperature;
      d["seed"] = req.decode.seed;
    }
    j["decode"] = d;
  } else {
    throw FormatError("protocol: unknown request op " + req.op);
  }
  return j.dump();
}

Request decode_request(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("protocol: malformed request: ") + e.what());
  }
  Request req;
  req.op = j.at("op").get<std::string>();
  req.binary = j.value("binary", false);
  req.prompt = j.value("prompt", std::string());
  if (req.op == "capture") {
    req.layers = j.at("layers").get<std::vector<int>>();
    req.position = position_in(j.at("position"));
  } else if (req.op == "patched_forward") {
    req.layer = j.at("layer").get<int>();
    req.position = position_in(j.at("position"));
    req.vector_payload = floats_in(j.at("replacement"));
    req.target_token = j.value("target_token", std::string());
    req.topk = j.value("topk", 5);
  } else if (req.op == "forward_from_layer") {
    req.layer = j.at("layer").get<int>();
    req.position = position_in(j.at("position"));
    req.vector_payload = floats_in(j.at("hidden"));
    req.target_token = j.at("target_token").get<std::string>();
  } else if (req.op == "generate") {
    req.max_tokens = j.at("max_tokens").get<int>();
    if (j.contains("layers")) req.layers = j.at("layers").get<std::vector<int>>();
    if (j.contains("decode")) {
      const auto& d = j.at("decode");
      const std::string kind = d.value("kind", std::string("greedy"));
      if (kind == "greedy") {
        req.decode.kind = DecodeConfig::Kind::Greedy;
      } else if (kind == "temperature") {
        req.decode.kind = DecodeConfig::Kind::Temperature;
        req.decode.temperature = d.value("temperature", 1.0);
        req.decode.seed = d.value("seed", std::uint64_t{0});
      } else {
        throw FormatError("protocol: unknown decode kind " + kind);
      }
    }
  } else {
    throw FormatError("protocol: unknown request op " + req.op);
  }
  return req;
}

std::string encode_response(const Response& res) {
  json j;
  if (res.binary) j["binary"] = true;
  switch (res.kind) {
    case Response::Kind::Capture: {
      json rows = json::array();
      for (const auto& v : res.hidden) rows.push_back(floats_out(v, res.binary));
      j["hidden"] = rows;
      break;
    }
    case Response::Kind::PatchedForward: {
      json topk = json::array();
      for (const auto& [token, prob] : res.probs_topk) topk.push_back(json::array({token, prob}));
      j["probs_topk"] = topk;
      j["target_prob"] = res.target_prob;
      break;
    }
    case Response::Kind::ForwardFromLayer: {
      j["nll"] = res.nll;
      j["grad_hidden"] = floats_out(res.grad_hidden, res.binary);
      break;
    }
    case Response::Kind::Generate: {
      j["tokens"] = res.tokens;
      json hid;
      for (const auto& [layer, rows] : res.per_step_hidden) {
        json arr = json::array();
        for (const auto& v : rows) arr.push_back(floats_out(v, res.binary));
        hid[std::to_string(layer)] = arr;
      }
      j["per_step_hidden"] = hid;
      j["entropy"] = floats_out(res.entropy, res.binary);
      j["stop_reason"] = res.stop_reason;
      break;
    }
    case Response::Kind::Error: {
      j["error"] = res.error_code;
      j["message"] = res.message;
      break;
    }
  }
  return j.dump();
}

Response decode_response(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("protocol: malformed response: ") + e.what());
  }
  Response res;
  res.binary = j.value("binary", false);
  if (j.contains("error")) {
    res.kind = Response::Kind::Error;
    res.error_code = j.at("error").get<std::string>();
    res.message = j.value("message", std::string());
  } else if (j.contains("hidden")) {
    res.kind = Response::Kind::Capture;
    for (const auto& row : j.at("hidden")) res.hidden.push_back(floats_in(row));
  } else if (j.contains("probs_topk")) {
    res.kind = Response::Kind::PatchedForward;
    for (const auto& pair : j.at("probs_topk")) {
      res.probs_topk.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<double>());
    }
    res.target_prob = j.value("target_prob", 0.0);
  } else if (j.contains("nll")) {
    res.kind = Response::Kind::ForwardFromLayer;
    res.nll = j.at("nll").get<double>();
    res.grad_hidden = floats_in(j.at("grad_hidden"));
  } else if (j.contains("tokens")) {
    res.kind = Response::Kind::Generate;
    res.tokens = j.at("tokens").get<std::vector<std::string>>();
    if (j.contains("per_step_hidden")) {
      for (const auto& [key, rows] : j.at("per_step_hidden").items()) {
        auto& slot = res.per_step_hidden[std::stoi(key)];
        for (const auto& row : rows) slot.push_back(floats_in(row));
      }
    }
    res.entropy = floats_in(j.at("entropy"));
    res.stop_reason = j.at("stop_reason").get<std::string>();
  } else {
    throw FormatError("protocol: unrecognised response shape");
  }
  return res;
}

Response handle_request(Backend& backend, const Request& req) {
  Response res;
  res.binary = req.binary;
  if (req.op == "capture") {
    res.kind = Response::Kind::Capture;
    for (const auto& h : backend.capture(req.prompt, req.layers, req.position)) {
      res.hidden.emplace_back(h.values.data(), h.values.data() + h.values.size());
    }
  } else if (req.op == "patched_forward") {
    res.kind = Response::Kind::PatchedForward;
    Vector replacement(static_cast<Eigen::Index>(req.vector_payload.size()));
    for (std::size_t i = 0; i < req.vector_payload.size(); ++i) {
      replacement(static_cast<Eigen::Index>(i)) = req.vector_payload[i];
    }
    const auto dist =
        backend.patched_forward(req.prompt, req.layer, req.position, replacement, req.target_token, req.topk);
    res.probs_topk = dist.topk;
    res.target_prob = dist.target_prob;
  } else if (req.op == "forward_from_layer") {
    res.kind = Response::Kind::ForwardFromLayer;
    Vector hidden(static_cast<Eigen::Index>(req.vector_payload.size()));
    for (std::size_t i = 0; i < req.vector_payload.size(); ++i) {
      hidden(static_cast<Eigen::Index>(i)) = req.vector_payload[i];
    }
    const auto r = backend.forward_from_layer(req.prompt, req.layer, req.position, hidden, req.target_token);
    res.nll = r.nll;
    res.grad_hidden.assign(r.grad_hidden.data(), r.grad_hidden.data() + r.grad_hidden.size());
  } else if (req.op == "generate") {
    res.kind = Response::Kind::Generate;
    const auto gen = backend.generate(req.prompt, req.max_tokens, req.layers, req.decode);
    res.tokens = gen.tokens;
    for (const auto& [layer, hiddens] : gen.per_step_hidden) {
      auto& slot = res.per_step_hidden[layer];
      for (const auto& h : hiddens) {
        slot.emplace_back(h.values.data(), h.values.data() + h.values.size());
      }
    }
    res.entropy = gen.per_step_entropy;
    res.stop_reason = to_string(gen.stop_reason);
  } else {
    throw FormatError("protocol: unknown request op " + req.op);
  }
  return res;
}

namespace {

Response error_response(const std::string& code, const std::string& message, bool binary) {
  Response res;
  res.kind = Response::Kind::Error;
  res.binary = binary;
  res.error_code = code;
  res.message = message;
  return res;
}

std::string handle_single(Backend& backend, const json& j) {
  bool binary = j.is_object() && j.value("binary", false);
  try {
    const Request req = decode_request(j.dump());
    return encode_response(handle_request(backend, req));
  } catch (const FormatError& e) {
    return encode_response(error_response("format_error", e.what(), binary));
  } catch (const ValidationError& e) {
    return encode_response(error_response("validation_error", e.what(), binary));
  } catch (const BackendError& e) {
    return encode_response(error_response("backend_error", e.what(), binary));
  } catch (const std::exception& e) {
    return encode_response(error_response("internal_error", e.what(), binary));
  }
}

}  // namespace

std::string handle_line(Backend& backend, const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    return encode_response(error_response("format_error", e.what(), false));
  }
  if (j.is_array()) {
    // protocol-level batch: list of requests -> list of responses
    std::string out = "[";
    bool first = true;
    for (const auto& item : j) {
      if (!first) out += ',';
      first = false;
      out += handle_single(backend, item);
    }
    out += ']';
    return out;
  }
  return handle_single(backend, j);
}

void serve(Backend& backend, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out << handle_line(backend, line) << '\n';
    out.flush();
  }
}

std::string StreamTransport::roundtrip(const std::string& request_line) {
  out_ << request_line << '\n';
  out_.flush();
  std::string line;
  if (!std::getline(in_, line)) throw BackendError("external host closed the stream");
  return line;
}

std::string LoopbackTransport::roundtrip(const std::string& request_line) {
  return handle_line(backend_, request_line);
}

ExternalBackend::ExternalBackend(std::unique_ptr<Transport> transport, ModelInfo info, bool binary)
    : transport_(std::move(transport)), info_(std::move(info)), binary_(binary) {
  info_.backend_kind = "external";
}

Response ExternalBackend::call(const Request& req, Response::Kind expect) {
  const Response res = decode_response(transport_->roundtrip(encode_request(req)));
  if (res.kind == Response::Kind::Error) {
    throw BackendError("external host error [" + res.error_code + "]: " + res.message);
  }
  if (res.kind != expect) throw BackendError("external host returned a mismatched response type");
  return res;
}

GenerationResult ExternalBackend::generate(const std::string& prompt, int max_tokens,
                                           const std::vector<int>& capture_layers,
                                           const DecodeConfig& decode) {
  Request req;
  req.op = "generate";
  req.binary = binary_;
  req.prompt = prompt;
  req.max_tokens = max_tokens;
  req.layers = capture_layers;
  req.decode = decode;
  const Response res = call(req, Response::Kind::Generate);

  GenerationResult out;
  out.tokens = res.tokens;
  out.per_step_entropy = res.entropy;
  out.stop_reason = res.stop_reason == "eos" ? StopReason::Eos : StopReason::MaxTokens;
  for (const auto& [layer, rows] : res.per_step_hidden) {
    auto& slot = out.per_step_hidden[layer];
    for (std::size_t s = 0; s < rows.size(); ++s) {
      HiddenVector h;
      h.layer = layer;
      h.step = static_cast<int>(s);
      h.position = -1;  // the wire format does not carry absolute positions
      h.values = Eigen::Map<const Vector>(rows[s].data(), static_cast<Eigen::Index>(rows[s].size()));
      slot.push_back(std::move(h));
    }
  }
  return out;
}

std::vector<HiddenVector> ExternalBackend::capture(const std::string& prompt,
                                                   const std::vector<int>& layers, int position) {
  Request req;
  req.op = "capture";
  req.binary = binary_;
  req.prompt = prompt;
  req.layers = layers;
  req.position = position;
  const Response res = call(req, Response::Kind::Capture);
  if (res.hidden.size() != layers.size()) {
    throw BackendError("external host returned the wrong number of hidden vectors");
  }
  std::vector<HiddenVector> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    HiddenVector h;
    h.layer = layers[i];
    h.position = position;
    h.values = Eigen::Map<const Vector>(res.hidden[i].data(),
                                        static_cast<Eigen::Index>(res.hidden[i].size()));
    out.push_back(std::move(h));
  }
  return out;
}

NextTokenDistribution ExternalBackend::patched_forward(const std::string& prompt, int layer,
                                                       int position, const Vector& replacement,
                                                       const std::string& target_token, int topk) {
  Request req;
  req.op = "patched_forward";
  req.binary = binary_;
  req.prompt = prompt;
  req.layer = layer;
  req.position = position;
  req.vector_payload.assign(replacement.data(), replacement.data() + replacement.size());
  req.target_token = target_token;
  req.topk = topk;
  const Response res = call(req, Response::Kind::PatchedForward);
  NextTokenDistribution out;
  out.topk = res.probs_topk;
  out.target_prob = res.target_prob;
  if (!out.topk.empty()) out.argmax_token = out.topk.front().first;
  return out;
}

ForwardFromLayerResult ExternalBackend::forward_from_layer(const std::string& prompt, int layer,
                                                           int position, const Vector& hidden,
                                                           const std::string& target_token) {
  Request req;
  req.op = "forward_from_layer";
  req.binary = binary_;
  req.prompt = prompt;
  req.layer = layer;
  req.position = position;
  req.vector_payload.assign(hidden.data(), hidden.data() + hidden.size());
  req.target_token = target_token;
  const Response res = call(req, Response::Kind::ForwardFromLayer);
  ForwardFromLayerResult out;
  out.nll = res.nll;
  out.grad_hidden = Eigen::Map<const Vector>(res.grad_hidden.data(),
                                             static_cast<Eigen::Index>(res.grad_hidden.size()));
  return out;
}

}  // namespace pkck::protocol
