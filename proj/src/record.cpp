#include "ecscan/record.hpp"

#include <stdexcept>

#include <json.hpp>

namespace ecscan {

using nlohmann::json;

std::string qtype_to_string(uint16_t qtype) {
  switch (qtype) {
    case kTypeA:
      return "A";
    case kTypeAAAA:
      return "AAAA";
    case kTypeNS:
      return "NS";
    case kTypeCNAME:
      return "CNAME";
    case kTypeTXT:
      return "TXT";
    case kTypePTR:
      return "PTR";
    default:
      return std::to_string(qtype);
  }
}

std::optional<uint16_t> qtype_from_string(const std::string& s) {
  if (s == "A") return kTypeA;
  if (s == "AAAA") return kTypeAAAA;
  if (s == "NS") return kTypeNS;
  if (s == "CNAME") return kTypeCNAME;
  if (s == "TXT") return kTypeTXT;
  if (s == "PTR") return kTypePTR;
  if (!s.empty() && s.find_first_not_of("0123456789") == std::string::npos) {
    unsigned long v = std::stoul(s);
    if (v <= 65535) return static_cast<uint16_t>(v);
  }
  return std::nullopt;
}

std::string ScanRecord::to_jsonl() const {
  json j;
  j["ts"] = ts;
  j["qname"] = qname;
  j["qtype"] = qtype_to_string(qtype);
  j["ns_ip"] = ns_ip;
  j["family"] = static_cast<int>(family);
  j["ecs_prefix"] = addr_to_string(family, ecs_addr.masked(source_len));
  j["source_len"] = source_len;
  j["scope_len"] = scope_len ? json(*scope_len) : json(nullptr);
  j["rcode"] = rcode ? json(*rcode) : json(nullptr);
  json ans = json::array();
  for (const auto& a : answers)
    ans.push_back({{"type", a.type}, {"ttl", a.ttl}, {"rdata", a.rdata}});
  j["answers"] = ans;
  j["nsid"] = nsid_hex ? json(*nsid_hex) : json(nullptr);
  j["rtt_ms"] = rtt_ms;
  j["attempt"] = attempt;
  j["error"] = error ? json(*error) : json(nullptr);
  return j.dump();
}

ScanRecord ScanRecord::from_jsonl(const std::string& line) {
  json j = json::parse(line);
  ScanRecord r;
  r.ts = j.value("ts", 0.0);
  r.qname = j.value("qname", "");
  if (j.contains("qtype")) {
    if (j["qtype"].is_string()) {
      auto t = qtype_from_string(j["qtype"].get<std::string>());
      if (!t) throw std::runtime_error("bad qtype in record: " + line);
      r.qtype = *t;
    } else {
      r.qtype = j["qtype"].get<uint16_t>();
    }
  }
  r.ns_ip = j.value("ns_ip", "");
  r.family = j.value("family", 1) == 2 ? Family::v6 : Family::v4;
  r.source_len = j.value("source_len", 0);
  if (j.contains("ecs_prefix") && j["ecs_prefix"].is_string()) {
    auto bits = addr_parse(r.family, j["ecs_prefix"].get<std::string>());
    if (!bits) throw std::runtime_error("bad ecs_prefix in record: " + line);
    r.ecs_addr = bits->masked(r.source_len);
  }
  if (j.contains("scope_len") && !j["scope_len"].is_null())
    r.scope_len = j["scope_len"].get<uint8_t>();
  if (j.contains("rcode") && !j["rcode"].is_null()) r.rcode = j["rcode"].get<int>();
  if (j.contains("answers")) {
    for (const auto& a : j["answers"]) {
      RecordAnswer ra;
      ra.type = a.value("type", 0);
      ra.ttl = a.value("ttl", 0u);
      ra.rdata = a.value("rdata", "");
      r.answers.push_back(std::move(ra));
    }
  }
  if (j.contains("nsid") && !j["nsid"].is_null()) r.nsid_hex = j["nsid"].get<std::string>();
  r.rtt_ms = j.value("rtt_ms", 0.0);
  r.attempt = j.value("attempt", 1);
  if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
  return r;
}

JsonlFileSink::JsonlFileSink(const std::string& path)
    : out_(path, std::ios::out | std::ios::app) {
  if (!out_) throw std::runtime_error("cannot open output file: " + path);
}

void JsonlFileSink::write(const ScanRecord& r) {
  std::string line = r.to_jsonl();
  line.push_back('\n');
  std::lock_guard<std::mutex> lock(mu_);
  out_ << line;
  out_.flush();  // a killed run leaves only whole lines
  ++lines_;
}

std::vector<ScanRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open record file: " + path);
  std::vector<ScanRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(ScanRecord::from_jsonl(line));
  }
  return out;
}

}  // namespace ecscan
