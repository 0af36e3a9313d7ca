#pragma once

#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ecscan/prefix.hpp"
#include "ecscan/wire.hpp"

namespace ecscan {

struct RecordAnswer {
  uint16_t type = 0;
  uint32_t ttl = 0;
  std::string rdata;  // presentation form for A/AAAA, hex otherwise

  friend bool operator==(const RecordAnswer&, const RecordAnswer&) = default;
};

// One query/response observation; the unit of persistence.
struct ScanRecord {
  double ts = 0;
  std::string qname;
  uint16_t qtype = kTypeA;
  std::string ns_ip;
  Family family = Family::v4;
  AddrBits ecs_addr{};
  uint8_t source_len = 0;
  std::optional<uint8_t> scope_len;  // present iff the response echoed option 8
  std::optional<int> rcode;
  std::vector<RecordAnswer> answers;
  std::optional<std::string> nsid_hex;
  double rtt_ms = 0;
  int attempt = 1;
  std::optional<std::string> error;

  Prefix ecs_prefix() const {
    return Prefix{family, ecs_addr.masked(source_len), source_len};
  }

  std::string to_jsonl() const;
  static ScanRecord from_jsonl(const std::string& line);
};

class RecordSink {
 public:
  virtual ~RecordSink() = default;
  virtual void write(const ScanRecord& r) = 0;
};

// Line-buffered JSONL writer; whole lines only, safe for many producers.
class JsonlFileSink : public RecordSink {
 public:
  explicit JsonlFileSink(const std::string& path);
  void write(const ScanRecord& r) override;
  uint64_t lines() const { return lines_; }

 private:
  std::mutex mu_;
  std::ofstream out_;
  uint64_t lines_ = 0;
};

class VectorSink : public RecordSink {
 public:
  void write(const ScanRecord& r) override {
    std::lock_guard<std::mutex> lock(mu_);
    records.push_back(r);
  }
  std::vector<ScanRecord> records;

 private:
  std::mutex mu_;
};

std::vector<ScanRecord> load_records(const std::string& path);

std::string qtype_to_string(uint16_t qtype);
std::optional<uint16_t> qtype_from_string(const std::string& s);

}  // namespace ecscan
