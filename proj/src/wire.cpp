#include "ecscan/wire.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>

namespace ecscan {

namespace {

constexpr size_t kHeaderLen = 12;
constexpr int kMaxPointerHops = 128;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

struct Reader {
  std::span<const uint8_t> data;
  size_t pos = 0;

  uint8_t u8() {
    if (pos + 1 > data.size()) throw MalformedMessage("message truncated");
    return data[pos++];
  }
  uint16_t u16() {
    if (pos + 2 > data.size()) throw MalformedMessage("message truncated");
    uint16_t v = static_cast<uint16_t>(data[pos] << 8 | data[pos + 1]);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    if (pos + 4 > data.size()) throw MalformedMessage("message truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = v << 8 | data[pos + i];
    pos += 4;
    return v;
  }
  std::span<const uint8_t> bytes(size_t n) {
    if (pos + n > data.size()) throw MalformedMessage("message truncated");
    auto s = data.subspan(pos, n);
    pos += n;
    return s;
  }
};

// Reads a possibly compressed name starting at r.pos, leaving r.pos just
// past it. Returns the uncompressed wire form (labels + root).
std::vector<uint8_t> read_name(Reader& r) {
  std::vector<uint8_t> out;
  size_t pos = r.pos;
  bool jumped = false;
  int hops = 0;
  while (true) {
    if (pos >= r.data.size()) throw MalformedMessage("name runs past message end");
    uint8_t len = r.data[pos];
    if ((len & 0xC0) == 0xC0) {
      if (pos + 2 > r.data.size()) throw MalformedMessage("dangling compression pointer");
      if (++hops > kMaxPointerHops) throw MalformedMessage("compression pointer loop");
      size_t target = static_cast<size_t>(len & 0x3F) << 8 | r.data[pos + 1];
      if (!jumped) r.pos = pos + 2;
      jumped = true;
      pos = target;
      continue;
    }
    if (len & 0xC0) throw MalformedMessage("reserved label type");
    if (len == 0) {
      out.push_back(0);
      if (!jumped) r.pos = pos + 1;
      break;
    }
    if (pos + 1 + len > r.data.size()) throw MalformedMessage("label runs past message end");
    out.insert(out.end(), r.data.begin() + pos, r.data.begin() + pos + 1 + len);
    if (out.size() > 255) throw MalformedMessage("name exceeds 255 octets");
    pos += 1 + len;
  }
  return out;
}

struct ParsedMessage {
  uint16_t txid = 0;
  uint16_t flags = 0;
  std::string qname;
  uint16_t qtype = 0;
  uint16_t qclass = 0;
  uint16_t qdcount = 0;
  std::vector<ResourceRecord> answers;
  // OPT fields
  bool has_opt = false;
  uint16_t opt_udp_size = 0;
  uint8_t opt_ext_rcode = 0;
  std::vector<std::pair<uint16_t, std::vector<uint8_t>>> opt_options;
};

ResourceRecord read_record(Reader& r) {
  ResourceRecord rr;
  rr.name = name_to_string(read_name(r));
  rr.type = r.u16();
  r.u16();  // class
  rr.ttl = r.u32();
  uint16_t rdlen = r.u16();
  size_t rd_start = r.pos;
  auto raw = r.bytes(rdlen);
  if (rr.type == kTypeNS || rr.type == kTypeCNAME || rr.type == kTypePTR) {
    Reader sub{r.data, rd_start};
    rr.rdata = read_name(sub);
    if (sub.pos > rd_start + rdlen) throw MalformedMessage("rdata name exceeds rdlength");
  } else {
    rr.rdata.assign(raw.begin(), raw.end());
  }
  return rr;
}

ParsedMessage parse_message(std::span<const uint8_t> data) {
  if (data.size() < kHeaderLen) throw MalformedMessage("message shorter than header");
  Reader r{data, 0};
  ParsedMessage m;
  m.txid = r.u16();
  m.flags = r.u16();
  m.qdcount = r.u16();
  uint16_t ancount = r.u16();
  uint16_t nscount = r.u16();
  uint16_t arcount = r.u16();
  if (m.qdcount > 1) throw MalformedMessage("multiple questions");
  if (m.qdcount == 1) {
    m.qname = name_to_string(read_name(r));
    m.qtype = r.u16();
    m.qclass = r.u16();
  }
  for (uint16_t i = 0; i < ancount; ++i) m.answers.push_back(read_record(r));
  for (uint16_t i = 0; i < nscount; ++i) read_record(r);
  for (uint16_t i = 0; i < arcount; ++i) {
    // OPT lives in the additional section; anything else is skipped.
    auto rr_name = read_name(r);
    uint16_t type = r.u16();
    uint16_t klass = r.u16();
    uint32_t ttl = r.u32();
    uint16_t rdlen = r.u16();
    auto rdata = r.bytes(rdlen);
    if (type != kTypeOPT) continue;
    if (rr_name.size() != 1) throw MalformedMessage("OPT name must be root");
    if (m.has_opt) throw MalformedMessage("duplicate OPT record");
    m.has_opt = true;
    m.opt_udp_size = klass;
    m.opt_ext_rcode = static_cast<uint8_t>(ttl >> 24);
    Reader opt{rdata, 0};
    while (opt.pos < rdata.size()) {
      uint16_t code = opt.u16();
      uint16_t len = opt.u16();
      auto payload = opt.bytes(len);
      m.opt_options.emplace_back(code, std::vector<uint8_t>(payload.begin(), payload.end()));
    }
  }
  return m;
}

}  // namespace

std::vector<uint8_t> encode_name(const std::string& name) {
  std::vector<uint8_t> out;
  std::string label;
  auto flush = [&] {
    if (label.empty()) throw MalformedMessage("empty label in name: " + name);
    if (label.size() > 63) throw NameTooLong("label exceeds 63 octets: " + label);
    out.push_back(static_cast<uint8_t>(label.size()));
    out.insert(out.end(), label.begin(), label.end());
    label.clear();
  };
  std::string n = name;
  if (!n.empty() && n.back() == '.') n.pop_back();
  if (!n.empty()) {
    for (char c : n) {
      if (c == '.')
        flush();
      else
        label.push_back(c);
    }
    flush();
  }
  out.push_back(0);
  if (out.size() > 255) throw NameTooLong("name exceeds 255 octets: " + name);
  return out;
}

std::string name_to_string(std::span<const uint8_t> wire_name) {
  std::string out;
  size_t pos = 0;
  while (pos < wire_name.size()) {
    uint8_t len = wire_name[pos++];
    if (len == 0) break;
    if (pos + len > wire_name.size()) throw MalformedMessage("bad wire name");
    if (!out.empty()) out.push_back('.');
    out.append(reinterpret_cast<const char*>(wire_name.data()) + pos, len);
    pos += len;
  }
  return out.empty() ? "." : out;
}

bool dns_name_equal(const std::string& a, const std::string& b) {
  auto trim = [](const std::string& s) {
    return !s.empty() && s.back() == '.' && s.size() > 1 ? s.substr(0, s.size() - 1) : s;
  };
  std::string x = trim(a), y = trim(b);
  if (x.size() != y.size()) return false;
  for (size_t i = 0; i < x.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(x[i])) !=
        std::tolower(static_cast<unsigned char>(y[i])))
      return false;
  return true;
}

std::vector<uint8_t> encode_ecs_option(const EcsOption& opt) {
  int width = family_width(opt.family);
  if (opt.source_len > width)
    throw InvalidLength("source prefix length exceeds family width");
  if (opt.scope_len > width)
    throw InvalidLength("scope prefix length exceeds family width");
  std::vector<uint8_t> out;
  put_u16(out, static_cast<uint16_t>(opt.family));
  out.push_back(opt.source_len);
  out.push_back(opt.scope_len);
  auto addr = addr_to_bytes(opt.family, opt.address.masked(opt.source_len));
  size_t addr_octets = (opt.source_len + 7) / 8;
  out.insert(out.end(), addr.begin(), addr.begin() + addr_octets);
  return out;
}

EcsOption decode_ecs_option(std::span<const uint8_t> data) {
  if (data.size() < 4) throw MalformedMessage("client-subnet option shorter than 4 octets");
  uint16_t family = static_cast<uint16_t>(data[0] << 8 | data[1]);
  if (family != 1 && family != 2)
    throw UnknownFamily("unknown address family " + std::to_string(family));
  EcsOption opt;
  opt.family = static_cast<Family>(family);
  opt.source_len = data[2];
  opt.scope_len = data[3];
  int width = family_width(opt.family);
  if (opt.source_len > width || opt.scope_len > width)
    throw MalformedMessage("prefix length exceeds family width");
  size_t addr_octets = (opt.source_len + 7) / 8;
  if (data.size() - 4 != addr_octets)
    throw MalformedMessage("address field length does not match source prefix length");
  opt.address = addr_from_bytes(opt.family, data.data() + 4, addr_octets).masked(opt.source_len);
  return opt;
}

namespace {

void append_opt_record(std::vector<uint8_t>& msg, uint16_t udp_size, int rcode_high,
                       const std::vector<std::pair<uint16_t, std::vector<uint8_t>>>& options) {
  msg.push_back(0);  // root name
  put_u16(msg, kTypeOPT);
  put_u16(msg, udp_size);
  put_u32(msg, static_cast<uint32_t>(rcode_high) << 24);
  std::vector<uint8_t> rdata;
  for (const auto& [code, payload] : options) {
    put_u16(rdata, code);
    put_u16(rdata, static_cast<uint16_t>(payload.size()));
    rdata.insert(rdata.end(), payload.begin(), payload.end());
  }
  put_u16(msg, static_cast<uint16_t>(rdata.size()));
  msg.insert(msg.end(), rdata.begin(), rdata.end());
}

}  // namespace

std::vector<uint8_t> build_query(const QuerySpec& spec) {
  auto qname = encode_name(spec.qname);
  std::vector<uint8_t> msg;
  put_u16(msg, spec.txid);
  put_u16(msg, spec.recursion_desired ? 0x0100 : 0x0000);
  put_u16(msg, 1);  // qdcount
  put_u16(msg, 0);
  put_u16(msg, 0);
  bool want_opt = spec.ecs.has_value() || spec.request_nsid || spec.udp_payload_size != 512;
  put_u16(msg, want_opt ? 1 : 0);
  msg.insert(msg.end(), qname.begin(), qname.end());
  put_u16(msg, spec.qtype);
  put_u16(msg, 1);  // IN
  if (want_opt) {
    std::vector<std::pair<uint16_t, std::vector<uint8_t>>> options;
    if (spec.ecs) options.emplace_back(kOptClientSubnet, encode_ecs_option(*spec.ecs));
    if (spec.request_nsid) options.emplace_back(kOptNSID, std::vector<uint8_t>{});
    append_opt_record(msg, spec.udp_payload_size, 0, options);
  }
  return msg;
}

ResponseSummary parse_response(std::span<const uint8_t> data) {
  auto m = parse_message(data);
  ResponseSummary rs;
  rs.txid = m.txid;
  rs.rcode = m.flags & 0x000F;
  if (m.has_opt) rs.rcode |= static_cast<int>(m.opt_ext_rcode) << 4;
  rs.truncated = (m.flags & 0x0200) != 0;
  rs.qname = m.qname;
  rs.qtype = m.qtype;
  rs.answers = std::move(m.answers);
  for (auto& [code, payload] : m.opt_options) {
    if (code == kOptClientSubnet && !rs.ecs_echo)
      rs.ecs_echo = decode_ecs_option(payload);
    else if (code == kOptNSID && !rs.nsid)
      rs.nsid = payload;
  }
  return rs;
}

QueryView parse_query(std::span<const uint8_t> data) {
  auto m = parse_message(data);
  if (m.qdcount != 1) throw MalformedMessage("query without question");
  QueryView q;
  q.txid = m.txid;
  q.qname = m.qname;
  q.qtype = m.qtype;
  q.recursion_desired = (m.flags & 0x0100) != 0;
  q.has_opt = m.has_opt;
  if (m.has_opt) q.udp_payload_size = std::max<uint16_t>(m.opt_udp_size, 512);
  for (auto& [code, payload] : m.opt_options) {
    if (code == kOptClientSubnet && !q.ecs)
      q.ecs = decode_ecs_option(payload);
    else if (code == kOptNSID)
      q.request_nsid = true;
  }
  return q;
}

std::vector<uint8_t> build_response(const QueryView& query, const ResponseSpec& spec) {
  std::vector<uint8_t> msg;
  put_u16(msg, query.txid);
  uint16_t flags = 0x8000;  // QR
  if (spec.authoritative) flags |= 0x0400;
  if (spec.truncated) flags |= 0x0200;
  if (query.recursion_desired) flags |= 0x0100;
  flags |= static_cast<uint16_t>(spec.rcode & 0x0F);
  put_u16(msg, flags);
  put_u16(msg, 1);
  put_u16(msg, static_cast<uint16_t>(spec.answers.size()));
  put_u16(msg, 0);
  bool want_opt = query.has_opt;
  put_u16(msg, want_opt ? 1 : 0);
  auto qname = encode_name(query.qname);
  msg.insert(msg.end(), qname.begin(), qname.end());
  put_u16(msg, query.qtype);
  put_u16(msg, 1);
  for (const auto& rr : spec.answers) {
    auto owner = encode_name(rr.name);
    msg.insert(msg.end(), owner.begin(), owner.end());
    put_u16(msg, rr.type);
    put_u16(msg, 1);
    put_u32(msg, rr.ttl);
    put_u16(msg, static_cast<uint16_t>(rr.rdata.size()));
    msg.insert(msg.end(), rr.rdata.begin(), rr.rdata.end());
  }
  if (want_opt) {
    std::vector<std::pair<uint16_t, std::vector<uint8_t>>> options;
    if (spec.ecs_scope && query.ecs) {
      EcsOption echo = *query.ecs;
      echo.scope_len = *spec.ecs_scope;
      options.emplace_back(kOptClientSubnet, encode_ecs_option(echo));
    }
    if (spec.nsid && query.request_nsid) options.emplace_back(kOptNSID, *spec.nsid);
    append_opt_record(msg, 1232, (spec.rcode >> 4) & 0xFF, options);
  }
  return msg;
}

std::string rdata_to_string(uint16_t type, std::span<const uint8_t> rdata) {
  if (type == kTypeA && rdata.size() == 4) {
    return addr_to_string(Family::v4, addr_from_bytes(Family::v4, rdata.data(), 4));
  }
  if (type == kTypeAAAA && rdata.size() == 16) {
    return addr_to_string(Family::v6, addr_from_bytes(Family::v6, rdata.data(), 16));
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(rdata.size() * 2);
  for (uint8_t b : rdata) {
    out.push_back(hex[b >> 4]);
    out.push_back(hex[b & 0xF]);
  }
  return out;
}

}  // namespace ecscan
