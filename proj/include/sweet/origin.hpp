#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sweet/bytes.hpp"
#include "sweet/netio.hpp"

// Synthetic web origin for benchmarks and end-to-end tests: a page is one
// HTML document plus N sub-resources, all with deterministic bodies, served
// over simulated connections with Connection: close semantics.

namespace sweet::origin {

struct Page {
  std::string name;
  size_t main_bytes = 2048;
  std::vector<size_t> object_sizes;

  size_t object_count() const { return object_sizes.size(); }
};

class SyntheticOrigin {
 public:
  std::string host = "origin.test";
  uint16_t port = 80;

  void add_page(Page page) { pages_[page.name] = std::move(page); }

  const Page* find(const std::string& name) const {
    auto it = pages_.find(name);
    return it == pages_.end() ? nullptr : &it->second;
  }

  std::string page_url(const std::string& name) const {
    return "http://" + host + ":" + std::to_string(port) + "/" + name;
  }

  // Deterministic pseudo-random object body, seeded by path.
  static Bytes object_body(const Page& page, size_t index) {
    size_t size = page.object_sizes.at(index);
    Bytes out(size);
    uint64_t state = 0xcbf29ce484222325ULL;
    for (char c : page.name) state = (state ^ uint8_t(c)) * 0x100000001b3ULL;
    state ^= index + 1;
    for (auto& b : out) {
      state = state * 6364136223846793005ULL + 1442695040888963407ULL;
      b = uint8_t(state >> 33);
    }
    return out;
  }

  static std::string page_html(const Page& page) {
    std::string html = "<html><head><title>" + page.name + "</title>";
    // First object rides an href, the rest ride src, so both attribute
    // forms of the sub-resource scan get exercised.
    if (page.object_count() > 0)
      html += "<link rel=\"stylesheet\" href=\"/" + page.name + "/obj/0\">";
    html += "</head><body>";
    for (size_t i = 1; i < page.object_count(); i++)
      html += "<img src=\"/" + page.name + "/obj/" + std::to_string(i) + "\">";
    while (html.size() + 14 < page.main_bytes) html += "<p>filler</p>\n";
    html += "</body></html>";
    return html;
  }

  // Ground truth for byte-comparison tests: what GET <path> returns.
  Bytes response_body(const std::string& path) const {
    std::string p = path;
    if (!p.empty() && p[0] == '/') p.erase(0, 1);
    size_t slash = p.find('/');
    std::string name = slash == std::string::npos ? p : p.substr(0, slash);
    const Page* page = find(name);
    if (!page) return {};
    if (slash == std::string::npos) return to_bytes(page_html(*page));
    std::string rest = p.substr(slash + 1);
    if (rest.rfind("obj/", 0) == 0) {
      size_t idx = size_t(std::atoll(rest.substr(4).c_str()));
      if (idx < page->object_count()) return object_body(*page, idx);
    }
    return {};
  }

  netio::SimDialer::ServiceFactory factory() const {
    return [this] { return std::make_unique<Service>(*this); };
  }

  void register_with(netio::SimDialer& dialer) const {
    dialer.register_service(host, port, factory());
  }

 private:
  class Service : public netio::SimService {
   public:
    explicit Service(const SyntheticOrigin& origin) : origin_(origin) {}

    void on_bytes(std::span<const uint8_t> data, netio::SimConnCtl& ctl) override {
      if (done_) return;
      buf_.insert(buf_.end(), data.begin(), data.end());
      static constexpr std::string_view kEnd = "\r\n\r\n";
      auto it = std::search(buf_.begin(), buf_.end(), kEnd.begin(), kEnd.end());
      if (it == buf_.end()) return;
      std::string line(buf_.begin(), buf_.end());
      line = line.substr(0, line.find("\r\n"));
      done_ = true;

      size_t sp1 = line.find(' ');
      size_t sp2 = line.rfind(' ');
      if (sp1 == std::string::npos || sp2 <= sp1 || line.substr(0, sp1) != "GET") {
        respond(ctl, "400 Bad Request", {});
        return;
      }
      std::string path = line.substr(sp1 + 1, sp2 - sp1 - 1);
      Bytes body = origin_.response_body(path);
      if (body.empty()) {
        respond(ctl, "404 Not Found", to_bytes("not found"));
      } else {
        respond(ctl, "200 OK", body);
      }
    }

   private:
    void respond(netio::SimConnCtl& ctl, const std::string& status, const Bytes& body) {
      std::string head = "HTTP/1.1 " + status + "\r\nContent-Length: " +
                         std::to_string(body.size()) + "\r\nConnection: close\r\n\r\n";
      ctl.push(to_bytes(head));
      if (!body.empty()) ctl.push(body);
      ctl.close();
    }

    const SyntheticOrigin& origin_;
    Bytes buf_;
    bool done_ = false;
  };

  std::map<std::string, Page> pages_;
};

}  // namespace sweet::origin
