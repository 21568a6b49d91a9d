#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "rcnnlab/synthdata.hpp"

namespace rcnnlab {

namespace {

std::string hex(double v) { return fmt::format("{:a}", v); }

double parse_real(const std::string& tok, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size())
    throw std::runtime_error(fmt::format("dataset line {}: bad real '{}'", line, tok));
  return v;
}

long long parse_int(const std::string& tok, std::size_t line) {
  char* end = nullptr;
  const long long v = std::strtoll(tok.c_str(), &end, 10);
  if (tok.empty() || end != tok.c_str() + tok.size())
    throw std::runtime_error(fmt::format("dataset line {}: bad integer '{}'", line, tok));
  return v;
}

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  bool next(std::istringstream& out) {
    std::string text;
    while (std::getline(is_, text)) {
      ++line_;
      if (text.empty()) continue;
      out.clear();
      out.str(text);
      return true;
    }
    return false;
  }

  std::size_t line() const { return line_; }

 private:
  std::istream& is_;
  std::size_t line_ = 0;
};

std::string token(std::istringstream& ls, std::size_t line) {
  std::string t;
  if (!(ls >> t)) throw std::runtime_error(fmt::format("dataset line {}: truncated record", line));
  return t;
}

void expect_tag(std::istringstream& ls, const char* tag, std::size_t line) {
  const std::string t = token(ls, line);
  if (t != tag) throw std::runtime_error(fmt::format("dataset line {}: expected '{}', got '{}'", line, tag, t));
}

}  // namespace

void write_dataset(std::ostream& os, std::span<const SceneRecord> records) {
  for (const SceneRecord& r : records) {
    const Scene& s = r.scene;
    fmt::print(os, "scene {} {} {} {} {}\n", s.id, hex(s.width), hex(s.height), s.instances.size(),
               r.proposals.size());
    for (const auto& gt : s.instances)
      fmt::print(os, "gt {} {} {} {} {}\n", gt.class_id, hex(gt.box.x1), hex(gt.box.y1), hex(gt.box.x2),
                 hex(gt.box.y2));
    for (const Proposal& p : r.proposals) {
      const ProposalLabel& l = p.label;
      fmt::print(os, "prop {} {} {} {} {} {} {}", hex(p.box.x1), hex(p.box.y1), hex(p.box.x2), hex(p.box.y2),
                 l.class_id, hex(l.max_iou), l.matched_gt ? std::to_string(*l.matched_gt) : std::string("-"));
      if (l.regression_target) {
        const Deltas& d = *l.regression_target;
        fmt::print(os, " {} {} {} {}", hex(d[0]), hex(d[1]), hex(d[2]), hex(d[3]));
      } else {
        os << " - - - -";
      }
      fmt::print(os, " {}", p.feature.size());
      for (Eigen::Index i = 0; i < p.feature.size(); ++i) fmt::print(os, " {}", hex(p.feature[i]));
      os << '\n';
    }
  }
}

std::vector<SceneRecord> read_dataset(std::istream& is) {
  std::vector<SceneRecord> out;
  LineReader reader(is);
  std::istringstream ls;
  while (reader.next(ls)) {
    const std::size_t ln = reader.line();
    expect_tag(ls, "scene", ln);
    SceneRecord rec;
    rec.scene.id = static_cast<std::uint64_t>(parse_int(token(ls, ln), ln));
    rec.scene.width = parse_real(token(ls, ln), ln);
    rec.scene.height = parse_real(token(ls, ln), ln);
    const long long n_gt = parse_int(token(ls, ln), ln);
    const long long n_prop = parse_int(token(ls, ln), ln);
    if (n_gt < 0 || n_prop < 0) throw std::runtime_error(fmt::format("dataset line {}: negative count", ln));

    for (long long i = 0; i < n_gt; ++i) {
      if (!reader.next(ls)) throw std::runtime_error("dataset: unexpected end of file in gt list");
      const std::size_t l = reader.line();
      expect_tag(ls, "gt", l);
      GroundTruthInstance gt;
      gt.class_id = static_cast<int>(parse_int(token(ls, l), l));
      const double x1 = parse_real(token(ls, l), l);
      const double y1 = parse_real(token(ls, l), l);
      const double x2 = parse_real(token(ls, l), l);
      const double y2 = parse_real(token(ls, l), l);
      gt.box = make_box(x1, y1, x2, y2);
      rec.scene.instances.push_back(gt);
    }

    for (long long i = 0; i < n_prop; ++i) {
      if (!reader.next(ls)) throw std::runtime_error("dataset: unexpected end of file in proposal list");
      const std::size_t l = reader.line();
      expect_tag(ls, "prop", l);
      Proposal p;
      p.scene_id = rec.scene.id;
      const double x1 = parse_real(token(ls, l), l);
      const double y1 = parse_real(token(ls, l), l);
      const double x2 = parse_real(token(ls, l), l);
      const double y2 = parse_real(token(ls, l), l);
      p.box = make_box(x1, y1, x2, y2);
      p.label.class_id = static_cast<int>(parse_int(token(ls, l), l));
      p.label.max_iou = parse_real(token(ls, l), l);
      const std::string matched = token(ls, l);
      if (matched != "-") p.label.matched_gt = static_cast<std::size_t>(parse_int(matched, l));
      std::string t0 = token(ls, l);
      if (t0 == "-") {
        for (int k = 0; k < 3; ++k) token(ls, l);
      } else {
        Deltas d;
        d[0] = parse_real(t0, l);
        for (int k = 1; k < 4; ++k) d[k] = parse_real(token(ls, l), l);
        p.label.regression_target = d;
      }
      const long long dim = parse_int(token(ls, l), l);
      if (dim < 0) throw std::runtime_error(fmt::format("dataset line {}: negative feature dim", l));
      p.feature.resize(dim);
      for (long long k = 0; k < dim; ++k) p.feature[k] = parse_real(token(ls, l), l);
      rec.proposals.push_back(std::move(p));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace rcnnlab
