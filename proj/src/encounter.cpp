#include "gct/encounter.hpp"

#include "gct/errors.hpp"

#include <algorithm>
#include <charconv>

namespace gct {

Vocab infer_vocab(const std::vector<Encounter>& encounters) {
  Vocab v;
  for (const auto& e : encounters) {
    for (int c : e.dx) v.num_dx = std::max(v.num_dx, c + 1);
    for (int c : e.treat) v.num_treat = std::max(v.num_treat, c + 1);
    for (int c : e.lab) v.num_lab = std::max(v.num_lab, c + 1);
  }
  // Empty tables still need one row so the embedding matrices are well-formed.
  v.num_dx = std::max(v.num_dx, 1);
  v.num_treat = std::max(v.num_treat, 1);
  v.num_lab = std::max(v.num_lab, 1);
  return v;
}

char kind_letter(NodeKind k) {
  switch (k) {
    case NodeKind::Visit: return 'v';
    case NodeKind::Dx: return 'd';
    case NodeKind::Treatment: return 'm';
    case NodeKind::Lab: return 'r';
  }
  return '?';
}

std::string node_ref_to_string(const NodeRef& ref) {
  return std::string(1, kind_letter(ref.kind)) + ":" + std::to_string(ref.position);
}

NodeRef node_ref_from_string(const std::string& s) {
  if (s.size() < 3 || s[1] != ':') throw StructuralError("bad node reference: " + s);
  NodeRef r;
  switch (s[0]) {
    case 'v': r.kind = NodeKind::Visit; break;
    case 'd': r.kind = NodeKind::Dx; break;
    case 'm': r.kind = NodeKind::Treatment; break;
    case 'r': r.kind = NodeKind::Lab; break;
    default: throw StructuralError("bad node kind in reference: " + s);
  }
  const char* first = s.data() + 2;
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, r.position);
  if (ec != std::errc() || ptr != last || r.position < 0)
    throw StructuralError("bad node position in reference: " + s);
  return r;
}

}  // namespace gct
