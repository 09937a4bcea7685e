#include "gct/models/checkpoint.hpp"

#include "gct/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace gct::models {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'G', 'C', 'T', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw StructuralError("truncated checkpoint: " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& extra) {
  const ParameterStore& store = model.params();
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["model"] = to_json(model.spec());
  header["vocab"] = {{"dx", model.vocab().num_dx},
                     {"treatment", model.vocab().num_treat},
                     {"lab", model.vocab().num_lab}};
  header["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < store.size(); ++i)
    header["params"].push_back({{"name", store[i].name},
                                {"rows", store[i].value.rows()},
                                {"cols", store[i].value.cols()}});
  header["extra"] = extra;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Matrix& m = store[i].value;
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  }
  if (!out) throw ConfigError("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw StructuralError("not a checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw StructuralError("unsupported checkpoint version " + std::to_string(version));
  const auto len = get<std::uint64_t>(in, path);
  if (len > (std::uint64_t{1} << 30)) throw StructuralError("implausible checkpoint header");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw StructuralError("truncated checkpoint header: " + path.string());

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.spec = model_spec_from_json(header.at("model"));
    const auto& v = header.at("vocab");
    ck.vocab = {v.at("dx").get<int>(), v.at("treatment").get<int>(), v.at("lab").get<int>()};
    ck.extra = header.value("extra", nlohmann::json::object());
    for (const auto& p : header.at("params")) {
      Matrix m(p.at("rows").get<Eigen::Index>(), p.at("cols").get<Eigen::Index>());
      if (!in.read(reinterpret_cast<char*>(m.data()),
                   static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size()))))
        throw StructuralError("truncated checkpoint data: " + path.string());
      ck.params.emplace_back(p.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("bad checkpoint header: ") + e.what());
  }
  return ck;
}

void load_parameters(ParameterStore& store, const Checkpoint& ckpt) {
  if (ckpt.params.size() != store.size())
    throw ContractError("checkpoint has " + std::to_string(ckpt.params.size()) +
                        " parameters, model has " + std::to_string(store.size()));
  for (const auto& [name, value] : ckpt.params) {
    Parameter* p = store.find(name);
    if (!p) throw ContractError("checkpoint parameter '" + name + "' not in model");
    if (p->value.rows() != value.rows() || p->value.cols() != value.cols())
      throw ContractError("checkpoint parameter '" + name + "' has the wrong shape");
    p->value = value;
  }
}

}  // namespace gct::models
