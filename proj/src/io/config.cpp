#include "dmsa/io/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace dmsa::io {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw InvalidConfig("config: " + where + ": " + what);
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) bad(where, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) bad(where, "unknown key '" + key + "'");
  }
}

Index get_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) bad(where, "expected an integer, got " + v.dump());
  return v.get<Index>();
}

std::string get_string(const json& v, const std::string& where) {
  if (!v.is_string()) bad(where, "expected a string, got " + v.dump());
  return v.get<std::string>();
}

std::vector<Index> get_int_list(const json& v, const std::string& where) {
  if (!v.is_array()) bad(where, "expected an array of integers");
  std::vector<Index> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(get_int(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

template <typename F>
auto with_field(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const UnknownVariant& e) {
    bad(where, e.what());
  }
}

// Line and column of a byte offset, both 1-based.
std::string position(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

NetConfig parse_net_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidConfig("config: syntax error at " + position(text, e.byte == 0 ? 0 : e.byte - 1) + ": " + e.what());
  }
  check_keys(doc, "top level", {"depth", "block_kind", "dmsa", "seed"});
  NetConfig cfg;
  if (doc.contains("depth")) cfg.depth = get_int(doc["depth"], "depth");
  if (doc.contains("block_kind")) {
    cfg.kind = with_field("block_kind", [&] { return parse_block_kind(get_string(doc["block_kind"], "block_kind")); });
  }
  if (doc.contains("seed")) {
    const Index s = get_int(doc["seed"], "seed");
    if (s < 0) bad("seed", "must be non-negative");
    cfg.seed = static_cast<std::uint64_t>(s);
  }
  if (doc.contains("dmsa")) {
    const json& d = doc["dmsa"];
    check_keys(d, "dmsa",
               {"splits", "sa_groups", "reduction", "kernel_schedule", "conv_groups_schedule", "norm_variant",
                "fc_variant", "branch_agg"});
    DmsaConfig& m = cfg.dmsa;
    if (d.contains("splits")) m.splits = get_int(d["splits"], "dmsa.splits");
    if (d.contains("sa_groups")) m.sa_groups = get_int(d["sa_groups"], "dmsa.sa_groups");
    if (d.contains("reduction")) m.reduction = get_int(d["reduction"], "dmsa.reduction");
    if (d.contains("kernel_schedule")) m.kernel_schedule = get_int_list(d["kernel_schedule"], "dmsa.kernel_schedule");
    if (d.contains("conv_groups_schedule")) {
      m.conv_groups_schedule = get_int_list(d["conv_groups_schedule"], "dmsa.conv_groups_schedule");
    }
    if (d.contains("norm_variant")) {
      m.norm_variant = with_field("dmsa.norm_variant",
                                  [&] { return parse_norm_variant(get_string(d["norm_variant"], "dmsa.norm_variant")); });
    }
    if (d.contains("fc_variant")) {
      m.fc_variant =
          with_field("dmsa.fc_variant", [&] { return parse_fc_variant(get_string(d["fc_variant"], "dmsa.fc_variant")); });
    }
    if (d.contains("branch_agg")) {
      m.branch_agg =
          with_field("dmsa.branch_agg", [&] { return parse_branch_agg(get_string(d["branch_agg"], "dmsa.branch_agg")); });
    }
  }
  // Surface depth and per-stage divisibility problems at load time.
  if (cfg.depth != 50 && cfg.depth != 101) bad("depth", "expected 50 or 101, got " + std::to_string(cfg.depth));
  if (cfg.kind == BlockKind::dmsa_bottleneck) {
    for (const auto& st : NetworkSpec::for_depth(cfg.depth, cfg.kind).stages) {
      DmsaConfig c = cfg.dmsa;
      c.channels = st.inner_width;
      try {
        c.validate();
      } catch (const InvalidConfig& e) {
        bad("dmsa", std::string(e.what()) + " (stage width " + std::to_string(st.inner_width) + ")");
      }
    }
  }
  return cfg;
}

NetConfig load_net_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_net_config(ss.str());
}

std::string dump_net_config(const NetConfig& cfg) {
  const DmsaConfig& m = cfg.dmsa;
  json d = {{"splits", m.splits},
            {"sa_groups", m.sa_groups},
            {"reduction", m.reduction},
            {"kernel_schedule", m.kernel_schedule},
            {"conv_groups_schedule", m.conv_groups_schedule},
            {"norm_variant", to_string(m.norm_variant)},
            {"fc_variant", to_string(m.fc_variant)},
            {"branch_agg", to_string(m.branch_agg)}};
  json doc = {{"depth", cfg.depth}, {"block_kind", to_string(cfg.kind)}, {"seed", cfg.seed}, {"dmsa", d}};
  return doc.dump(2);
}

}  // namespace dmsa::io
