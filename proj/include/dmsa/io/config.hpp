#ifndef DMSA_IO_CONFIG_HPP
#define DMSA_IO_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include "dmsa/network.hpp"

// JSON network description:
//
//   { "depth": 50, "block_kind": "dmsa", "seed": 0,
//     "dmsa": { "splits": 4, "sa_groups": 8, "reduction": 16,
//               "kernel_schedule": [3,5,7,9], "conv_groups_schedule": [1,1,2,4],
//               "norm_variant": "instance", "fc_variant": "affine_gate",
//               "branch_agg": "softmax" } }
//
// Every key is optional; unknown keys are errors.
namespace dmsa::io {

struct NetConfig {
  Index depth = 50;
  BlockKind kind = BlockKind::dmsa_bottleneck;
  DmsaConfig dmsa;
  std::uint64_t seed = 0;
};

/// Throws InvalidConfig naming the offending key, or the line and column of
/// a JSON syntax error.
NetConfig parse_net_config(const std::string& text);
NetConfig load_net_config(const std::filesystem::path& path);

/// Canonical JSON with every default filled in.
std::string dump_net_config(const NetConfig& cfg);

}  // namespace dmsa::io

#endif  // DMSA_IO_CONFIG_HPP
