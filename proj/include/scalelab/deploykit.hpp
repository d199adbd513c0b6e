#pragma once

// Deterministic generation of container build/conversion recipes and batch
// job scripts for unprivileged-container launches. Text only: nothing here
// executes a container, scheduler or network command.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scalelab/error.hpp"
#include "scalelab/kvconfig.hpp"
#include "scalelab/topo.hpp"

namespace scalelab::deploy {

enum class Fabric { native, tcp_fallback };

struct BindMount {
  std::string host_path;
  std::string container_path;

  bool operator==(const BindMount&) const = default;
};

using EnvList = std::vector<std::pair<std::string, std::string>>;

struct LaunchRecipe {
  std::string job_name = "scalelab";
  std::string image_name;
  std::string container_dir;
  std::string host_mpi_dir;  // empty: the container's own MPI is used
  std::vector<BindMount> bind_mounts;
  Fabric fabric = Fabric::native;
  std::uint64_t nodes = 1;
  topo::PlacementPlan plan;
  EnvList env;
  std::string command;
  // The container lacks the host fabric's native provider (e.g. an Ubuntu
  // image without psm2 on OmniPath), so MPI must fall back to TCP.
  bool missing_fabric_driver = false;
};

struct ContainerRecipe {
  std::string image_name;
  std::string base_image;
  std::vector<std::string> install_steps;
  std::vector<std::string> export_steps;  // `{image}` is substituted
};

// Launcher syntax as data. `{name}` placeholders are substituted at render.
struct LauncherTemplate {
  std::string label = "paper-style Slurm/Charliecloud template";
  std::string job_shebang = "#!/bin/bash";
  std::string directive_prefix = "#SBATCH";
  std::string job_name_directive = "--job-name={job}";
  std::string nodes_directive = "--nodes={nodes}";
  std::string tasks_directive = "--ntasks-per-node={tasks}";
  std::string cpus_directive = "--cpus-per-task={cpus}";
  std::string ht_on_directive = "--hint=multithread";
  std::string ht_off_directive = "--hint=nomultithread";
  std::string launch_line = "srun ch-run{binds} {container} -- {command}";
  std::string bind_flag = " -b {host}:{container}";
  EnvList tcp_fabric_env{{"I_MPI_FABRICS", "shm:tcp"}};

  std::string build_shebang = "#!/bin/sh";
  std::string pull = "docker pull {base}";
  std::string build = "docker build -t {image} -f Dockerfile.{image} .";
  std::string save = "docker save -o {image}.docker.tar {image}";
  std::string copy_placeholder = "# scp {image}.tar.gz <user>@<login-node>:<image-dir>/";
};

inline const LauncherTemplate& default_template() {
  static const LauncherTemplate t{};
  return t;
}

inline std::string substitute(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        auto it = vars.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

namespace detail {

inline void require(const std::string& value, const char* field) {
  if (value.find_first_not_of(" \t") == std::string::npos)
    throw Error(ErrorKind::EmptyField, std::string(field) + " must not be empty");
}

inline bool is_absolute(const std::string& p) { return !p.empty() && p.front() == '/'; }

inline bool shell_safe(std::string_view v) {
  return !v.empty() && std::all_of(v.begin(), v.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || std::string_view("_./:,=+-@%").find(c) != std::string_view::npos;
  });
}

inline std::string shell_quote(std::string_view v) {
  if (shell_safe(v)) return std::string(v);
  std::string out = "'";
  for (char c : v) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

inline std::string shell_unquote(std::string_view v) {
  std::string out;
  bool in_single = false;
  for (std::size_t i = 0; i < v.size(); ++i) {
    char c = v[i];
    if (c == '\'') {
      in_single = !in_single;
    } else if (!in_single && c == '\\' && i + 1 < v.size()) {
      out += v[++i];
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Container build and conversion

inline void validate(const ContainerRecipe& c) {
  detail::require(c.image_name, "image_name");
  detail::require(c.base_image, "base_image");
  if (c.install_steps.empty()) throw Error(ErrorKind::EmptyField, "install_steps must not be empty");
  if (c.export_steps.empty()) throw Error(ErrorKind::EmptyField, "export_steps must not be empty");
  for (const auto& s : c.install_steps) detail::require(s, "install step");
  for (const auto& s : c.export_steps) detail::require(s, "export step");
}

// Pull, install (build phase), save, convert to the unprivileged format,
// then the copy-to-cluster placeholder. The build phase always precedes
// conversion.
inline std::string render_container_recipe(const ContainerRecipe& c, const LauncherTemplate& t = default_template()) {
  validate(c);
  const std::map<std::string, std::string> vars{{"image", c.image_name}, {"base", c.base_image}};
  std::ostringstream out;
  out << t.build_shebang << "\n";
  out << "# Container recipe for " << c.image_name << " (" << t.label << ")\n";
  out << "set -eu\n\n";
  out << "# 1. pull the base image\n" << substitute(t.pull, vars) << "\n\n";
  out << "# 2. install (build phase, privileged workstation)\n";
  out << "cat > Dockerfile." << c.image_name << " <<'DOCKERFILE'\n";
  out << "FROM " << c.base_image << "\n";
  for (const auto& s : c.install_steps) out << "RUN " << s << "\n";
  out << "DOCKERFILE\n";
  out << substitute(t.build, vars) << "\n\n";
  out << "# 3. save the image\n" << substitute(t.save, vars) << "\n\n";
  out << "# 4. convert to the unprivileged image format\n";
  for (const auto& s : c.export_steps) out << substitute(s, vars) << "\n";
  out << "\n# 5. copy to the cluster (placeholder, not executed)\n" << substitute(t.copy_placeholder, vars) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Job scripts

// OMP_NUM_THREADS first, then the user's variables in order, then the TCP
// fabric override when requested.
inline EnvList effective_env(const LaunchRecipe& r, const LauncherTemplate& t = default_template()) {
  const std::string threads = std::to_string(r.plan.threads_per_rank);
  EnvList env{{"OMP_NUM_THREADS", threads}};
  for (const auto& [k, v] : r.env) {
    detail::require(k, "env key");
    if (k == "OMP_NUM_THREADS") {
      if (v != threads)
        throw Error(ErrorKind::InvalidInput, "OMP_NUM_THREADS=" + v + " contradicts threads_per_rank=" + threads);
      continue;
    }
    env.emplace_back(k, v);
  }
  if (r.fabric == Fabric::tcp_fallback) {
    for (const auto& kv : t.tcp_fabric_env) env.push_back(kv);
  }
  return env;
}

// User binds, with the host MPI directory mirrored at the identical
// in-container path (prepended when the user did not list it).
inline std::vector<BindMount> effective_binds(const LaunchRecipe& r) {
  std::vector<BindMount> binds;
  bool have_mpi = false;
  for (const auto& b : r.bind_mounts) {
    if (!detail::is_absolute(b.host_path) || !detail::is_absolute(b.container_path))
      throw Error(ErrorKind::InvalidInput, "bind mount paths must be absolute: " + b.host_path + ":" + b.container_path);
    if (!r.host_mpi_dir.empty() && b.host_path == r.host_mpi_dir) {
      if (b.container_path != r.host_mpi_dir)
        throw Error(ErrorKind::InvalidInput, "host MPI directory must be bound at the identical container path");
      if (have_mpi) continue;
      have_mpi = true;
    }
    binds.push_back(b);
  }
  if (!r.host_mpi_dir.empty()) {
    if (!detail::is_absolute(r.host_mpi_dir)) throw Error(ErrorKind::InvalidInput, "host_mpi_dir must be absolute");
    if (!have_mpi) binds.insert(binds.begin(), {r.host_mpi_dir, r.host_mpi_dir});
  }
  return binds;
}

inline std::string render_job_script(const LaunchRecipe& r, const topo::NodeSpec& node,
                                     const LauncherTemplate& t = default_template()) {
  detail::require(r.job_name, "job_name");
  detail::require(r.container_dir, "container_dir");
  detail::require(r.command, "command");
  if (r.nodes < 1) throw Error(ErrorKind::InvalidInput, "nodes must be >= 1");
  const auto validated = topo::validate_placement(node, r.plan);
  const auto env = effective_env(r, t);
  const auto binds = effective_binds(r);

  const std::map<std::string, std::string> vars{
      {"job", r.job_name},
      {"nodes", std::to_string(r.nodes)},
      {"tasks", std::to_string(validated.plan.ranks_per_node)},
      {"cpus", std::to_string(validated.plan.threads_per_rank)},
      {"container", r.container_dir},
      {"command", r.command},
  };
  std::string bind_flags;
  for (const auto& b : binds) bind_flags += substitute(t.bind_flag, {{"host", b.host_path}, {"container", b.container_path}});

  std::ostringstream out;
  out << t.job_shebang << "\n";
  out << "# " << t.label << "\n";
  for (const auto* d : {&t.job_name_directive, &t.nodes_directive, &t.tasks_directive, &t.cpus_directive})
    out << t.directive_prefix << " " << substitute(*d, vars) << "\n";
  out << t.directive_prefix << " " << (r.plan.hyperthreading ? t.ht_on_directive : t.ht_off_directive) << "\n\n";
  for (const auto& [k, v] : env) out << "export " << k << "=" << detail::shell_quote(v) << "\n";
  out << "\n";
  auto launch_vars = vars;
  launch_vars["binds"] = bind_flags;
  out << substitute(t.launch_line, launch_vars) << "\n";
  return out.str();
}

struct JobScriptSummary {
  std::uint64_t nodes = 0;
  std::uint32_t tasks_per_node = 0;
  std::uint32_t cpus_per_task = 0;
  EnvList env;
  std::vector<BindMount> binds;
  std::string container_dir;
  std::string command;
};

// Reads back what render_job_script wrote (default template).
inline JobScriptSummary parse_job_script(std::string_view text) {
  JobScriptSummary s;
  auto number_after = [](std::string_view line, std::string_view key) -> std::optional<std::uint64_t> {
    auto at = line.find(key);
    if (at == std::string_view::npos) return std::nullopt;
    auto digits = line.substr(at + key.size());
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec != std::errc()) throw Error(ErrorKind::InvalidInput, "bad directive: " + std::string(line));
    return v;
  };
  std::size_t pos = 0;
  bool saw_launch = false;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.starts_with("#SBATCH ")) {
      if (auto v = number_after(line, "--nodes=")) s.nodes = *v;
      if (auto v = number_after(line, "--ntasks-per-node=")) s.tasks_per_node = static_cast<std::uint32_t>(*v);
      if (auto v = number_after(line, "--cpus-per-task=")) s.cpus_per_task = static_cast<std::uint32_t>(*v);
    } else if (line.starts_with("export ")) {
      auto kv = line.substr(7);
      auto eq = kv.find('=');
      if (eq == std::string_view::npos) throw Error(ErrorKind::InvalidInput, "bad export: " + std::string(line));
      s.env.emplace_back(std::string(kv.substr(0, eq)), detail::shell_unquote(kv.substr(eq + 1)));
    } else if (line.starts_with("srun ")) {
      saw_launch = true;
      auto sep = line.find(" -- ");
      if (sep == std::string_view::npos) throw Error(ErrorKind::InvalidInput, "launch line lacks ' -- '");
      s.command = std::string(line.substr(sep + 4));
      std::istringstream words{std::string(line.substr(0, sep))};
      std::vector<std::string> tokens;
      for (std::string w; words >> w;) tokens.push_back(w);
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == "-b" && i + 1 < tokens.size()) {
          const auto& spec = tokens[++i];
          auto colon = spec.find(':');
          if (colon == std::string::npos) throw Error(ErrorKind::InvalidInput, "bad bind flag: " + spec);
          s.binds.push_back({spec.substr(0, colon), spec.substr(colon + 1)});
        }
      }
      if (!tokens.empty()) s.container_dir = tokens.back();
    }
  }
  if (!saw_launch) throw Error(ErrorKind::InvalidInput, "job script has no launch line");
  return s;
}

// ---------------------------------------------------------------------------
// Findings

enum class FindingKind { MixedMpiWarning, FabricWarning, PlacementError };

inline std::string_view to_string(FindingKind k) {
  switch (k) {
    case FindingKind::MixedMpiWarning: return "MixedMpiWarning";
    case FindingKind::FabricWarning: return "FabricWarning";
    case FindingKind::PlacementError: return "PlacementError";
  }
  return "?";
}

struct Finding {
  FindingKind kind;
  std::string message;
};

struct ValidateOptions {
  // Container-internal MPI was observed to crash jobs beyond this many nodes.
  std::uint64_t mixed_mpi_node_threshold = 512;
};

inline std::vector<Finding> validate_recipe(const LaunchRecipe& r, const topo::NodeSpec& node,
                                            const ValidateOptions& opts = {}) {
  std::vector<Finding> findings;
  if (r.host_mpi_dir.empty() && r.nodes > opts.mixed_mpi_node_threshold) {
    findings.push_back({FindingKind::MixedMpiWarning,
                        "container MPI on " + std::to_string(r.nodes) + " nodes: jobs above " +
                            std::to_string(opts.mixed_mpi_node_threshold) +
                            " nodes were unstable with container-internal MPI; bind the host MPI library directory"});
  }
  if (r.fabric == Fabric::native && r.missing_fabric_driver) {
    findings.push_back({FindingKind::FabricWarning,
                        "container lacks the native fabric driver; set fabric = tcp_fallback or provide the driver"});
  }
  try {
    topo::validate_placement(node, r.plan);
  } catch (const Error& e) {
    findings.push_back({FindingKind::PlacementError, e.what()});
  }
  return findings;
}

// ---------------------------------------------------------------------------
// Config files and presets

inline Fabric parse_fabric(const std::string& s) {
  if (s == "default" || s == "native") return Fabric::native;
  if (s == "tcp_fallback" || s == "tcp") return Fabric::tcp_fallback;
  throw Error(ErrorKind::Config, "unknown fabric '" + s + "'");
}

inline LaunchRecipe launch_recipe_from_config(const KeyValueConfig& cfg) {
  LaunchRecipe r;
  r.job_name = cfg.get_string("job_name", r.job_name);
  r.image_name = cfg.get_string("image_name", "");
  r.container_dir = cfg.get_string("container_dir");
  r.host_mpi_dir = cfg.get_string("host_mpi_dir", "");
  for (const auto& b : cfg.all("bind")) {
    auto colon = b.find(':');
    if (colon == std::string::npos) throw Error(ErrorKind::Config, "bind must be host:container, got '" + b + "'");
    r.bind_mounts.push_back({b.substr(0, colon), b.substr(colon + 1)});
  }
  r.fabric = parse_fabric(cfg.get_string("fabric", "default"));
  auto nodes = cfg.get_int("nodes", 1);
  if (nodes < 1) throw Error(ErrorKind::Config, "nodes must be >= 1");
  r.nodes = static_cast<std::uint64_t>(nodes);
  auto positive = [&](const char* key, long long fallback) {
    auto v = cfg.get_int(key, fallback);
    if (v < 1) throw Error(ErrorKind::Config, std::string(key) + " must be >= 1");
    return static_cast<std::uint32_t>(v);
  };
  r.plan.ranks_per_node = positive("ranks_per_node", 1);
  r.plan.threads_per_rank = positive("threads_per_rank", 1);
  r.plan.hyperthreading = cfg.get_bool("hyperthreading", false);
  r.plan.numa_clustering = positive("numa_clustering", 1);
  for (const auto& e : cfg.all("env")) {
    auto eq = e.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::Config, "env must be KEY=VALUE, got '" + e + "'");
    r.env.emplace_back(e.substr(0, eq), e.substr(eq + 1));
  }
  r.command = cfg.get_string("command");
  r.missing_fabric_driver = cfg.get_bool("missing_fabric_driver", false);
  return r;
}

inline ContainerRecipe container_recipe_from_config(const KeyValueConfig& cfg) {
  return {cfg.get_string("image_name"), cfg.get_string("base_image"), cfg.all("install"), cfg.all("export")};
}

inline constexpr const char* kDefaultHostMpiDir = "/opt/intel/impi";

// Launch recipes for the measured placement configurations. `table` selects
// 1 (1x48), 2 (2x48 HT), 3 (4x12) or 4 (4x12 with host MPI bound in).
inline LaunchRecipe paper_launch_recipe(int table, std::uint64_t nodes = 4) {
  LaunchRecipe r;
  r.job_name = "gan3d-t" + std::to_string(table);
  r.image_name = "gan3d-tf";
  r.container_dir = "/var/tmp/gan3d-tf";
  r.nodes = nodes;
  r.command = "python3 /opt/gan3d/train.py --epochs 1";
  switch (table) {
    case 1: r.plan = {1, 48, false, 1}; break;
    case 2: r.plan = {2, 48, true, 1}; break;
    case 3: r.plan = {4, 12, false, 2}; break;
    case 4:
      r.plan = {4, 12, false, 2};
      r.host_mpi_dir = kDefaultHostMpiDir;
      break;
    default: throw Error(ErrorKind::InvalidInput, "paper configurations are tables 1-4");
  }
  r.env = {{"KMP_AFFINITY", "granularity=fine,compact,1,0"}, {"KMP_BLOCKTIME", "1"}};
  return r;
}

inline ContainerRecipe default_container_recipe() {
  return {"gan3d-tf",
          "ubuntu:18.04",
          {"apt-get update && apt-get install -y build-essential python3 python3-pip",
           "/tmp/impi/install.sh --silent /tmp/impi/silent.cfg",
           "pip3 install tensorflow keras",
           "HOROVOD_WITH_TENSORFLOW=1 pip3 install horovod"},
          {"ch-builder2tar {image} .", "ch-tar2dir {image}.tar.gz /var/tmp"}};
}

}  // namespace scalelab::deploy
