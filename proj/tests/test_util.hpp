#pragma once

#include <priorshift/dataset.hpp>
#include <Eigen/Dense>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace testutil {

inline Eigen::VectorXd
random_simplex(int c, std::mt19937_64& rng)
{
  std::exponential_distribution<double> e(1.0);
  Eigen::VectorXd v(c);
  for (int y = 0; y < c; ++y) {
    v(y) = e(rng);
  }
  return v / v.sum();
}

inline std::string
read_file(const std::filesystem::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void
write_file(const std::filesystem::path& p, const std::string& text)
{
  std::ofstream out(p, std::ios::binary);
  out << text;
}

//! Fresh empty directory under the system temp dir.
inline std::filesystem::path
scratch_dir(const std::string& name)
{
  auto dir = std::filesystem::temp_directory_path() / ("priorshift_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct CommandResult
{
  int exit_code = -1;
  std::string output;
};

//! Runs a shell command, capturing stdout.
inline CommandResult
run_command(const std::string& cmd)
{
  CommandResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    return r;
  }
  std::array<char, 4096> buf{};
  std::size_t got = 0;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) {
    r.output.append(buf.data(), got);
  }
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

} // namespace testutil
