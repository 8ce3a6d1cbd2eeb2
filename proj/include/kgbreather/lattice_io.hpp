#pragma once

// CSV and binary serialization of SymmetricSequence. Both round-trip
// bit-exactly: CSV uses the shortest round-trip decimal form.

#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "kgbreather/io_util.hpp"
#include "kgbreather/lattice.hpp"

namespace kgbreather {

namespace detail {

inline std::string box_comment(const LatticeBox& box) {
  return "# n=" + std::to_string(box.dim()) + " K=" + std::to_string(box.grid().radius()) +
         " mu=" + io::format_double(box.grid().mu()) + " offsets=" + to_string(box.offsets()[0]) + "," +
         to_string(box.offsets()[1]);
}

inline Centering parse_centering(const std::string& s) {
  if (s == "site") return Centering::site;
  if (s == "bond") return Centering::bond;
  throw IoError("unknown centering '" + s + "'");
}

inline LatticeBox parse_box_comment(const std::string& line) {
  std::istringstream ss(line);
  std::string tok;
  ss >> tok;
  if (tok != "#") throw IoError("sequence CSV: missing '# n=... K=... mu=... offsets=...' header");
  int n = 0, K = 0;
  double mu = 0.0;
  Offsets off{Centering::site, Centering::site};
  bool have[4] = {false, false, false, false};
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "n") { n = static_cast<int>(io::parse_int(val)); have[0] = true; }
    else if (key == "K") { K = static_cast<int>(io::parse_int(val)); have[1] = true; }
    else if (key == "mu") { mu = io::parse_double(val); have[2] = true; }
    else if (key == "offsets") {
      const auto comma = val.find(',');
      if (comma == std::string::npos) throw IoError("sequence CSV: bad offsets field");
      off = {parse_centering(val.substr(0, comma)), parse_centering(val.substr(comma + 1))};
      have[3] = true;
    }
  }
  for (bool h : have) {
    if (!h) throw IoError("sequence CSV: incomplete header");
  }
  try {
    // The file was valid when written; do not re-impose a decay budget.
    return LatticeBox(GridSpec(n, K, mu, 0.0), off);
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("sequence CSV: ") + e.what());
  }
}

}  // namespace detail

inline void write_csv(const SymmetricSequence& x, std::ostream& os) {
  const LatticeBox& box = x.box();
  os << detail::box_comment(box) << '\n';
  os << (box.dim() == 1 ? "j0,value\n" : "j0,j1,value\n");
  for (std::size_t i = 0; i < box.size(); ++i) {
    const auto s = box.site(i);
    os << s[0] << ',';
    if (box.dim() == 2) os << s[1] << ',';
    os << io::format_double(x.values()[static_cast<Eigen::Index>(i)]) << '\n';
  }
  if (!os) throw IoError("sequence CSV: write failed");
}

inline SymmetricSequence read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("sequence CSV: empty input");
  LatticeBox box = detail::parse_box_comment(line);
  if (!std::getline(is, line)) throw IoError("sequence CSV: missing column header");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(box.size()));
  std::vector<char> seen(box.size(), 0);
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cols.push_back(c);
    if (static_cast<int>(cols.size()) != box.dim() + 1) throw IoError("sequence CSV: wrong column count");
    const int j0 = static_cast<int>(io::parse_int(cols[0]));
    const int j1 = box.dim() == 2 ? static_cast<int>(io::parse_int(cols[1])) : 0;
    if (!box.contains(j0, j1)) throw IoError("sequence CSV: index outside the box");
    const std::size_t idx = box.index(j0, j1);
    v[static_cast<Eigen::Index>(idx)] = io::parse_double(cols.back());
    seen[idx] = 1;
  }
  for (char s : seen) {
    if (!s) throw IoError("sequence CSV: missing sites");
  }
  try {
    return SymmetricSequence(box, std::move(v));
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("sequence CSV: ") + e.what());
  }
}

namespace detail {

inline void write_box_header(std::ostream& os, const LatticeBox& box) {
  io::write_pod<std::int32_t>(os, box.dim());
  io::write_pod<std::int32_t>(os, box.grid().radius());
  io::write_pod<double>(os, box.grid().mu());
  io::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(box.offsets()[0]));
  io::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(box.offsets()[1]));
}

inline LatticeBox read_box_header(std::istream& is) {
  const auto n = io::read_pod<std::int32_t>(is);
  const auto K = io::read_pod<std::int32_t>(is);
  const auto mu = io::read_pod<double>(is);
  const auto o0 = io::read_pod<std::uint8_t>(is);
  const auto o1 = io::read_pod<std::uint8_t>(is);
  if (o0 > 1 || o1 > 1) throw IoError("binary header: bad offset code");
  try {
    return LatticeBox(GridSpec(n, K, mu, 0.0), Offsets{static_cast<Centering>(o0), static_cast<Centering>(o1)});
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("binary header: ") + e.what());
  }
}

}  // namespace detail

inline constexpr char kSequenceMagic[] = "KGSQ";

inline void write_binary(const SymmetricSequence& x, std::ostream& os) {
  os.write(kSequenceMagic, 4);
  io::write_pod<std::uint32_t>(os, 1);
  detail::write_box_header(os, x.box());
  io::write_pod<std::uint64_t>(os, x.size());
  os.write(reinterpret_cast<const char*>(x.values().data()),
           static_cast<std::streamsize>(x.size() * sizeof(double)));
  if (!os) throw IoError("sequence binary: write failed");
}

inline SymmetricSequence read_binary(std::istream& is) {
  io::expect_magic(is, "KGSQ");
  if (io::read_pod<std::uint32_t>(is) != 1) throw IoError("sequence binary: unsupported version");
  LatticeBox box = detail::read_box_header(is);
  const auto count = io::read_pod<std::uint64_t>(is);
  if (count != box.size()) throw IoError("sequence binary: value count does not match the header");
  Eigen::VectorXd v(static_cast<Eigen::Index>(count));
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw IoError("sequence binary: truncated values");
  try {
    return SymmetricSequence(box, std::move(v));
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("sequence binary: ") + e.what());
  }
}

inline void save_csv(const SymmetricSequence& x, const std::string& path) {
  auto os = io::open_out(path);
  write_csv(x, os);
}
inline SymmetricSequence load_csv(const std::string& path) {
  auto is = io::open_in(path);
  return read_csv(is);
}
inline void save_binary(const SymmetricSequence& x, const std::string& path) {
  auto os = io::open_out(path, true);
  write_binary(x, os);
}
inline SymmetricSequence load_binary(const std::string& path) {
  auto is = io::open_in(path, true);
  return read_binary(is);
}

}  // namespace kgbreather
