#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "star/heatmap.hpp"

namespace star {

namespace {

double parse_double(const std::string& tok, int line) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line) + ": not a number: '" + tok + "'");
  }
  while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
  if (used != tok.size()) {
    throw ParseError("line " + std::to_string(line) + ": trailing characters in '" + tok + "'");
  }
  return v;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string format_heatmap_csv(const HeatmapD& h) {
  const auto& p = h.probs();
  std::string out = std::to_string(p.rows()) + "," + std::to_string(p.cols()) + "\n";
  char buf[32];
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", p(r, c));
      if (c) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

HeatmapD parse_heatmap_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto next_line = [&]() {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError("empty heatmap file");
  const auto header = split_commas(line);
  if (header.size() != 2) throw ParseError("header must be 'H,W'");
  const double hd = parse_double(header[0], line_no);
  const double wd = parse_double(header[1], line_no);
  if (hd != static_cast<int>(hd) || wd != static_cast<int>(wd) || hd < 2 || wd < 2) {
    throw ParseError("header dimensions must be integers >= 2");
  }
  const int rows = static_cast<int>(hd);
  const int cols = static_cast<int>(wd);
  GridMatrix<double> p(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (!next_line()) throw ParseError("expected " + std::to_string(rows) + " rows");
    const auto toks = split_commas(line);
    if (static_cast<int>(toks.size()) != cols) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(cols) + " values");
    }
    for (int c = 0; c < cols; ++c) p(r, c) = parse_double(toks[c], line_no);
  }
  if (next_line()) throw ParseError("unexpected data after row " + std::to_string(rows));
  try {
    return HeatmapD(std::move(p));
  } catch (const Error& e) {
    throw ParseError(std::string("invalid heatmap: ") + e.what());
  }
}

HeatmapD read_heatmap_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_heatmap_csv(ss.str());
}

void write_heatmap_csv(const std::string& path, const HeatmapD& h) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  out << format_heatmap_csv(h);
}

}  // namespace star
