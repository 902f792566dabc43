#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "digest.hpp"

namespace burstscan::cli {

// exit 2
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// exit 1
struct EmptyResult : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string real(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Comma-separated table built in memory. Fields containing a comma, quote
/// or newline are quoted.
class Table {
 public:
  explicit Table(std::vector<std::string> header) : width_(header.size()) { row(header); }

  void row(const std::vector<std::string>& fields) {
    if (fields.size() != width_) throw std::logic_error("table row has the wrong width");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      const auto& f = fields[i];
      if (f.find_first_of(",\"\n") == std::string::npos) {
        out_ << f;
      } else {
        out_ << '"';
        for (char c : f) out_ << (c == '"' ? "\"\"" : std::string(1, c));
        out_ << '"';
      }
    }
    out_ << '\n';
    ++rows_;
  }

  std::string str() const { return out_.str(); }
  std::size_t rows() const noexcept { return rows_ - 1; }

 private:
  std::size_t width_;
  std::size_t rows_ = 0;
  std::ostringstream out_;
};

/// Everything a command produces. Files are held in memory and written only
/// by commit(), so a failing run leaves no partial outputs behind.
class RunOutput {
 public:
  void file(const std::string& name, std::string content) { files_[name] = std::move(content); }
  void param(const std::string& key, std::string value) { params_.emplace_back(key, std::move(value)); }
  void error(const std::string& scope, const std::string& subject, const std::string& message) {
    nlohmann::ordered_json j;
    j["scope"] = scope;
    j["subject"] = subject;
    j["message"] = message;
    errors_ += j.dump() + '\n';
  }
  bool has_errors() const noexcept { return !errors_.empty(); }

  /// Writes the files, errors.log and manifest.txt into `dir`.
  void commit(const std::filesystem::path& dir, const std::vector<std::string>& argv,
              const std::string& command) {
    files_["errors.log"] = errors_;
    std::filesystem::create_directories(dir);
    for (const auto& [name, content] : files_) write(dir / name, content);

    std::ostringstream m;
    m << "tool = burstscan " << BURSTSCAN_VERSION << '\n';
    m << "command = " << command << '\n';
    m << "argv = " << nlohmann::json(argv).dump() << '\n';
    for (const auto& [k, v] : params_) m << "param." << k << " = " << v << '\n';
    for (const auto& [name, content] : files_) m << "output." << name << " = " << sha256_hex(content) << '\n';
    write(dir / "manifest.txt", m.str());
  }

 private:
  static void write(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    os << content;
    if (!os) throw std::runtime_error("cannot write " + path.string());
  }

  std::map<std::string, std::string> files_;
  std::vector<std::pair<std::string, std::string>> params_;
  std::string errors_;
};

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::map<std::string, std::string> params;
  std::map<std::string, std::string> outputs;  // file name -> sha256
};

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos)
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    if (key == "command") {
      m.command = value;
    } else if (key == "argv") {
      try {
        m.argv = nlohmann::json::parse(value).get<std::vector<std::string>>();
      } catch (const nlohmann::json::exception& e) {
        throw UsageError(path.string() + ":" + std::to_string(lineno) + ": bad argv: " + e.what());
      }
    } else if (key.rfind("param.", 0) == 0) {
      m.params[key.substr(6)] = value;
    } else if (key.rfind("output.", 0) == 0) {
      m.outputs[key.substr(7)] = value;
    }
  }
  if (m.argv.empty()) throw UsageError(path.string() + ": manifest has no argv");
  return m;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace burstscan::cli
