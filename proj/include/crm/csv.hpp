#ifndef CRM_CSV_HPP
#define CRM_CSV_HPP

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <string>
#include <vector>

namespace crm::csv {

// 17 significant digits round-trip every double exactly.
inline std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string num(int x) { return std::to_string(x); }
inline std::string num(long x) { return std::to_string(x); }
inline std::string num(std::size_t x) { return std::to_string(x); }

class Writer {
 public:
  Writer(std::ostream& out, std::initializer_list<std::string> header) : out_(out) {
    row(std::vector<std::string>(header));
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  template <typename... Ts>
  void values(const Ts&... xs) {
    row(std::vector<std::string>{cell(xs)...});
  }

 private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(bool b) { return b ? "true" : "false"; }
  template <typename T>
  static std::string cell(const T& x) {
    return num(x);
  }

  std::ostream& out_;
};

}  // namespace crm::csv

#endif  // CRM_CSV_HPP
