#pragma once

#include "mflq/matkit.hpp"

#include <string>
#include <vector>

namespace mflq::jsonio {

/// Minimal JSON emitter used for every report and file the toolset writes.
/// Numbers are printed with %.17g so doubles round-trip exactly and the
/// output is byte-stable across runs.
class Writer {
 public:
  std::string str() const { return out_; }

  void begin_object();
  void end_object();
  void begin_array();
  void end_array();
  void key(const std::string& k);
  void value(double v);
  void value(int v);
  void value(long long v);
  void value(bool v);
  void value(const std::string& v);
  void value(const char* v) { value(std::string(v)); }
  void value(const matkit::Matrix& m);
  void value(const matkit::Vector& v);
  void null_value();

  template <typename T>
  void field(const std::string& k, const T& v) {
    key(k);
    value(v);
  }

  static std::string format_number(double v);

 private:
  void separator();
  std::string out_;
  std::vector<bool> need_comma_;
  bool pending_key_ = false;
};

}  // namespace mflq::jsonio
