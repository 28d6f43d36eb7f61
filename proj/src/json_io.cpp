#include "mflq/json_io.hpp"

#include <cmath>
#include <cstdio>

namespace mflq::jsonio {

std::string Writer::format_number(double v) {
  if (std::isnan(v)) return "null";
  if (std::isinf(v)) return v > 0 ? "1e999" : "-1e999";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void Writer::separator() {
  if (pending_key_) {
    pending_key_ = false;
    return;
  }
  if (!need_comma_.empty()) {
    if (need_comma_.back()) out_ += ',';
    need_comma_.back() = true;
  }
}

void Writer::begin_object() {
  separator();
  out_ += '{';
  need_comma_.push_back(false);
}

void Writer::end_object() {
  out_ += '}';
  need_comma_.pop_back();
}

void Writer::begin_array() {
  separator();
  out_ += '[';
  need_comma_.push_back(false);
}

void Writer::end_array() {
  out_ += ']';
  need_comma_.pop_back();
}

void Writer::key(const std::string& k) {
  separator();
  out_ += '"';
  out_ += k;
  out_ += "\":";
  pending_key_ = true;
}

void Writer::value(double v) {
  separator();
  out_ += format_number(v);
}

void Writer::value(int v) {
  separator();
  out_ += std::to_string(v);
}

void Writer::value(long long v) {
  separator();
  out_ += std::to_string(v);
}

void Writer::value(bool v) {
  separator();
  out_ += v ? "true" : "false";
}

void Writer::value(const std::string& v) {
  separator();
  out_ += '"';
  for (char c : v) {
    switch (c) {
      case '"': out_ += "\\\""; break;
      case '\\': out_ += "\\\\"; break;
      case '\n': out_ += "\\n"; break;
      case '\t': out_ += "\\t"; break;
      default: out_ += c;
    }
  }
  out_ += '"';
}

void Writer::value(const matkit::Matrix& m) {
  begin_array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    begin_array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) value(m(i, j));
    end_array();
  }
  end_array();
}

void Writer::value(const matkit::Vector& v) {
  begin_array();
  for (Eigen::Index i = 0; i < v.size(); ++i) value(v(i));
  end_array();
}

void Writer::null_value() {
  separator();
  out_ += "null";
}

}  // namespace mflq::jsonio
