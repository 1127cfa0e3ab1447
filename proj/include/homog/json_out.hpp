#pragma once
#include <cstdio>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "homog/types.hpp"

namespace homog {

// Small order-preserving JSON value with fixed %.17g float formatting, so that
// emitted reports are byte-identical across runs.
class JsonValue {
 public:
  using Array = std::vector<JsonValue>;
  using Object = std::vector<std::pair<std::string, JsonValue>>;

  JsonValue() : v_(nullptr) {}
  JsonValue(std::nullptr_t) : v_(nullptr) {}
  JsonValue(bool b) : v_(b) {}
  JsonValue(int i) : v_(static_cast<long long>(i)) {}
  JsonValue(long long i) : v_(i) {}
  JsonValue(size_t i) : v_(static_cast<long long>(i)) {}
  JsonValue(double d) : v_(d) {}
  JsonValue(const char* s) : v_(std::string(s)) {}
  JsonValue(std::string s) : v_(std::move(s)) {}
  JsonValue(Array a) : v_(std::move(a)) {}
  JsonValue(Object o) : v_(std::move(o)) {}

  static JsonValue object() { return JsonValue(Object{}); }
  static JsonValue array() { return JsonValue(Array{}); }

  JsonValue& set(const std::string& key, JsonValue val) {
    auto& obj = std::get<Object>(v_);
    obj.emplace_back(key, std::move(val));
    return *this;
  }
  JsonValue& push(JsonValue val) {
    std::get<Array>(v_).push_back(std::move(val));
    return *this;
  }

  static JsonValue from(const RVec& v) {
    Array a;
    for (int i = 0; i < v.size(); ++i) a.emplace_back(v[i]);
    return JsonValue(std::move(a));
  }
  static JsonValue from(const std::vector<Real>& v) {
    Array a;
    for (Real x : v) a.emplace_back(x);
    return JsonValue(std::move(a));
  }
  static JsonValue from(const Mat& m) {
    Array rows;
    for (int i = 0; i < m.rows(); ++i) {
      Array row;
      for (int j = 0; j < m.cols(); ++j) {
        Array z;
        z.emplace_back(m(i, j).real());
        z.emplace_back(m(i, j).imag());
        row.emplace_back(std::move(z));
      }
      rows.emplace_back(std::move(row));
    }
    return JsonValue(std::move(rows));
  }

  std::string dump(int indent = 0) const {
    std::string out;
    write(out, indent, 0);
    return out;
  }

  static std::string fmt(double d) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    std::string s(buf);
    if (s.find_first_of(".eEnN") == std::string::npos) s += ".0";
    return s;
  }

 private:
  std::variant<std::nullptr_t, bool, long long, double, std::string, Array, Object> v_;
  static void escape(std::string& out, const std::string& s) {
    out += '"';
    for (char c : s) {
      switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        default: out += c;
      }
    }
    out += '"';
  }
  void write(std::string& out, int indent, int depth) const {
    std::string pad = indent ? "\n" + std::string(indent * (depth + 1), ' ') : "";
    std::string padEnd = indent ? "\n" + std::string(indent * depth, ' ') : "";
    if (std::holds_alternative<std::nullptr_t>(v_)) out += "null";
    else if (auto* b = std::get_if<bool>(&v_)) out += *b ? "true" : "false";
    else if (auto* i = std::get_if<long long>(&v_)) out += std::to_string(*i);
    else if (auto* d = std::get_if<double>(&v_)) out += fmt(*d);
    else if (auto* s = std::get_if<std::string>(&v_)) escape(out, *s);
    else if (auto* a = std::get_if<Array>(&v_)) {
      if (a->empty()) { out += "[]"; return; }
      out += '[';
      for (size_t i = 0; i < a->size(); ++i) {
        out += (i ? "," : "") + pad;
        (*a)[i].write(out, indent, depth + 1);
      }
      out += padEnd + ']';
    } else if (auto* o = std::get_if<Object>(&v_)) {
      if (o->empty()) { out += "{}"; return; }
      out += '{';
      for (size_t i = 0; i < o->size(); ++i) {
        out += (i ? "," : "") + pad;
        escape(out, (*o)[i].first);
        out += indent ? ": " : ":";
        (*o)[i].second.write(out, indent, depth + 1);
      }
      out += padEnd + '}';
    }
  }
};

}  // namespace homog
