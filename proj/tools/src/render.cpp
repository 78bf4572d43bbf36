#include "contrastcat_cli/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ccat::cli {

std::array<int, 3> heat_color(double v) {
  const double t = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
  const int fade = static_cast<int>(std::lround(255.0 * (1.0 - t)));
  return {255, fade, fade};
}

std::string html_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string render_html(std::span<const AttributionRecord> records, const std::string& title) {
  std::ostringstream out;
  out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" << html_escape(title)
      << "</title>\n<style>\n"
         "body{font-family:sans-serif;margin:2em;color:#222}\n"
         ".rec{margin:1.2em 0}\n"
         ".meta{font-size:.8em;color:#666;margin-bottom:.3em}\n"
         ".tok{display:inline-block;padding:.15em .3em;margin:.1em;border-radius:3px;"
         "border:1px solid #eee}\n"
         "</style></head><body>\n<h1>"
      << html_escape(title) << "</h1>\n";
  for (const auto& r : records) {
    const auto norm = r.map.normalized_view();
    out << "<div class=\"rec\"><div class=\"meta\">sample " << r.sample << " &middot; "
        << html_escape(method_tag(r.map.method)) << " &middot; class " << r.map.target_class
        << "</div>";
    for (std::size_t i = 0; i < r.map.length() && i < r.tokens.size(); ++i) {
      if (r.map.kinds[i] != TokenKind::kOrdinary) continue;
      const auto c = heat_color(norm[i]);
      char score[32];
      std::snprintf(score, sizeof(score), "%.4g", r.map.scores[i]);
      out << "<span class=\"tok\" style=\"background:rgb(" << c[0] << ',' << c[1] << ',' << c[2]
          << ")\" title=\"" << score << "\">" << html_escape(r.tokens[i]) << "</span>";
    }
    out << "</div>\n";
  }
  out << "</body></html>\n";
  return out.str();
}

std::string render_ansi(const AttributionRecord& record, bool color) {
  const auto norm = record.map.normalized_view();
  std::ostringstream out;
  out << '[' << method_tag(record.map.method) << " c=" << record.map.target_class << "] ";
  for (std::size_t i = 0; i < record.map.length() && i < record.tokens.size(); ++i) {
    if (record.map.kinds[i] != TokenKind::kOrdinary) continue;
    if (color) {
      const auto c = heat_color(norm[i]);
      out << "\x1b[48;2;" << c[0] << ';' << c[1] << ';' << c[2] << "m\x1b[38;2;0;0;0m "
          << record.tokens[i] << " \x1b[0m";
    } else {
      char v[16];
      std::snprintf(v, sizeof(v), "%.2f", norm[i]);
      out << record.tokens[i] << '(' << v << ") ";
    }
  }
  return out.str();
}

}  // namespace ccat::cli
