#pragma once

#include <array>
#include <span>
#include <string>

#include "contrastcat/attribution/attribution.hpp"

namespace ccat::cli {

/// White (0) to red (1) ramp; v is clamped to [0, 1].
std::array<int, 3> heat_color(double v);

/// Standalone page, inline CSS only, one block per record coloured by the
/// map's normalized view. Special positions are left out.
std::string render_html(std::span<const AttributionRecord> records, const std::string& title);

/// One line of tokens with 24-bit background colours, or `token(0.42)` plain
/// text when colour is off.
std::string render_ansi(const AttributionRecord& record, bool color);

std::string html_escape(const std::string& s);

}  // namespace ccat::cli
