#include "contrastcat/attribution/attribution.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "contrastcat/util/error.hpp"

namespace ccat {

namespace {

constexpr std::array<std::pair<Method, const char*>, 7> kTags{{
    {Method::kRawAtt, "rawatt"},
    {Method::kRollout, "rollout"},
    {Method::kAttGrads, "attgrads"},
    {Method::kAttxAttGrads, "attxgrads"},
    {Method::kCat, "cat"},
    {Method::kAttCat, "attcat"},
    {Method::kContrastCat, "contrast-cat"},
}};

AttributionMap blank_map(const ForwardTrace& trace, Method m, ClassId c) {
  AttributionMap map;
  map.scores.assign(trace.length(), 0.0);
  map.kinds = trace.kinds;
  map.method = m;
  map.target_class = c;
  return map;
}

void zero_specials(AttributionMap& map) {
  for (std::size_t i = 0; i < map.length(); ++i)
    if (map.kinds[i] != TokenKind::kOrdinary) map.scores[i] = 0.0;
}

std::size_t first_index(const ForwardTrace& trace, LayerWindow window) {
  if (window.first_layer < 1 || window.first_layer > trace.layers()) {
    throw InputError("first layer " + std::to_string(window.first_layer) + " outside [1, " +
                     std::to_string(trace.layers()) + "]");
  }
  return window.first_layer - 1;
}

void check_grads(const ForwardTrace& trace, const GradientTrace& grads,
                 const AveragedAttention& abar) {
  if (grads.grads.size() != trace.layers() || abar.layers() != trace.layers()) {
    throw InputError("layer count mismatch between trace, gradients and averaged attention");
  }
  for (std::size_t l = 0; l < trace.layers(); ++l) {
    if (!grads.grads[l].same_shape(trace.activations[l])) {
      throw InputError("gradient shape " + grads.grads[l].shape_string() + " at layer " +
                       std::to_string(l + 1) + " does not match activation " +
                       trace.activations[l].shape_string());
    }
    if (abar.weights[l].size() != trace.length()) {
      throw InputError("averaged attention length does not match trace");
    }
  }
}

}  // namespace

std::string method_tag(Method m) {
  for (const auto& [method, tag] : kTags)
    if (method == m) return tag;
  throw InputError("unknown method");
}

Method parse_method(const std::string& tag) {
  for (const auto& [method, name] : kTags)
    if (tag == name) return method;
  throw InputError("unknown method '" + tag + "'");
}

std::vector<Method> all_methods() {
  std::vector<Method> out;
  for (const auto& [method, tag] : kTags) out.push_back(method);
  return out;
}

std::vector<double> AttributionMap::normalized_view() const {
  std::vector<double> out(length(), 0.0);
  double lo = 0.0;
  double hi = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < length(); ++i) {
    if (kinds[i] != TokenKind::kOrdinary) continue;
    lo = any ? std::min(lo, scores[i]) : scores[i];
    hi = any ? std::max(hi, scores[i]) : scores[i];
    any = true;
  }
  if (!any || !(hi > lo)) return out;
  for (std::size_t i = 0; i < length(); ++i)
    if (kinds[i] == TokenKind::kOrdinary) out[i] = (scores[i] - lo) / (hi - lo);
  return out;
}

std::vector<std::size_t> AttributionMap::ranking(bool descending) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < length(); ++i)
    if (kinds[i] == TokenKind::kOrdinary) idx.push_back(i);
  if (descending) {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  } else {
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  }
  return idx;
}

AveragedAttention averaged_attention(const ForwardTrace& trace, AttentionAggregation agg) {
  const std::size_t t = trace.length();
  AveragedAttention out;
  out.weights.assign(trace.attentions.size(), std::vector<double>(t, 0.0));
  for (std::size_t l = 0; l < trace.attentions.size(); ++l) {
    const auto& heads = trace.attentions[l];
    auto& w = out.weights[l];
    for (const auto& a : heads) {
      if (agg == AttentionAggregation::kClsRow) {
        for (std::size_t i = 0; i < t; ++i) w[i] += a(0, i);
      } else {
        for (std::size_t q = 0; q < t; ++q)
          for (std::size_t i = 0; i < t; ++i) w[i] += a(q, i);
      }
    }
    const double denom = static_cast<double>(heads.size()) *
                         (agg == AttentionAggregation::kClsRow ? 1.0 : static_cast<double>(t));
    for (double& v : w) v /= denom;
  }
  return out;
}

AttributionMap contrast_map(const ForwardTrace& trace, const GradientTrace& grads,
                            std::span<const nk::Matrix> reference, const AveragedAttention& abar,
                            LayerWindow window) {
  check_grads(trace, grads, abar);
  if (reference.size() != trace.layers()) {
    throw InputError("reference has " + std::to_string(reference.size()) + " layers, model has " +
                     std::to_string(trace.layers()));
  }
  for (std::size_t l = 0; l < trace.layers(); ++l) {
    if (!reference[l].same_shape(trace.activations[l])) {
      throw InputError("reference shape " + reference[l].shape_string() + " at layer " +
                       std::to_string(l + 1) + " does not match activation " +
                       trace.activations[l].shape_string());
    }
  }
  AttributionMap map = blank_map(trace, Method::kContrastCat, grads.target_class);
  const std::size_t n = trace.activations.empty() ? 0 : trace.activations[0].cols();
  for (std::size_t l = first_index(trace, window); l < trace.layers(); ++l) {
    const auto& a = trace.activations[l];
    const auto& g = grads.grads[l];
    const auto& r = reference[l];
    for (std::size_t i = 0; i < trace.length(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += g(i, j) * (a(i, j) - r(i, j));
      map.scores[i] += abar.weights[l][i] * s;
    }
  }
  zero_specials(map);
  return map;
}

AttributionMap raw_attention_map(const ForwardTrace& trace, ClassId c) {
  AttributionMap map = blank_map(trace, Method::kRawAtt, c);
  const auto& heads = trace.attentions.back();
  for (const auto& a : heads)
    for (std::size_t i = 0; i < trace.length(); ++i) map.scores[i] += a(0, i);
  for (double& v : map.scores) v /= static_cast<double>(heads.size());
  zero_specials(map);
  return map;
}

nk::Matrix rollout_matrix(const ForwardTrace& trace) {
  const std::size_t t = trace.length();
  nk::Matrix rollout = nk::Matrix::identity(t);
  for (const auto& heads : trace.attentions) {
    nk::Matrix hat(t, t);
    for (const auto& a : heads) hat += a;
    hat *= 0.5 / static_cast<double>(heads.size());
    for (std::size_t i = 0; i < t; ++i) hat(i, i) += 0.5;
    for (std::size_t q = 0; q < t; ++q) {
      auto row = hat.row(q);
      const double s = std::accumulate(row.begin(), row.end(), 0.0);
      for (double& v : row) v /= s;
    }
    // Layers are applied in order, so the newest layer multiplies from the left.
    rollout = nk::matmul(hat, rollout);
  }
  return rollout;
}

AttributionMap rollout_map(const ForwardTrace& trace, ClassId c) {
  AttributionMap map = blank_map(trace, Method::kRollout, c);
  const nk::Matrix r = rollout_matrix(trace);
  for (std::size_t i = 0; i < trace.length(); ++i) map.scores[i] = r(0, i);
  zero_specials(map);
  return map;
}

std::pair<AttributionMap, AttributionMap> att_grad_maps(const Analysis& analysis) {
  const ForwardTrace& trace = analysis.trace;
  const ClassId c = analysis.activation_grads.target_class;
  AttributionMap grad_map = blank_map(trace, Method::kAttGrads, c);
  AttributionMap prod_map = blank_map(trace, Method::kAttxAttGrads, c);
  const std::size_t t = trace.length();
  std::size_t count = 0;
  for (std::size_t l = 0; l < trace.attentions.size(); ++l) {
    for (std::size_t h = 0; h < trace.attentions[l].size(); ++h) {
      const auto& a = trace.attentions[l][h];
      const auto& g = analysis.attention_grads.at(l).at(h);
      if (!g.same_shape(a)) throw InputError("attention gradient shape does not match attention");
      for (std::size_t q = 0; q < t; ++q) {
        for (std::size_t i = 0; i < t; ++i) {
          grad_map.scores[i] += g(q, i);
          prod_map.scores[i] += a(q, i) * g(q, i);
        }
      }
      count += t;
    }
  }
  if (count > 0) {
    for (double& v : grad_map.scores) v /= static_cast<double>(count);
    for (double& v : prod_map.scores) v /= static_cast<double>(count);
  }
  zero_specials(grad_map);
  zero_specials(prod_map);
  return {std::move(grad_map), std::move(prod_map)};
}

std::pair<AttributionMap, AttributionMap> cat_maps(const ForwardTrace& trace,
                                                   const GradientTrace& grads,
                                                   const AveragedAttention& abar,
                                                   LayerWindow window) {
  check_grads(trace, grads, abar);
  AttributionMap cat = blank_map(trace, Method::kCat, grads.target_class);
  AttributionMap attcat = blank_map(trace, Method::kAttCat, grads.target_class);
  for (std::size_t l = first_index(trace, window); l < trace.layers(); ++l) {
    const auto& a = trace.activations[l];
    const auto& g = grads.grads[l];
    for (std::size_t i = 0; i < trace.length(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) s += g(i, j) * a(i, j);
      cat.scores[i] += s;
      attcat.scores[i] += abar.weights[l][i] * s;
    }
  }
  zero_specials(cat);
  zero_specials(attcat);
  return {std::move(cat), std::move(attcat)};
}

AttributionMap baseline_map(const Encoder& model, const TokenSequence& tokens, ClassId c,
                            Method method, GradientTarget target) {
  switch (method) {
    case Method::kRawAtt:
      return raw_attention_map(model.forward(tokens), c);
    case Method::kRollout:
      return rollout_map(model.forward(tokens), c);
    case Method::kAttGrads:
      return att_grad_maps(model.analyze(tokens, c, target)).first;
    case Method::kAttxAttGrads:
      return att_grad_maps(model.analyze(tokens, c, target)).second;
    case Method::kCat:
    case Method::kAttCat: {
      const Analysis an = model.analyze(tokens, c, target);
      auto maps = cat_maps(an.trace, an.activation_grads, averaged_attention(an.trace));
      return method == Method::kCat ? std::move(maps.first) : std::move(maps.second);
    }
    case Method::kContrastCat:
      break;
  }
  throw InputError("contrast-cat needs a reference library; use refine_and_aggregate");
}

std::vector<std::string> display_tokens(const TokenSequence& seq, const Vocabulary& vocab,
                                        std::size_t length) {
  std::vector<std::string> out;
  out.reserve(length);
  for (std::size_t i = 0; i < length && i < seq.size(); ++i) {
    switch (seq.kinds[i]) {
      case TokenKind::kCls: out.emplace_back("[CLS]"); break;
      case TokenKind::kPad: out.emplace_back("[PAD]"); break;
      case TokenKind::kOrdinary: out.push_back(vocab.token(seq.ids[i])); break;
    }
  }
  return out;
}

namespace {

const char* kind_tag(TokenKind k) {
  switch (k) {
    case TokenKind::kCls: return "cls";
    case TokenKind::kPad: return "pad";
    case TokenKind::kOrdinary: break;
  }
  return "tok";
}

TokenKind parse_kind(const std::string& s) {
  if (s == "cls") return TokenKind::kCls;
  if (s == "pad") return TokenKind::kPad;
  if (s == "tok") return TokenKind::kOrdinary;
  throw FormatError("unknown token kind '" + s + "'");
}

}  // namespace

std::string to_jsonl(const AttributionRecord& record) {
  nlohmann::json j;
  j["sample"] = record.sample;
  j["text"] = record.text;
  j["method"] = method_tag(record.map.method);
  j["class"] = record.map.target_class;
  j["tokens"] = record.tokens;
  std::vector<std::string> kinds;
  for (TokenKind k : record.map.kinds) kinds.emplace_back(kind_tag(k));
  j["kinds"] = kinds;
  j["scores"] = record.map.scores;
  j["normalized"] = record.map.normalized_view();
  if (record.map.reference_id) j["reference"] = *record.map.reference_id;
  if (!record.drop_scores.empty()) j["drop_scores"] = record.drop_scores;
  // Shortest round-trip formatting keeps raw scores bit-exact through a reload.
  return j.dump();
}

void write_attribution_jsonl(const std::string& path, std::span<const AttributionRecord> records) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  for (const auto& r : records) out << to_jsonl(r) << '\n';
  if (!out) throw InputError("write to '" + path + "' failed");
}

std::vector<AttributionRecord> read_attribution_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read '" + path + "'");
  std::vector<AttributionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AttributionRecord r;
      r.sample = j.at("sample").get<std::size_t>();
      r.text = j.value("text", std::string());
      r.tokens = j.value("tokens", std::vector<std::string>());
      r.map.method = parse_method(j.at("method").get<std::string>());
      r.map.target_class = j.at("class").get<ClassId>();
      r.map.scores = j.at("scores").get<std::vector<double>>();
      for (const auto& k : j.at("kinds").get<std::vector<std::string>>())
        r.map.kinds.push_back(parse_kind(k));
      if (r.map.kinds.size() != r.map.scores.size()) {
        throw FormatError("kinds and scores differ in length");
      }
      if (j.contains("reference")) r.map.reference_id = j["reference"].get<std::size_t>();
      r.drop_scores = j.value("drop_scores", std::vector<double>());
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ccat
