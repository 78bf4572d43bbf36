#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "contrastcat/corpus/corpus.hpp"
#include "contrastcat/encoder/encoder.hpp"

namespace ccat {

enum class Method { kContrastCat, kRawAtt, kRollout, kAttGrads, kAttxAttGrads, kCat, kAttCat };

/// "contrast-cat", "rawatt", "rollout", "attgrads", "attxgrads", "cat", "attcat".
std::string method_tag(Method m);
/// Throws InputError on an unknown tag.
Method parse_method(const std::string& tag);
/// Every method, Contrast-CAT last.
std::vector<Method> all_methods();

/// Per-position relevance over the active prefix of one input. Special
/// positions hold 0 and never appear in a ranking.
struct AttributionMap {
  std::vector<double> scores;
  std::vector<TokenKind> kinds;
  Method method = Method::kContrastCat;
  ClassId target_class = 0;
  std::optional<std::size_t> reference_id;

  std::size_t length() const noexcept { return scores.size(); }
  /// Min-max rescaling over ordinary positions into [0,1]; specials are 0,
  /// and a constant map renders as all zeros. For display only.
  std::vector<double> normalized_view() const;
  /// Ordinary positions sorted by score, descending (MoRF) or ascending
  /// (LeRF). Ties keep ascending position order in both directions.
  std::vector<std::size_t> ranking(bool descending = true) const;
};

/// Which attention statistic weights each token.
///   kColumnMean: attention received, mean over heads and query rows.
///   kClsRow: attention paid by CLS, mean over heads.
enum class AttentionAggregation { kColumnMean, kClsRow };

/// weights[l][i] >= 0 for layer l (0-based) and position i; each layer sums to 1.
struct AveragedAttention {
  std::vector<std::vector<double>> weights;

  std::size_t layers() const noexcept { return weights.size(); }
  std::size_t length() const noexcept { return weights.empty() ? 0 : weights.front().size(); }
};

AveragedAttention averaged_attention(const ForwardTrace& trace,
                                     AttentionAggregation agg = AttentionAggregation::kColumnMean);

/// Layers first_layer..L (1-based, inclusive) enter every activation-based
/// sum. first_layer = 1 uses all layers.
struct LayerWindow {
  std::size_t first_layer = 1;
};

/// I_R(x)_i = sum_l abar[l][i] * sum_j (dF/dA^l_i * (A^l_i - R^l_i))_j.
/// reference holds one T×n matrix per layer. Throws InputError on any shape
/// disagreement.
AttributionMap contrast_map(const ForwardTrace& trace, const GradientTrace& grads,
                            std::span<const nk::Matrix> reference, const AveragedAttention& abar,
                            LayerWindow window = {});

/// Mean over heads of the final layer's CLS attention row.
AttributionMap raw_attention_map(const ForwardTrace& trace, ClassId c);

/// Product of per-layer 0.5*(head mean) + 0.5*I, row-normalised, last layer
/// on the left.
nk::Matrix rollout_matrix(const ForwardTrace& trace);
AttributionMap rollout_map(const ForwardTrace& trace, ClassId c);

/// (Att-grads, Att×Att-grads): mean over layers, heads and query rows of
/// dF/dalpha and of alpha ⊙ dF/dalpha.
std::pair<AttributionMap, AttributionMap> att_grad_maps(const Analysis& analysis);

/// (CAT, AttCAT).
std::pair<AttributionMap, AttributionMap> cat_maps(const ForwardTrace& trace,
                                                   const GradientTrace& grads,
                                                   const AveragedAttention& abar,
                                                   LayerWindow window = {});

/// Single-pass baseline attribution for class c. kContrastCat is rejected
/// with InputError; it needs references (see refine).
AttributionMap baseline_map(const Encoder& model, const TokenSequence& tokens, ClassId c,
                            Method method, GradientTarget target = GradientTarget::kLogit);

/// One JSONL record per map. `tokens` are display strings for the first
/// map.length() positions. drop_scores, when nonempty, is written as a
/// debug field.
struct AttributionRecord {
  std::size_t sample = 0;
  std::string text;
  std::vector<std::string> tokens;
  AttributionMap map;
  std::vector<double> drop_scores;
};

std::string to_jsonl(const AttributionRecord& record);
/// Throws FormatError on malformed lines, naming the line number.
std::vector<AttributionRecord> read_attribution_jsonl(const std::string& path);
void write_attribution_jsonl(const std::string& path, std::span<const AttributionRecord> records);

/// Display strings for positions 0..length-1: "[CLS]", "[PAD]", or the token.
std::vector<std::string> display_tokens(const TokenSequence& seq, const Vocabulary& vocab,
                                        std::size_t length);

}  // namespace ccat
