#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lab/nn.hpp"

namespace lab::textenc {

inline constexpr int kSeqLen = 8;
inline constexpr int kDim = 32;
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;

/// Fixed token table:
/// [PAD] [BOS] a an image of red green blue circle square tainted clean
/// shape unsafe photo
class Vocabulary {
 public:
  static const Vocabulary& standard();

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  /// -1 when the word is not in the table.
  int find(std::string_view word) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {}
  std::vector<std::string> tokens_;
};

struct TokenSeq {
  std::array<int, kSeqLen> ids{};
  bool operator==(const TokenSeq&) const = default;
};

/// P_c: one row per token position.
struct PromptEmbedding {
  Mat<float> rows;  // kSeqLen x kDim

  /// Row-major flattening used as the denoiser's conditioning input.
  Mat<float> flat() const;
};

/// Token embedding + positional embedding, then one token-mixing layer:
///   X = E[ids] + Pos,  P = X + (Mix X) W + b
struct TextEncoderParams {
  ParamMap<float> weights;

  static TextEncoderParams init(std::uint64_t seed);
  void validate() const;
};

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab = Vocabulary::standard());

PromptEmbedding encode(const TokenSeq& seq, const TextEncoderParams& params);

/// Encodes a batch of sequences on a tape; result is N x (kSeqLen * kDim).
template <class S>
ad::Var<S> encode_batch(const Bound<S>& params, std::span<const TokenSeq> seqs);

PromptEmbedding encode_text(std::string_view text, const TextEncoderParams& params);

/// encode(prompt_plus) - encode(prompt_minus): the naive contrastive direction.
Mat<float> contrastive_direction(std::string_view prompt_plus,
                                 std::string_view prompt_minus,
                                 const TextEncoderParams& params,
                                 const Vocabulary& vocab = Vocabulary::standard());

}  // namespace lab::textenc
