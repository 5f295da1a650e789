#include "lab/textenc.hpp"

#include <sstream>

#include "lab/error.hpp"

namespace lab::textenc {

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab({"[PAD]", "[BOS]", "a", "an", "image", "of", "red",
                                 "green", "blue", "circle", "square", "tainted",
                                 "clean", "shape", "unsafe", "photo"});
  return vocab;
}

int Vocabulary::find(std::string_view word) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (tokens_[i] == word) return static_cast<int>(i);
  return -1;
}

Mat<float> PromptEmbedding::flat() const {
  return Eigen::Map<const Mat<float>>(rows.data(), 1, rows.size());
}

TextEncoderParams TextEncoderParams::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x7e47));
  const int v = Vocabulary::standard().size();
  TextEncoderParams p;
  p.weights["tok.embed"] = normal_matrix<float>(rng, v, kDim, 1.0);
  p.weights["tok.pos"] = normal_matrix<float>(rng, kSeqLen, kDim, 0.1);
  p.weights["mix.tokens"] = normal_matrix<float>(rng, kSeqLen, kSeqLen, 1.0 / std::sqrt(kSeqLen));
  p.weights["mix.proj.w"] = normal_matrix<float>(rng, kDim, kDim, 1.0 / std::sqrt(kDim));
  p.weights["mix.proj.b"] = Mat<float>::Zero(1, kDim);
  return p;
}

void TextEncoderParams::validate() const {
  const int v = Vocabulary::standard().size();
  auto check = [&](const char* name, int r, int c) {
    auto it = weights.find(name);
    require(it != weights.end(), Errc::ShapeMismatch, std::string("text encoder lacks ") + name);
    require(it->second.rows() == r && it->second.cols() == c, Errc::ShapeMismatch,
            std::string("text encoder tensor has wrong shape: ") + name);
    require(it->second.allFinite(), Errc::InvalidArgument, std::string("non-finite entries in ") + name);
  };
  check("tok.embed", v, kDim);
  check("tok.pos", kSeqLen, kDim);
  check("mix.tokens", kSeqLen, kSeqLen);
  check("mix.proj.w", kDim, kDim);
  check("mix.proj.b", 1, kDim);
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab) {
  std::istringstream in{std::string(text)};
  std::vector<int> content;
  std::string word;
  while (in >> word) {
    const int id = vocab.find(word);
    if (id < 0 || id == kPadId || id == kBosId) fail(Errc::UnknownToken, word);
    content.push_back(id);
  }
  if (content.size() > kSeqLen - 1)
    fail(Errc::TooLong, std::to_string(content.size()) + " content tokens, at most " +
                            std::to_string(kSeqLen - 1) + " allowed");
  TokenSeq seq;
  seq.ids.fill(kPadId);
  seq.ids[0] = kBosId;
  for (std::size_t i = 0; i < content.size(); ++i) seq.ids[i + 1] = content[i];
  return seq;
}

template <class S>
ad::Var<S> encode_batch(const Bound<S>& params, std::span<const TokenSeq> seqs) {
  std::vector<int> ids;
  std::vector<int> positions;
  ids.reserve(seqs.size() * kSeqLen);
  positions.reserve(seqs.size() * kSeqLen);
  for (const auto& s : seqs)
    for (int i = 0; i < kSeqLen; ++i) {
      ids.push_back(s.ids[i]);
      positions.push_back(i);
    }
  auto x = ad::add(ad::gather_rows(params("tok.embed"), std::span<const int>(ids)),
                   ad::gather_rows(params("tok.pos"), std::span<const int>(positions)));
  auto mixed = ad::mix_blocks(x, params("mix.tokens"));
  auto proj = ad::add_row_vector(ad::matmul(mixed, params("mix.proj.w")), params("mix.proj.b"));
  auto out = ad::add(x, proj);
  return ad::reshape(out, static_cast<Eigen::Index>(seqs.size()), kSeqLen * kDim);
}

PromptEmbedding encode(const TokenSeq& seq, const TextEncoderParams& params) {
  ad::Tape<float> tape;
  Bound<float> bound(tape, params.weights, false);
  auto out = encode_batch<float>(bound, std::span<const TokenSeq>(&seq, 1));
  PromptEmbedding e;
  e.rows = Eigen::Map<const Mat<float>>(out.value().data(), kSeqLen, kDim);
  return e;
}

PromptEmbedding encode_text(std::string_view text, const TextEncoderParams& params) {
  return encode(tokenize(text), params);
}

Mat<float> contrastive_direction(std::string_view prompt_plus,
                                 std::string_view prompt_minus,
                                 const TextEncoderParams& params,
                                 const Vocabulary& vocab) {
  const auto plus = encode(tokenize(prompt_plus, vocab), params);
  const auto minus = encode(tokenize(prompt_minus, vocab), params);
  return plus.rows - minus.rows;
}

template ad::Var<float> encode_batch(const Bound<float>&, std::span<const TokenSeq>);
template ad::Var<double> encode_batch(const Bound<double>&, std::span<const TokenSeq>);

}  // namespace lab::textenc
