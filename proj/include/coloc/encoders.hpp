#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "coloc/tape.hpp"
#include "coloc/tensor.hpp"

namespace coloc {

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 0;
};

// Small trainable CNN: stride-2 conv stack plus a linear projection onto
// the shared embedding dimension.
struct ImageEncoderConfig {
  int input_h = 32;
  int input_w = 32;
  int input_channels = 3;
  std::vector<ConvSpec> convs = {{3, 16, 4, 2}, {16, 32, 3, 2}};
  int embed_dim = 32;  // L

  // Grid shape implied by the stride schedule. Throws ConfigError if a
  // layer does not divide the spatial dims evenly (checked at setup, not
  // per call).
  std::pair<int, int> grid_shape() const;
  void validate() const;
};

// Embedding table plus a single gated recurrent cell:
//   r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
//   h_t = tanh(x_t W_h + (r_t * h_{t-1}) U_h + b_h)
struct TextEncoderConfig {
  int vocab_size = 40;  // V
  int embed_dim = 16;   // E
  int hidden_dim = 32;  // L, must equal the image embed_dim
  int max_len = 12;     // N_max

  void validate() const;
};

struct ModelConfig {
  ImageEncoderConfig image;
  TextEncoderConfig text;

  void validate() const;
};

enum class ParseMode { Word, Phrase };

ParseMode parse_mode_from_string(const std::string& s);
const char* to_string(ParseMode m);

// R_rows x C_cols grid of L-dimensional region vectors.
struct FeatureGrid {
  int rows = 0;
  int cols = 0;
  int embed_dim = 0;
  int source_h = 0;
  int source_w = 0;
  Tensor values;  // [rows x cols x L], lives on the tape that built it
};

// Half-open token interval [start, end).
struct PhraseSpan {
  int start = 0;
  int end = 0;
};

// N_max x L matrix of per-token (or per-phrase) vectors; valid rows form
// a prefix, padding rows are zero and masked out.
struct TokenMatrix {
  int max_len = 0;
  int embed_dim = 0;
  int n_valid = 0;
  Tensor values;      // [max_len x L], on tape
  Tensor valid_mask;  // [max_len] of {0,1}, plain tensor
  // Output-row interval [first, second) for each input span, in the
  // order the spans were given. In Word mode this is the span itself; in
  // Phrase mode each span collapses to a single row.
  std::vector<std::pair<int, int>> span_rows;
};

struct ModelParams {
  std::vector<Tensor> conv_w;  // [k*k*in x out] per layer
  std::vector<Tensor> conv_b;  // [out] per layer
  Tensor proj_w;               // [c_last x L]
  Tensor proj_b;               // [L]
  Tensor embed;                // [V x E]
  Tensor w_r, u_r, b_r;        // reset gate
  Tensor w_h, u_h, b_h;        // candidate

  // Stable, checkpoint-facing enumeration of every parameter tensor.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
};

// Fan-in-scaled uniform weights, zero biases; deterministic in the seed.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Registers every parameter as a leaf on the tape.
ModelParams bind_params(Tape& tape, const ModelParams& params, bool requires_grad);

FeatureGrid encode_image(Tape& tape, const Tensor& img, const ModelParams& bound, const ImageEncoderConfig& cfg);

TokenMatrix encode_tokens(Tape& tape, const std::vector<int>& ids, const std::vector<PhraseSpan>& spans, ParseMode mode, const ModelParams& bound,
                          const TextEncoderConfig& cfg);

}  // namespace coloc
