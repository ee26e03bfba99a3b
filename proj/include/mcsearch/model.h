#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mcsearch/common.h"
#include "mcsearch/rng.h"
#include "mcsearch/tokenizer.h"

namespace mcsearch {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden = 128;
  std::size_t ffn = 512;
  std::size_t max_len = kDefaultMaxLen;
  std::size_t vocab_size = kDefaultVocabSize;
  double dropout = 0.1;
  std::uint64_t seed = 0;

  // Small enough for exhaustive gradient checks and sub-minute training.
  static EncoderConfig toy(std::size_t vocab_size, std::uint64_t seed = 0);

  void validate() const;
  std::string describe() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Location of one named tensor inside the flat parameter array.
struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
};

// Masked-LM target: `position` held `original` before corruption.
struct MlmTarget {
  std::size_t position = 0;
  TokenId original = kPadId;
};

struct TrainingExample {
  EncodedSequence input;
  std::vector<MlmTarget> mlm;
  std::optional<int> label;
};

struct LossBreakdown {
  double mlm = 0.0;             // mean cross-entropy over all MLM targets
  double classification = 0.0; // mean binary cross-entropy over labels
  std::size_t mlm_targets = 0;
  std::size_t labelled = 0;

  double total() const { return mlm + classification; }
};

struct ForwardOutput {
  Matrix hidden;   // sequence length x hidden
  RowVector cls;   // hidden row of position 0
  // attention[layer][head] is a (length x length) row-stochastic matrix
  // over attended keys; filled only when requested.
  std::vector<std::vector<Matrix>> attention;
};

// Post-LN transformer encoder (token + learned position embeddings, GELU
// feed-forward) with a linear masked-LM head over the vocabulary and a
// linear classification head on the [CLS] vector.
class EncoderModel {
 public:
  explicit EncoderModel(const EncoderConfig& config);

  const EncoderConfig& config() const { return config_; }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const TensorInfo& tensor(std::string_view name) const;
  std::size_t parameter_count() const { return params_.size(); }

  Eigen::Map<Matrix> view(const TensorInfo& t);
  Eigen::Map<const Matrix> view(const TensorInfo& t) const;

  ForwardOutput forward(const EncodedSequence& seq,
                        bool capture_attention = false) const;
  std::vector<ForwardOutput> forward(std::span<const EncodedSequence> batch) const;

  double classification_logit(const EncodedSequence& seq) const;

  // Loss over a batch; when `grad` is non-null it is resized to
  // parameter_count() and overwritten with d(total)/d(parameters). Dropout
  // is active iff `dropout_rng` is non-null.
  LossBreakdown loss(std::span<const TrainingExample> batch,
                     std::vector<double>* grad,
                     SplitMix64* dropout_rng = nullptr) const;

  bool all_finite() const;

  // Text header (format tag, config, tensor index) followed by the raw
  // little-endian doubles.
  void save(std::ostream& out,
            const std::optional<ArtifactHeader>& header = std::nullopt) const;
  void save(const std::filesystem::path& path,
            const std::optional<ArtifactHeader>& header = std::nullopt) const;
  static EncoderModel load(std::istream& in);
  static EncoderModel load(const std::filesystem::path& path);

 private:
  struct LayerSlots {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln1_gamma, ln1_beta;
    std::size_t w1, b1, w2, b2;
    std::size_t ln2_gamma, ln2_beta;
  };
  struct SequenceCache;

  std::size_t add_tensor(std::string name, std::size_t rows, std::size_t cols);
  void initialize();

  void run_forward(const EncodedSequence& seq, std::size_t length,
                   SplitMix64* dropout_rng, SequenceCache& cache,
                   bool keep_for_backward) const;
  void run_backward(const SequenceCache& cache, const Matrix& d_out,
                    std::vector<double>& grad) const;

  EncoderConfig config_;
  std::vector<double> params_;
  std::vector<TensorInfo> tensors_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0;
  std::vector<LayerSlots> layers_;
  std::size_t mlm_w_ = 0, mlm_b_ = 0, cls_w_ = 0, cls_b_ = 0;
};

// Sigmoid of the [CLS] logit for the encoded (query, code) pair. Pure and
// safe to call concurrently on one model.
class CrossEncoderScorer {
 public:
  CrossEncoderScorer(const EncoderModel& model, const Vocabulary& vocab);

  double score(std::string_view query, std::string_view code) const;
  std::vector<double> score_codes(std::string_view query,
                                  std::span<const std::string> codes) const;

 private:
  const EncoderModel& model_;
  const Vocabulary& vocab_;
};

double sigmoid(double x);

}  // namespace mcsearch
