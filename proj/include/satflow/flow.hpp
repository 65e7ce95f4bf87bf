#pragma once
// Real NVP regressor conditioned on the spacecraft inertia, with a plain
// skip-connection head or one of two self-attention heads. Maps the 12-d
// (w, w_rw, u_rw, w_dot) input to S future w increments.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "satflow/autodiff.hpp"
#include "satflow/dataset.hpp"

namespace satflow::flow {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;

enum class Head : std::uint32_t { plain = 0, sa1 = 1, sa2 = 2 };

std::string head_name(Head h);
/// Accepts "plain", "sa1", "sa2" (case-insensitive). Throws std::invalid_argument.
Head parse_head(const std::string& s);

struct ModelConfig {
  std::uint32_t n_coupling_layers = 4;
  std::uint32_t hidden_layers = 2;
  std::uint32_t hidden_units = 64;
  std::uint32_t steps = 10;
  Head head = Head::sa2;
  std::uint32_t token_dim = 16;
  double scale_clamp = 2.0;
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr std::size_t kFeatureDim = data::kInputDim + 12;

using FormatError = data::FormatError;

/// softmax(q k^T / sqrt(d)) v over [B, S, d] operands. When `weights` is not
/// null it receives the [B, S, S] attention matrix node.
Var scaled_dot_attention(Var q, Var k, Var v, Var* weights = nullptr);

class FlowModel {
 public:
  /// `cond_ref` is the conditioning vector of the training spacecraft; the
  /// network sees conditioning as the elementwise ratio cond / cond_ref.
  FlowModel(const ModelConfig& cfg, const data::Normalization& norm,
            const data::ConditioningVector& cond_ref);

  const ModelConfig& config() const { return cfg_; }
  const data::Normalization& normalization() const { return norm_; }
  const data::ConditioningVector& cond_ref() const { return cond_ref_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find(const std::string& name);
  std::size_t parameter_count() const;

  /// Normalized pipeline: input_n [B,12], cond_n [B,21] -> [B, S*3] in units of
  /// sigma_dw.
  Var forward(Tape& t, Var input_n, Var cond_n);

  /// Physical-unit pipeline: raw input [B,12] (w, w_rw, u_rw, w_dot) and one
  /// conditioning vector shared by the batch -> [B, S*3] increments in rad/s.
  Var predict(Tape& t, Var raw_input, const data::ConditioningVector& cond);

  /// Normalize raw inputs/conditioning on the tape.
  Var normalize_input(Tape& t, Var raw_input) const;
  Var cond_features(Tape& t, const data::ConditioningVector& cond, std::size_t batch) const;
  /// Per-row conditioning [B,21] -> ratio to the reference spacecraft.
  Var normalize_cond(Tape& t, Var raw_cond) const;
  /// Multiply normalized outputs [B, S*3] by sigma_dw.
  Var denormalize(Tape& t, Var out_n) const;

  /// Row 0 of `predict`: the next-step increment.
  Vec3 predict_next(const dynamics::BodyState& s, const Vec3& u_rw,
                    const data::ConditioningVector& cond);

  /// Coupling stack alone on 24-d feature rows, forward or analytically inverted.
  Var couplings(Tape& t, Var features, bool inverse = false);
  Tensor coupling_stack(const Tensor& features, bool inverse);

  /// Attention weights [B, S, S] for normalized inputs (empty for plain).
  Tensor attention_weights(const Tensor& input_n, const Tensor& cond_n);

 private:
  struct Layer {
    std::size_t w, b;  // indices into params_
  };
  struct Mlp {
    std::vector<Layer> layers;
  };
  struct Coupling {
    Mlp s, t;
    std::vector<std::size_t> pass, transform, restore;
  };

  void build();
  Layer add_linear(const std::string& name, std::size_t in, std::size_t out, bool zero);
  Var linear(Tape& t, const Layer& l, Var x);
  Var mlp(Tape& t, const Mlp& m, Var x);
  Var couple(Tape& t, const Coupling& c, Var x, bool inverse);
  Var head(Tape& t, Var z, Var input_n, Var cond_n, Var* attention);

  ModelConfig cfg_;
  data::Normalization norm_;
  data::ConditioningVector cond_ref_;
  std::vector<Parameter> params_;
  std::vector<Coupling> couplings_;
  Layer out_{}, tok_{}, q_{}, k_{}, v_{}, qk_q_{}, qk_k_{};
  std::vector<std::size_t> torque_cols_;
  std::vector<double> inv_std_;
  std::vector<double> cond_scale_;
};

void save_weights(const FlowModel& m, const std::filesystem::path& path);
/// The config stored in the file wins over any config the caller has in mind.
FlowModel load_weights(const std::filesystem::path& path);

}  // namespace satflow::flow
