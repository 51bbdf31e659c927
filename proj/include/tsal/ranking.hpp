#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tsal/candidates.hpp"
#include "tsal/ot.hpp"

namespace tsal {

struct MarginTrainingOptions {
  // Weight of the hinge term against 1/2 ||w||^2.
  double c_reg = 100.0;
  int epochs = 300;
  std::uint64_t seed = 0;
  // 0 means full-batch subgradient steps; otherwise seeded mini-batches.
  std::size_t batch_size = 0;
  bool balance_classes = true;
};

struct MarginTrainingReport {
  double final_hinge_loss = 0.0;
  std::size_t margin_violations = 0;
  std::size_t misclassified = 0;
};

/// Linear max-margin scorer; s(z) = <w, z> + b, positive side = true positives.
struct LinearRanker {
  std::vector<double> weights;
  double bias = 0.0;
  MarginTrainingReport report;

  double score(std::span<const double> features) const;
};

LinearRanker train_margin_ranker(const CandidateSet& source, const MarginTrainingOptions& options = {});

enum class ScoreKind { svm_margin, transferred, confidence, breaking_ties, random };

/// Scores aligned with a candidate set. An empty optional marks a target with
/// no transport link ("unlinked").
struct ScoreVector {
  ScoreKind kind = ScoreKind::svm_margin;
  std::vector<std::optional<double>> values;

  std::size_t size() const { return values.size(); }
};

ScoreVector margin_scores(const LinearRanker& ranker, const CandidateSet& set);

/// s_j = mean of the source scores s_i over the links (i, j) with positive mass.
ScoreVector transfer_scores(const TransportPlan& plan, const ScoreVector& source_scores);

enum class Criterion { transfer_sampling, max_confidence, breaking_ties, random };

std::string_view to_string(Criterion criterion);
Criterion parse_criterion(std::string_view text);

struct RankingInputs {
  // transfer_sampling
  const TransportPlan* plan = nullptr;
  const ScoreVector* source_scores = nullptr;
  // random
  std::optional<std::uint64_t> seed;
};

/// Total order of candidate ids, best first. Ties fall back to ascending id;
/// unlinked targets follow all linked ones, by descending animal confidence.
/// Throws std::invalid_argument when the criterion's inputs are missing.
std::vector<CandidateId> rank(Criterion criterion, const CandidateSet& target, const RankingInputs& inputs);

// Breaking-ties key: gap between the two largest class posteriors.
double breaking_ties_gap(const std::array<double, 3>& confidence);

// `rank,candidate_id,score` where score is the criterion's key (empty when unlinked).
void write_ranking_csv(const std::vector<CandidateId>& order, const CandidateSet& target, Criterion criterion,
                       const ScoreVector* transferred, const std::filesystem::path& path);

}  // namespace tsal
