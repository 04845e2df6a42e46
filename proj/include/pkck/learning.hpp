#pragma once

#include "pkck/backend.hpp"
#include "pkck/subspace.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace pkck {

// One probed example prepared for subspace training. All three hidden
// vectors come from the same layer and position (the last prompt token); the
// joint-intent prompt conditions the patched downstream evaluation.
struct TrainingExample {
  Vector h;    // w_b forward
  Vector h_p;  // w_p forward
  Vector h_c;  // w_c forward
  std::string target_param;  // first answer token of a(q, phi)
  std::string target_ctx;    // first answer token of a(q, c)
  std::string prompt_wb;     // rendered joint-intent prompt
  int layer = 0;
  int position = kLastPromptToken;
  std::string example_id;
};

enum class Objective { Jp, Jc };

enum class Schedule { SequentialJpThenJc, Alternating };

struct TrainingConfig {
  int layer = 0;
  int steps_per_phase = 120;
  double learning_rate = 0.1;
  Schedule schedule = Schedule::SequentialJpThenJc;
  int alternate_every = 0;  // k for the alternating schedule
  std::uint64_t init_seed = 1;
  int batch_size = 16;
  double convergence_tol = 0.0;  // 0 disables early stopping
  double max_grad_norm = 1.0;
};

struct LossTraceRow {
  int phase = 0;  // 1 = Jp, 2 = Jc
  int step = 0;   // global optimizer step
  double j_p = 0.0;
  double j_c = 0.0;
  double grad_norm_uc = 0.0;
  double grad_norm_up = 0.0;
  double dot_uc_up = 0.0;
  double basis_step_delta = 0.0;  // max column movement this step
};

struct LossTrace {
  std::vector<LossTraceRow> rows;
  // Full-dataset objective values at the phase boundaries.
  double jp_initial = 0.0, jp_final = 0.0;
  double jc_initial = 0.0, jc_final = 0.0;
  std::string status = "completed";

  void save_csv(const std::filesystem::path& path) const;
};

// The patched decomposition in closed form: h + u_swap <u_swap, h_alt - h>.
// Algebraically equal to (I-P)h + u_keep<u_keep,h> + u_swap<u_swap,h_alt>.
Vector patched_state(const Vector& h, const Vector& h_alt, const Vector& u_keep,
                     const Vector& u_swap);

struct LossAndGrad {
  double loss = 0.0;
  Vector grad_uc;
  Vector grad_up;
};

// Mean patched NLL over the batch plus the chain-rule gradient through the
// closed form. Only the swap direction receives gradient; with
// delta = h_alt - h and g the backend NLL gradient, it accumulates
// (u_swap . delta) g + (g . u_swap) delta per example. Clipped to
// max_grad_norm when positive.
LossAndGrad subspace_loss_and_grad(const std::vector<const TrainingExample*>& batch,
                                   const Vector& u_c, const Vector& u_p, Objective which,
                                   Backend& backend, double max_grad_norm = 0.0,
                                   bool check_orthonormal = true);

double evaluate_objective(const std::vector<TrainingExample>& dataset, const Vector& u_c,
                          const Vector& u_p, Objective which, Backend& backend);

struct TrainedSubspace {
  ProjectionSubspace subspace;  // labels assigned by the caller or assign_directions
  Vector u_c;                   // phase-2 trained direction
  Vector u_p;                   // phase-1 trained direction
  LossTrace trace;
};

// Sequential minimization (Jp then Jc by default) with Gram-Schmidt
// re-orthonormalization after every step, the actively trained vector first.
TrainedSubspace train_subspace(const std::vector<TrainingExample>& dataset,
                               const TrainingConfig& config, Backend& backend);

struct DirectionAssignment {
  ProjectionSubspace subspace;
  bool conflict = false;  // both criteria picked the same column
};

// PK goes to the basis vector with the larger mean absolute projection of
// the parametric answer-token states, CK likewise for contextual states.
DirectionAssignment assign_directions(const Vector& u_a, const Vector& u_b, const Matrix& H_wp,
                                      const Matrix& H_wc, int layer);

}  // namespace pkck
