#pragma once

#include <string>

#include "casp/backbones.hpp"
#include "casp/pseudo_labeling.hpp"
#include "casp/train.hpp"

namespace casp {

enum class BaselineKind { st, norm };

const char* to_string(BaselineKind k);

// Stage 2: L1 training on the stability-selected pseudo-labeled set, same
// mechanics as pretraining, parameter scope from cfg (default all). The hidden
// label guard stays armed throughout.
FusionModel self_train(const FusionModel& adapted, const PseudoLabeledSet& t_train,
                       const TrainConfig& cfg, TrainResult* history_out = nullptr);

// ST/Norm baselines: pseudo labels are the raw source-model predictions over
// the whole adaptation split, no selection, no averaging. ST trains all
// parameters, Norm only norm-affine ones.
FusionModel run_baseline(BaselineKind kind, const FusionModel& source_model,
                         const DomainDataset& target, TrainConfig cfg,
                         TrainResult* history_out = nullptr);

}  // namespace casp
