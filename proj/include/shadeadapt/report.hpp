#pragma once

#include "shadeadapt/ablation.hpp"
#include "shadeadapt/sampling.hpp"
#include "shadeadapt/trainer.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace shadeadapt {

/// `filename,Tp,Tn,Np,Nn,ber` per image plus a `summary` row carrying the
/// summed counts and the aggregate BER.
std::string eval_csv(const EvalResult& r);
std::string eval_json(const EvalResult& r);
std::string eval_table(const EvalResult& r);

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_json(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

/// [{"x":..,"y":..,"label":..,"score":..}, ...] in coarse-mask pixels.
std::string points_json(const std::vector<PointPrompt>& points);

/// Coarse mask as grey (round(255 p)) with pure red at positive and pure
/// green at negative prompt pixels. (H, W, 3) uint8.
torch::Tensor prompt_overlay(const ProbMap& coarse, const std::vector<PointPrompt>& points);

/// Coarse mask as 8-bit grey, (H, W) uint8.
torch::Tensor probmap_to_gray(const ProbMap& coarse);
/// Grey image read back as probabilities v / 255.
ProbMap gray_to_probmap(const torch::Tensor& gray);

/// Throws IoError when the file cannot be written.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace shadeadapt
