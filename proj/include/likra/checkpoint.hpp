#pragma once

// Self-describing binary weight container. One format serves base models and
// adapters: a JSON header carries the model/adapter configuration, followed
// by named float32 blocks tagged base or adapter, so a single base file can
// coexist with any number of adapter files that reference its checksum.
// Byte layout: docs/checkpoint_format.md.

#include <string>

#include "likra/model.hpp"

namespace likra {

// data_fingerprint identifies the corpus the base was trained on; commands
// that regenerate the dataset from config compare against it.
void save_base_checkpoint(const std::string& path, BaseWeights& weights,
                          const std::string& data_fingerprint = "");
BaseWeights load_base_checkpoint(const std::string& path);

struct CheckpointInfo {
    std::string kind;
    ModelConfig model;
    std::string checksum;
    std::string base_checksum;     // adapters only
    std::string data_fingerprint;  // bases only, may be empty
};
CheckpointInfo read_checkpoint_info(const std::string& path);

// Adapter files record the checksum of the base they were trained on;
// loading against a different base raises ValidationError.
void save_adapter_checkpoint(const std::string& path, LoraAdapter& adapter, BaseWeights& base);
LoraAdapter load_adapter_checkpoint(const std::string& path, BaseWeights& base);

std::string file_checksum_hex(const std::string& path);

}  // namespace likra
