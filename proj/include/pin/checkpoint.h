#ifndef PIN_CHECKPOINT_H_
#define PIN_CHECKPOINT_H_

#include <filesystem>
#include <string>

#include "pin/model.h"
#include "pin/training.h"

namespace pin {

// File layout: the line "PINCKPT 1", one line of JSON manifest (model config,
// vocabulary, ontology, and {name, dtype, shape, byte_offset} per parameter
// in name order), then the parameters as one little-endian IEEE-754 blob.
template <typename T>
std::string checkpoint_bytes(const PinModel<T>& model);
template <typename T>
void save_checkpoint(const PinModel<T>& model, const std::filesystem::path& path);

template <typename T>
PinModel<T> checkpoint_from_bytes(const std::string& bytes);
// Throws CorruptCheckpointError when the manifest and blob disagree or the
// shapes do not fit the stored model config, and SchemaError when the stored
// dtype differs from T.
template <typename T>
PinModel<T> load_checkpoint(const std::filesystem::path& path);

// Stored dtype, so callers can pick the matching instantiation.
Precision checkpoint_precision(const std::filesystem::path& path);

}  // namespace pin

#endif  // PIN_CHECKPOINT_H_
