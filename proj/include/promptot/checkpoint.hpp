// "CKPT1" container: magic, then named TNS1 tensor records
// (u32 name length, name bytes, tensor). Record order is preserved so the
// container round-trips byte-for-byte.
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "promptot/tensor.hpp"

namespace promptot {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_checkpoint_file(const std::filesystem::path& file, const NamedTensors& records);
NamedTensors read_checkpoint_file(const std::filesystem::path& file);

/// Lookup helper; throws DataError when the record is missing.
const Tensor& find_record(const NamedTensors& records, const std::string& name);
bool has_record(const NamedTensors& records, const std::string& name);

/// Text payloads (config snapshots) ride in the container as byte tensors.
Tensor text_to_tensor(const std::string& text);
std::string tensor_to_text(const Tensor& t);

}  // namespace promptot
