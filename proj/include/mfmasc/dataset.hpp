#pragma once

// Dataset index (TSV of audio path, scene label, split), metadata ingestion,
// and a deterministic synthetic 10-class corpus for end-to-end verification.

#include <cstdint>
#include <string>
#include <vector>

#include "mfmasc/errors.hpp"

namespace mfmasc {

// The 10 acoustic-scene labels, in canonical (index) order.
const std::vector<std::string>& scene_labels();
size_t label_index(const std::string& name);

struct IndexEntry {
    std::string path;   // audio file
    size_t label = 0;   // index into scene_labels()
    std::string split;  // "train" or "test"
};

struct DatasetIndex {
    std::vector<IndexEntry> entries;

    std::vector<size_t> of_split(const std::string& split) const;
};

// Index file: TSV with header "path\tscene_label\tsplit".
DatasetIndex load_index(const std::string& path);
void save_index(const DatasetIndex& index, const std::string& path);

// Metadata TSV with header naming at least `filename` and `scene_label`
// columns (an optional `split` column is honored; otherwise everything is
// train). Paths resolve against audio_root and must exist; all bad rows are
// collected into one error.
DatasetIndex ingest(const std::string& meta_path, const std::string& audio_root);

// Per-class recipe: band-limited noise (biquad bandpass around a class
// center frequency) with a class-unique amplitude-modulation rate, per-clip
// jitter, and a low noise floor. 10 s, 44.1 kHz, 16-bit mono WAVs under
// out_dir/audio plus out_dir/meta.tsv; the last test_per_class clips of each
// class land in the test split. Deterministic per seed.
DatasetIndex synth_corpus(const std::string& out_dir, size_t train_per_class,
                          size_t test_per_class, uint64_t seed);

}  // namespace mfmasc
