// Copyright 2026 The StageRefine Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "stagerefine/checkpoint.h"

#include <cstring>
#include <fstream>

#include "stagerefine/errors.h"

namespace stagerefine {
namespace {

constexpr char kMagic[8] = {'S', 'R', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <typename T>
  void vec(const std::vector<T>& v) {
    pod<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(T)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string file) : in_(in), file_(std::move(file)) {}
  template <typename T>
  T pod() {
    T v{};
    if (!in_.read(reinterpret_cast<char*>(&v), sizeof(T))) truncated();
    return v;
  }
  std::uint64_t count(std::uint64_t limit = std::uint64_t{1} << 34) {
    const auto n = pod<std::uint64_t>();
    if (n > limit) {
      throw VersioningError("checkpoint " + file_ + " has a corrupt length");
    }
    return n;
  }
  std::string str() {
    std::string s(count(1 << 20), '\0');
    if (!in_.read(s.data(), static_cast<std::streamsize>(s.size()))) {
      truncated();
    }
    return s;
  }
  template <typename T>
  std::vector<T> vec() {
    std::vector<T> v(count());
    if (!in_.read(reinterpret_cast<char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(T)))) {
      truncated();
    }
    return v;
  }
  [[noreturn]] void truncated() {
    throw VersioningError("checkpoint " + file_ + " is truncated");
  }

 private:
  std::istream& in_;
  std::string file_;
};

void write_refinement(Writer& w, const RefinementState& s) {
  w.pod<std::int64_t>(s.iteration);
  w.vec(s.provenance);
  w.pod<std::uint64_t>(s.injected.size());
  for (const InjectedSample& inj : s.injected) {
    w.pod<std::int64_t>(inj.source_index);
    w.pod<std::int32_t>(inj.label);
    w.pod<std::int32_t>(inj.iteration);
    w.pod<std::int32_t>(inj.image.height);
    w.pod<std::int32_t>(inj.image.width);
    w.pod<std::int32_t>(inj.image.channels);
    w.vec(inj.image.pixels);
  }
  const auto& snaps = s.ledger.snapshots();
  w.pod<std::uint64_t>(snaps.size());
  for (const StageSnapshot& snap : snaps) {
    w.pod<std::int32_t>(snap.iteration);
    w.pod<std::int32_t>(snap.stage_epoch);
    w.pod<double>(snap.threshold);
    w.pod<std::int64_t>(snap.selected);
    w.vec(snap.mask);
  }
  w.pod<std::uint64_t>(s.history.size());
  for (const IterationRecord& r : s.history) {
    w.pod<std::int32_t>(r.iteration);
    w.vec(r.consensus);
    w.vec(r.labels_before);
    w.vec(r.labels_after);
    w.pod<std::int64_t>(r.injected_added);
    w.pod<std::uint64_t>(r.epochs.size());
    for (const EpochStats& e : r.epochs) {
      w.pod<std::int32_t>(e.epoch);
      w.str(e.phase);
      w.pod<double>(e.mean_loss);
      w.pod<double>(e.learning_rate);
      w.pod<std::int64_t>(e.sample_count);
      w.pod<double>(e.train_accuracy);
    }
  }
}

RefinementState read_refinement(Reader& r) {
  RefinementState s;
  s.iteration = static_cast<int>(r.pod<std::int64_t>());
  s.provenance = r.vec<int>();
  const auto injected = r.count();
  for (std::uint64_t i = 0; i < injected; ++i) {
    InjectedSample inj;
    inj.source_index = r.pod<std::int64_t>();
    inj.label = r.pod<std::int32_t>();
    inj.iteration = r.pod<std::int32_t>();
    inj.image.height = r.pod<std::int32_t>();
    inj.image.width = r.pod<std::int32_t>();
    inj.image.channels = r.pod<std::int32_t>();
    inj.image.pixels = r.vec<std::uint8_t>();
    s.injected.push_back(std::move(inj));
  }
  const auto snaps = r.count();
  for (std::uint64_t i = 0; i < snaps; ++i) {
    StageSnapshot snap;
    snap.iteration = r.pod<std::int32_t>();
    snap.stage_epoch = r.pod<std::int32_t>();
    snap.threshold = r.pod<double>();
    snap.selected = r.pod<std::int64_t>();
    snap.mask = r.vec<std::uint8_t>();
    s.ledger.restore(std::move(snap));
  }
  const auto records = r.count();
  for (std::uint64_t i = 0; i < records; ++i) {
    IterationRecord rec;
    rec.iteration = r.pod<std::int32_t>();
    rec.consensus = r.vec<std::size_t>();
    rec.labels_before = r.vec<int>();
    rec.labels_after = r.vec<int>();
    rec.injected_added = r.pod<std::int64_t>();
    const auto epochs = r.count();
    for (std::uint64_t e = 0; e < epochs; ++e) {
      EpochStats st;
      st.epoch = r.pod<std::int32_t>();
      st.phase = r.str();
      st.mean_loss = r.pod<double>();
      st.learning_rate = r.pod<double>();
      st.sample_count = r.pod<std::int64_t>();
      st.train_accuracy = r.pod<double>();
      rec.epochs.push_back(std::move(st));
    }
    s.history.push_back(std::move(rec));
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::string& phase, std::uint64_t master_seed,
                     const ModelState& model,
                     const std::vector<int>* working_labels,
                     const RefinementState* refinement) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  Writer w(out);
  w.pod<std::uint32_t>(kVersion);
  w.str(phase);
  w.pod<std::uint64_t>(master_seed);
  model.serialize(out);
  w.pod<std::uint8_t>(working_labels != nullptr ? 1 : 0);
  if (working_labels != nullptr) w.vec(*working_labels);
  w.pod<std::uint8_t>(refinement != nullptr ? 1 : 0);
  if (refinement != nullptr) write_refinement(w, *refinement);
  if (!out) throw IoError("failed while writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const EncoderSpec* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw VersioningError(path.string() + " is not a checkpoint file");
  }
  Reader r(in, path.string());
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) {
    throw VersioningError("checkpoint " + path.string() + " has version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kVersion));
  }
  std::string phase = r.str();
  const auto seed = r.pod<std::uint64_t>();
  ModelState model = ModelState::deserialize(in, expected);
  Checkpoint ckpt{std::move(phase), seed, std::move(model), std::nullopt,
                  std::nullopt};
  if (r.pod<std::uint8_t>() != 0) ckpt.working_labels = r.vec<int>();
  if (r.pod<std::uint8_t>() != 0) ckpt.refinement = read_refinement(r);
  return ckpt;
}

}  // namespace stagerefine
