#pragma once

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "pean/charset.hpp"
#include "pean/optimizer.hpp"

namespace pean {

// Versioned binary checkpoint: magic, a JSON metadata header, then
// name -> shape -> float64 data entries for parameters, buffers and
// (optionally) optimizer moments.
constexpr const char kCkptMagic[8] = {'P', 'E', 'A', 'N', 'C', 'K', 'P', '1'};

struct CheckpointMeta {
  int version = 1;
  std::string stage;  // "recognizer" | "pretrain" | "finetune"
  int64_t step = 0;
  nlohmann::json config = nlohmann::json::object();
  std::string rng_state;
  std::string charset = Charset::kSymbols;
};

namespace detail {

inline void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_str(std::istream& is) {
  const uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

template <class T>
void write_entry(std::ostream& os, const std::string& name, const Tensor<T>& t) {
  write_str(os, name);
  write_u64(os, static_cast<uint64_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) write_u64(os, static_cast<uint64_t>(t.dim(i)));
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double v = static_cast<double>(t[i]);
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
}

struct RawEntry {
  Shape shape;
  std::vector<double> data;
};

inline std::pair<std::string, RawEntry> read_entry(std::istream& is) {
  const std::string name = read_str(is);
  RawEntry e;
  const uint64_t nd = read_u64(is);
  int64_t numel = 1;
  for (uint64_t i = 0; i < nd; ++i) {
    e.shape.push_back(static_cast<int>(read_u64(is)));
    numel *= e.shape.back();
  }
  e.data.resize(static_cast<size_t>(numel));
  is.read(reinterpret_cast<char*>(e.data.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(numel)));
  return {name, std::move(e)};
}

}  // namespace detail

// Saves `params` (values + buffers) and, when given, the optimizer moments.
// `opt_params` names the parameter subset the optimizer applies to (defaults
// to `params` itself).
template <class T>
void save_checkpoint(const std::string& path, nn::Params<T>& params, const CheckpointMeta& meta,
                     const AdamW<T>* opt = nullptr, const nn::Params<T>* opt_params = nullptr) {
  if (!opt_params) opt_params = &params;
  std::ofstream os(path, std::ios::binary);
  if (!os) fail_io("cannot open checkpoint for writing: " + path);
  os.write(kCkptMagic, sizeof(kCkptMagic));
  nlohmann::json header = {{"version", meta.version}, {"stage", meta.stage},
                           {"step", meta.step},       {"config", meta.config},
                           {"rng_state", meta.rng_state}, {"charset", meta.charset},
                           {"opt_step", opt ? opt->t : 0}, {"has_optimizer", opt != nullptr}};
  detail::write_str(os, header.dump());
  uint64_t count = params.learnable.size() + params.buffers.size();
  if (opt) count += 2 * opt_params->learnable.size();
  detail::write_u64(os, count);
  for (auto& [name, p] : params.learnable) detail::write_entry(os, "param/" + name, p.val());
  for (auto& [name, b] : params.buffers) detail::write_entry(os, "buffer/" + name, *b);
  if (opt) {
    check(opt->m.size() == opt_params->learnable.size(),
          "save_checkpoint: optimizer state mismatch");
    for (size_t i = 0; i < opt_params->learnable.size(); ++i) {
      detail::write_entry(os, "opt_m/" + opt_params->learnable[i].first, opt->m[i]);
      detail::write_entry(os, "opt_v/" + opt_params->learnable[i].first, opt->v[i]);
    }
  }
  if (!os) fail_io("failed writing checkpoint: " + path);
}

// Loads entries by name into the given params. strict requires an exact
// parameter name-set match and identical shapes; mismatches are reported
// per parameter.
template <class T>
CheckpointMeta load_checkpoint(const std::string& path, nn::Params<T>& params,
                               AdamW<T>* opt = nullptr, bool strict = true) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_io("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    fail_io("not a PEAN checkpoint: " + path);
  nlohmann::json header = nlohmann::json::parse(detail::read_str(is), nullptr, false);
  if (header.is_discarded()) fail_io("corrupt checkpoint header: " + path);
  CheckpointMeta meta;
  meta.version = header.value("version", 1);
  meta.stage = header.value("stage", "");
  meta.step = header.value("step", int64_t(0));
  meta.config = header.value("config", nlohmann::json::object());
  meta.rng_state = header.value("rng_state", "");
  meta.charset = header.value("charset", std::string(Charset::kSymbols));

  std::map<std::string, detail::RawEntry> entries;
  const uint64_t count = detail::read_u64(is);
  for (uint64_t i = 0; i < count; ++i) {
    auto [name, e] = detail::read_entry(is);
    if (!is) fail_io("truncated checkpoint: " + path);
    entries.emplace(std::move(name), std::move(e));
  }

  std::string problems;
  auto fetch = [&](const std::string& key, Tensor<T>& dst, bool required) {
    auto it = entries.find(key);
    if (it == entries.end()) {
      if (required) problems += "  missing: " + key + "\n";
      return;
    }
    if (it->second.shape != dst.shape()) {
      problems += "  shape mismatch: " + key + " file " + shape_str(it->second.shape) +
                  " vs model " + shape_str(dst.shape()) + "\n";
      return;
    }
    for (int64_t i = 0; i < dst.numel(); ++i)
      dst[i] = static_cast<T>(it->second.data[static_cast<size_t>(i)]);
  };

  std::set<std::string> expected;
  for (auto& [name, p] : params.learnable) {
    expected.insert("param/" + name);
    fetch("param/" + name, p.val(), strict);
  }
  for (auto& [name, b] : params.buffers) {
    expected.insert("buffer/" + name);
    fetch("buffer/" + name, *b, strict);
  }
  if (opt) {
    opt->init(params);
    opt->t = header.value("opt_step", int64_t(0));
    for (size_t i = 0; i < params.learnable.size(); ++i) {
      expected.insert("opt_m/" + params.learnable[i].first);
      expected.insert("opt_v/" + params.learnable[i].first);
      fetch("opt_m/" + params.learnable[i].first, opt->m[i], strict);
      fetch("opt_v/" + params.learnable[i].first, opt->v[i], strict);
    }
  }
  if (strict)
    for (const auto& [name, _] : entries)
      if (!expected.count(name) && name.rfind("opt_", 0) != 0)
        problems += "  unexpected in file: " + name + "\n";
  if (!problems.empty())
    throw Error(Error::Kind::Prerequisite, "checkpoint incompatible: " + path + "\n" + problems);
  return meta;
}

// Header-only read: magic + JSON metadata, no tensor data.
inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_io("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    fail_io("not a PEAN checkpoint: " + path);
  nlohmann::json header = nlohmann::json::parse(detail::read_str(is), nullptr, false);
  if (header.is_discarded()) fail_io("corrupt checkpoint header: " + path);
  CheckpointMeta meta;
  meta.version = header.value("version", 1);
  meta.stage = header.value("stage", "");
  meta.step = header.value("step", int64_t(0));
  meta.config = header.value("config", nlohmann::json::object());
  meta.rng_state = header.value("rng_state", "");
  meta.charset = header.value("charset", std::string(Charset::kSymbols));
  return meta;
}

// Names of all entries stored in a checkpoint file.
inline std::set<std::string> checkpoint_entry_names(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_io("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    fail_io("not a PEAN checkpoint: " + path);
  (void)detail::read_str(is);
  std::set<std::string> names;
  const uint64_t count = detail::read_u64(is);
  for (uint64_t i = 0; i < count; ++i) {
    auto [name, e] = detail::read_entry(is);
    if (!is) fail_io("truncated checkpoint: " + path);
    names.insert(name);
  }
  return names;
}

// FNV-1a over the file bytes; used by freeze-contract tests.
inline uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail_io("cannot hash missing file: " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i)
      h = (h ^ static_cast<unsigned char>(buf[i])) * 1099511628211ull;
    if (!is) break;
  }
  return h;
}

}  // namespace pean
