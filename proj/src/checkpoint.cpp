// SPDX-License-Identifier: Apache-2.0

#include "grapher/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace grapher {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr const char* kMagic = "GRPH1";

std::string exact_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct Entry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  const double* data = nullptr;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const GrapherModel& model, const AdamW* optimizer,
                     const TrainerState* state) {
  std::vector<Entry> entries;
  for (const auto& p : model.parameters()) {
    entries.push_back({p.name, p.tensor.rows(), p.tensor.cols(), p.tensor.data().data()});
  }
  if (optimizer) {
    const AdamW& opt = *optimizer;
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      const auto& p = opt.params()[i];
      entries.push_back({"adam.m." + p.name, p.tensor.rows(), p.tensor.cols(), opt.first_moments()[i].data()});
    }
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
      const auto& p = opt.params()[i];
      entries.push_back({"adam.v." + p.name, p.tensor.rows(), p.tensor.cols(), opt.second_moments()[i].data()});
    }
  }

  std::ostringstream manifest;
  manifest << kMagic << '\n';
  KeyValueConfig cfg;
  model.config().store(cfg);
  for (const auto& [k, v] : cfg.entries()) manifest << "config " << k << " = " << v << '\n';
  if (optimizer) manifest << "state adam_steps = " << optimizer->step_count() << '\n';
  if (state) {
    manifest << "state step = " << state->step << '\n';
    manifest << "state best_dev_f1 = " << exact_double(state->best_dev_f1) << '\n';
    manifest << "state best_step = " << state->best_step << '\n';
  }
  for (const auto& c : model.edge_classes()) manifest << "class " << c << '\n';
  for (const auto& t : model.vocab().ordinary_tokens()) manifest << "token " << t << '\n';
  for (const auto& e : entries) manifest << "param " << e.name << ' ' << e.rows << ' ' << e.cols << '\n';
  manifest << "end\n";

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    const std::string head = manifest.str();
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& e : entries) {
      out.write(reinterpret_cast<const char*>(e.data), static_cast<std::streamsize>(e.rows * e.cols * sizeof(double)));
    }
    out.flush();
    if (!out) throw DataError("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string where = path.string() + ": ";

  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw DataError(where + "missing GRPH1 magic");

  KeyValueConfig cfg;
  KeyValueConfig state;
  std::vector<std::string> classes;
  std::vector<std::string> tokens;
  std::vector<Entry> entries;
  std::size_t lineno = 1;
  bool ended = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string at = where + "manifest line " + std::to_string(lineno) + ": ";
    if (line == "end") {
      ended = true;
      break;
    }
    const auto sp = line.find(' ');
    const std::string kind = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? std::string() : line.substr(sp + 1);
    if (kind == "config" || kind == "state") {
      const auto eq = rest.find(" = ");
      if (eq == std::string::npos) throw DataError(at + "expected '" + kind + " key = value'");
      (kind == "config" ? cfg : state).set(rest.substr(0, eq), rest.substr(eq + 3));
    } else if (kind == "class") {
      classes.push_back(rest);
    } else if (kind == "token") {
      tokens.push_back(rest);
    } else if (kind == "param") {
      std::istringstream ps(rest);
      Entry e;
      if (!(ps >> e.name >> e.rows >> e.cols) || !ps.eof()) throw DataError(at + "expected 'param name rows cols'");
      entries.push_back(std::move(e));
    } else {
      throw DataError(at + "unknown entry '" + kind + "'");
    }
  }
  if (!ended) throw DataError(where + "manifest is not terminated by 'end'");

  std::size_t expected = 0;
  for (const auto& e : entries) expected += e.rows * e.cols;
  std::vector<double> blob(expected);
  in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(expected * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != expected * sizeof(double)) {
    throw DataError(where + "payload holds " + std::to_string(in.gcount()) + " bytes, manifest declares " +
                    std::to_string(expected * sizeof(double)));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(where + "trailing bytes after the payload");

  ModelConfig mc;
  try {
    mc.load(cfg);
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  }
  LoadedCheckpoint out;
  try {
    out.model = std::make_unique<GrapherModel>(mc, Vocab(tokens), classes);
  } catch (const std::exception& e) {
    throw DataError(where + "inconsistent manifest: " + e.what());
  }
  if (out.model->config().vocab != mc.vocab || out.model->config().classes != mc.classes) {
    throw DataError(where + "vocab/class counts disagree with the config lines");
  }

  std::map<std::string, std::pair<const Entry*, const double*>> by_name;
  const double* cursor = blob.data();
  for (const auto& e : entries) {
    if (!by_name.emplace(e.name, std::make_pair(&e, cursor)).second) {
      throw DataError(where + "duplicate tensor '" + e.name + "'");
    }
    cursor += e.rows * e.cols;
  }

  auto take = [&](const std::string& name, Tensor t, std::vector<double>* into) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(where + "missing tensor '" + name + "'");
    const Entry& e = *it->second.first;
    if (e.rows != t.rows() || e.cols != t.cols()) {
      throw DataError(where + "tensor '" + name + "' is " + std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                      ", model expects " + t.shape().str());
    }
    const double* src = it->second.second;
    if (into) {
      into->assign(src, src + e.rows * e.cols);
    } else {
      std::memcpy(t.mutable_data().data(), src, e.rows * e.cols * sizeof(double));
    }
    by_name.erase(it);
  };

  for (const auto& p : out.model->parameters()) take(p.name, p.tensor, nullptr);
  if (state.has("adam_steps")) {
    out.has_optimizer = true;
    out.optimizer_steps = static_cast<std::int64_t>(state.get_u64("adam_steps"));
    for (const auto& p : out.model->parameters()) {
      out.first_moments.emplace_back();
      take("adam.m." + p.name, p.tensor, &out.first_moments.back());
    }
    for (const auto& p : out.model->parameters()) {
      out.second_moments.emplace_back();
      take("adam.v." + p.name, p.tensor, &out.second_moments.back());
    }
  }
  if (!by_name.empty()) throw DataError(where + "unexpected tensor '" + by_name.begin()->first + "'");
  if (state.has("step")) out.state.step = static_cast<std::int64_t>(state.get_u64("step"));
  if (state.has("best_dev_f1")) out.state.best_dev_f1 = state.get_double("best_dev_f1");
  if (state.has("best_step")) out.state.best_step = std::stoll(state.get("best_step"));
  return out;
}

}  // namespace grapher
