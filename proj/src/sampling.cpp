#include "riskdiff/sampling.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "riskdiff/errors.hpp"
#include "riskdiff/format.hpp"

namespace riskdiff {

const std::vector<double>& SampleSet::deriv_column(int i, int n) const {
  const auto it = derivs.find({i, n});
  if (it == derivs.end())
    throw std::invalid_argument("sample set carries no derivative column d" +
                                std::to_string(i) + "_" + std::to_string(n));
  return it->second;
}

std::vector<std::size_t> make_sorted_index(std::span<const double> losses) {
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (losses[a] != losses[b]) return losses[a] < losses[b];
    return a < b;
  });
  return order;
}

namespace {

template <typename Fill>
void run_partitioned(std::size_t count, unsigned threads, const Fill& fill) {
  if (threads <= 1) {
    fill(0, count);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = count * t / threads;
    const std::size_t end = count * (t + 1) / threads;
    workers.emplace_back([&fill, begin, end] { fill(begin, end); });
  }
  for (std::thread& w : workers) w.join();
}

}  // namespace

SampleSet draw(const LossModel& model, std::span<const double> x, std::size_t count,
               std::uint64_t seed, std::span<const std::pair<int, int>> deriv_orders,
               unsigned threads) {
  if (count < 1) throw std::invalid_argument("draw: count must be >= 1");

  SampleSet set;
  set.model_id = model.id();
  set.x.assign(x.begin(), x.end());
  set.seed = seed;
  set.count = count;
  set.losses.resize(count);
  for (const std::pair<int, int>& key : deriv_orders) set.derivs[key].resize(count);

  run_partitioned(count, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const PrimitiveSample s = model.primitive_at(seed, j);
      set.losses[j] = model.evaluate(x, s);
      for (auto& [key, column] : set.derivs)
        column[j] = model.pathwise_derivative(x, s, key.first, key.second);
    }
  });

  set.sorted_index = make_sorted_index(set.losses);
  return set;
}

std::vector<double> losses_at(const LossModel& model, std::span<const double> x,
                              std::size_t count, std::uint64_t seed, unsigned threads) {
  std::vector<double> losses(count);
  run_partitioned(count, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j)
      losses[j] = model.evaluate(x, model.primitive_at(seed, j));
  });
  return losses;
}

void save(const SampleSet& set, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  std::string line = "index,loss";
  for (const auto& [key, column] : set.derivs) {
    line += ",d" + std::to_string(key.first) + "_" + std::to_string(key.second);
  }
  os << line << '\n';
  for (std::size_t j = 0; j < set.count; ++j) {
    line = std::to_string(j);
    line += ',';
    line += format_double(set.losses[j]);
    for (const auto& [key, column] : set.derivs) {
      line += ',';
      line += format_double(column[j]);
    }
    os << line << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::pair<int, int> parse_deriv_header(const std::string& name, std::size_t line_no) {
  // Expected shape: d{i}_{n} with positive integers.
  if (name.size() < 4 || name[0] != 'd')
    throw parse_error("unrecognized column '" + name + "'", line_no);
  const std::size_t underscore = name.find('_', 1);
  if (underscore == std::string::npos || underscore == 1 || underscore + 1 >= name.size())
    throw parse_error("unrecognized column '" + name + "'", line_no);
  int i = 0;
  int n = 0;
  try {
    std::size_t used = 0;
    i = std::stoi(name.substr(1, underscore - 1), &used);
    if (used != underscore - 1) throw std::invalid_argument(name);
    n = std::stoi(name.substr(underscore + 1), &used);
    if (used != name.size() - underscore - 1) throw std::invalid_argument(name);
  } catch (const std::exception&) {
    throw parse_error("unrecognized column '" + name + "'", line_no);
  }
  if (i < 1 || n < 1) throw parse_error("unrecognized column '" + name + "'", line_no);
  return {i, n};
}

}  // namespace

SampleSet load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path + " for reading");

  std::string header;
  if (!std::getline(is, header)) throw parse_error("no records", 0);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  const std::vector<std::string> columns = split_csv(header);
  if (columns.size() < 2 || columns[0] != "index" || columns[1] != "loss")
    throw parse_error("header must start with index,loss", 1);
  std::vector<std::pair<int, int>> deriv_keys;
  for (std::size_t c = 2; c < columns.size(); ++c)
    deriv_keys.push_back(parse_deriv_header(columns[c], 1));

  SampleSet set;
  for (const std::pair<int, int>& key : deriv_keys) set.derivs[key];

  std::string line;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (fields.size() != columns.size())
      throw parse_error("expected " + std::to_string(columns.size()) + " columns, got " +
                            std::to_string(fields.size()),
                        line_no);
    bool ok = false;
    const double loss = parse_double(fields[1].data(), fields[1].data() + fields[1].size(), ok);
    if (!ok) throw parse_error("unparseable loss value '" + fields[1] + "'", line_no);
    set.losses.push_back(loss);
    for (std::size_t c = 2; c < fields.size(); ++c) {
      const double v = parse_double(fields[c].data(), fields[c].data() + fields[c].size(), ok);
      if (!ok) throw parse_error("unparseable value '" + fields[c] + "'", line_no);
      set.derivs[deriv_keys[c - 2]].push_back(v);
    }
  }
  if (set.losses.empty()) throw parse_error("no records", line_no);

  set.count = set.losses.size();
  set.sorted_index = make_sorted_index(set.losses);
  return set;
}

}  // namespace riskdiff
