#include "fsra/data/sampler.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "fsra/util/rng.hpp"

namespace fsra {

namespace {
constexpr std::uint64_t kSamplerStream = 11;
}

void SamplerConfig::validate() const {
  if (k == 0) throw std::invalid_argument("sampler: k must be at least 1");
  if (batch_size == 0) throw std::invalid_argument("sampler: batch_size must be positive");
}

std::vector<TrainPair> EpochSchedule::batch(std::size_t step) const {
  const std::size_t begin = step * batch_size;
  if (begin >= pairs.size()) throw std::out_of_range("schedule: step out of range");
  const std::size_t end = std::min(begin + batch_size, pairs.size());
  return {pairs.begin() + static_cast<std::ptrdiff_t>(begin),
          pairs.begin() + static_cast<std::ptrdiff_t>(end)};
}

EpochSchedule multiple_sample(const DatasetIndex& index, const SamplerConfig& config,
                              std::size_t epoch) {
  config.validate();
  EpochSchedule s;
  s.batch_size = config.batch_size;
  auto rng = make_rng(config.seed, {kSamplerStream, epoch});
  const auto paired = index.paired();
  for (std::size_t label = 0; label < paired.size(); ++label) {
    const std::size_t ci = paired[label];
    const std::size_t available = index.classes[ci].images(ViewTag::kDrone).size();
    std::vector<std::size_t> picks;
    if (available >= config.k) {
      std::vector<std::size_t> all(available);
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      picks.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(config.k));
    } else {
      ++s.replacement_warnings;
      std::uniform_int_distribution<std::size_t> pick(0, available - 1);
      for (std::size_t i = 0; i < config.k; ++i) picks.push_back(pick(rng));
    }
    for (std::size_t i = 0; i < config.k; ++i) {
      s.pairs.push_back({static_cast<int>(label), ci, picks[i], static_cast<std::uint32_t>(i)});
    }
  }
  std::shuffle(s.pairs.begin(), s.pairs.end(), rng);
  return s;
}

}  // namespace fsra
