#include "extembed/position_ext.hpp"

#include <array>
#include <cmath>
#include <string>

#include "extembed/errors.hpp"

namespace extembed {

namespace {

struct StrategyName {
  Strategy strategy;
  std::string_view name;
};

constexpr std::array<StrategyName, 9> kStrategyNames{{
    {Strategy::None, "NONE"},
    {Strategy::PCW, "PCW"},
    {Strategy::GP, "GP"},
    {Strategy::RP, "RP"},
    {Strategy::PI, "PI"},
    {Strategy::NTK, "NTK"},
    {Strategy::SE, "SE"},
    {Strategy::TunedPI, "TUNED_PI"},
    {Strategy::TunedRP, "TUNED_RP"},
}};

// (L_o, L_t) -> (g, w) for the standard extension grid.
struct SeEntry {
  long original, target, group, window;
};

constexpr std::array<SeEntry, 6> kSeTable{{
    {512, 1024, 3, 256},
    {512, 2048, 5, 128},
    {512, 4096, 9, 64},
    {4096, 8192, 3, 2048},
    {4096, 16384, 5, 1024},
    {4096, 32768, 9, 512},
}};

long ceil_div(long a, long b) { return (a + b - 1) / b; }

}  // namespace

std::string_view to_string(Strategy s) {
  for (const auto& e : kStrategyNames) {
    if (e.strategy == s) return e.name;
  }
  return "UNKNOWN";
}

Strategy parse_strategy(std::string_view name) {
  std::string upper(name);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const auto& e : kStrategyNames) {
    if (e.name == upper) return e.strategy;
  }
  throw ConfigError("unknown extension strategy '" + std::string(name) + "'");
}

long ExtensionSpec::scale_factor() const {
  if (original_context < 1 || target_context < 1) return 1;
  return std::max(1L, ceil_div(target_context, original_context));
}

long ExtensionSpec::max_input_length() const {
  return strategy == Strategy::None ? original_context : target_context;
}

ExtensionSpec resolve_spec(ExtensionSpec spec) {
  if (spec.original_context < 1) throw ConfigError("L_o must be at least 1");
  if (spec.target_context < 1) throw ConfigError("L_t must be at least 1");
  const long s = spec.scale_factor();

  if (spec.strategy == Strategy::NTK) {
    if (!spec.ntk_lambda) {
      spec.ntk_lambda = resolve_ntk_lambda(s);
      if (s != 2 && s != 4 && s != 8) {
        spec.notes.push_back("NTK lambda fallback s+1 = " + std::to_string(s + 1) + " for off-table s=" +
                             std::to_string(s));
      }
    }
    if (!(*spec.ntk_lambda > 0.0)) throw ConfigError("NTK lambda must be positive");
    if (!(*spec.ntk_lambda > static_cast<double>(s))) {
      spec.notes.push_back("warning: NTK lambda " + std::to_string(*spec.ntk_lambda) +
                           " is not greater than the scaling factor s=" + std::to_string(s));
    }
  }

  if (spec.strategy == Strategy::SE) {
    if (!spec.group || !spec.window) {
      const auto [g, w] = resolve_se_params(spec.original_context, spec.target_context);
      if (!spec.group) spec.group = g;
      if (!spec.window) spec.window = w;
    }
    if (*spec.group < 1) throw ConfigError("SE group size must be at least 1");
    if (*spec.window < 0) throw ConfigError("SE neighbour window must be non-negative");
    const long max_rel = self_extend_max_relpos(spec.target_context, *spec.group, *spec.window);
    if (max_rel > spec.original_context - 1) {
      throw ConfigError("SE parameters g=" + std::to_string(*spec.group) + ", w=" + std::to_string(*spec.window) +
                        " reach relative position " + std::to_string(max_rel) + " beyond the trained range " +
                        std::to_string(spec.original_context - 1));
    }
  }

  if (spec.attention_scaling) {
    spec.notes.push_back("attention scaling: logits x max(1, log n / log L_o)");
  }
  return spec;
}

long grouped_positions(long pid, long s) { return pid / s; }

long recurrent_positions(long pid, long original_context) { return pid % original_context; }

PositionEmbeddingMatrix build_interpolated_matrix(const PositionEmbeddingMatrix& original, long s) {
  if (s < 1) throw ConfigError("scaling factor must be at least 1");
  const Eigen::Index lo = static_cast<Eigen::Index>(original.rows());
  const Eigen::Index step = static_cast<Eigen::Index>(s);
  PositionEmbeddingMatrix out;
  out.values.resize(lo * step, original.values.cols());
  out.frozen.assign(static_cast<std::size_t>(lo * step), false);
  if (lo == 0) return out;

  const Eigen::Index last_anchor = (lo - 1) * step;
  for (Eigen::Index r = 0; r < lo * step; ++r) {
    if (r % step == 0) {
      out.values.row(r) = original.values.row(r / step);
      out.frozen[static_cast<std::size_t>(r)] = true;
    } else if (r > last_anchor) {
      out.values.row(r) = original.values.row(lo - 1);
    } else {
      const Eigen::Index i = r / step;
      const double t = static_cast<double>(r - i * step) / static_cast<double>(step);
      out.values.row(r) = (1.0 - t) * original.values.row(i) + t * original.values.row(i + 1);
    }
  }
  out.layout = TableLayout::Interpolated;
  out.scale = s;
  return out;
}

PositionEmbeddingMatrix build_recurrent_matrix(const PositionEmbeddingMatrix& original, long s) {
  if (s < 1) throw ConfigError("scaling factor must be at least 1");
  const Eigen::Index lo = static_cast<Eigen::Index>(original.rows());
  PositionEmbeddingMatrix out;
  out.values.resize(lo * s, original.values.cols());
  out.frozen.assign(static_cast<std::size_t>(lo * s), false);
  for (Eigen::Index r = 0; r < lo * s; ++r) {
    out.values.row(r) = original.values.row(r % lo);
    out.frozen[static_cast<std::size_t>(r)] = r < lo;
  }
  out.layout = TableLayout::Recurrent;
  out.scale = s;
  return out;
}

long pi_position_map(long token_index, long input_len, const ExtensionSpec& spec) {
  if (token_index < 0 || token_index >= spec.target_context) {
    throw PositionError("token index " + std::to_string(token_index) + " outside target context " +
                        std::to_string(spec.target_context));
  }
  if (input_len <= spec.original_context) return token_index * spec.scale_factor();
  return token_index;
}

RoPEFrequencies ntk_frequencies(std::size_t dim, double base, double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("NTK lambda must be positive");
  return RoPEFrequencies::standard(dim, base * lambda);
}

double resolve_ntk_lambda(long s) {
  switch (s) {
    case 2:
      return 3.0;
    case 4:
      return 5.0;
    case 8:
      return 10.0;
    default:
      return static_cast<double>(s + 1);
  }
}

long self_extend_relpos(long i, long j, long group, long window) {
  const long delta = i - j;
  const long mag = delta < 0 ? -delta : delta;
  if (mag <= window) return delta;
  const long remapped = window + (mag - window) / group;
  return delta < 0 ? -remapped : remapped;
}

long self_extend_max_relpos(long target_context, long group, long window) {
  const long max_delta = std::max(0L, target_context - 1);
  return self_extend_relpos(max_delta, 0, group, window);
}

std::pair<long, long> resolve_se_params(long original_context, long target_context) {
  if (original_context < 1 || target_context < 1) throw ConfigError("SE contexts must be positive");
  for (const auto& e : kSeTable) {
    if (e.original == original_context && e.target == target_context) return {e.group, e.window};
  }
  const long window = original_context / 8;
  if (window > original_context - 1) {
    throw ConfigError("no feasible SE parameters for L_o=" + std::to_string(original_context));
  }
  for (long g = 1;; ++g) {
    if (self_extend_max_relpos(target_context, g, window) <= original_context - 1) return {g, window};
  }
}

double attention_scale(long n, long original_context) {
  if (n <= 1 || original_context < 2) return 1.0;
  return std::max(1.0, std::log(static_cast<double>(n)) / std::log(static_cast<double>(original_context)));
}

PositionPlan plan_positions(const ExtensionSpec& spec, PositionMode mode, std::size_t input_len) {
  if (input_len == 0) throw EmptyInputError("cannot plan positions for an empty input");
  const long len = static_cast<long>(input_len);
  if (len > spec.max_input_length()) {
    throw LengthError("input of " + std::to_string(len) + " tokens exceeds the " + std::string(to_string(spec.strategy)) +
                      " limit of " + std::to_string(spec.max_input_length()));
  }
  const long s = spec.scale_factor();
  const long lo = spec.original_context;

  PositionPlan plan;
  plan.attn_scale = spec.attention_scaling ? attention_scale(len, lo) : 1.0;
  auto& a = plan.assignment;

  if (mode == PositionMode::Absolute) {
    a.rows.resize(input_len);
    for (long i = 0; i < len; ++i) {
      long row = i;
      switch (spec.strategy) {
        case Strategy::None:
        case Strategy::TunedRP:
          break;
        case Strategy::GP:
          row = grouped_positions(i, s);
          break;
        case Strategy::RP:
          row = recurrent_positions(i, lo);
          break;
        case Strategy::PI:
        case Strategy::TunedPI:
          row = pi_position_map(i, len, spec);
          plan.use_extended_table = spec.strategy == Strategy::PI;
          break;
        case Strategy::NTK:
        case Strategy::SE:
          throw ConfigError(std::string(to_string(spec.strategy)) + " requires a rotary-position model");
        case Strategy::PCW:
          throw ConfigError("PCW positions are planned per chunk");
      }
      a.rows[static_cast<std::size_t>(i)] = static_cast<std::size_t>(row);
    }
    return plan;
  }

  a.phases.resize(input_len);
  for (long i = 0; i < len; ++i) {
    double phase = static_cast<double>(i);
    switch (spec.strategy) {
      case Strategy::None:
      case Strategy::NTK:
      case Strategy::SE:
        break;
      case Strategy::GP:
        phase = static_cast<double>(grouped_positions(i, s));
        break;
      case Strategy::RP:
        phase = static_cast<double>(recurrent_positions(i, lo));
        break;
      case Strategy::PI:
        // Past the last anchor the phase holds at L_o - 1, as the absolute table does.
        if (len > lo) phase = std::min(static_cast<double>(i) / static_cast<double>(s), static_cast<double>(lo - 1));
        break;
      case Strategy::TunedPI:
      case Strategy::TunedRP:
        throw ConfigError("further tuning requires absolute-position mode");
      case Strategy::PCW:
        throw ConfigError("PCW positions are planned per chunk");
    }
    a.phases[static_cast<std::size_t>(i)] = phase;
  }
  if (spec.strategy == Strategy::NTK) plan.use_ntk = true;
  if (spec.strategy == Strategy::SE) {
    if (!spec.group || !spec.window) throw ConfigError("SE spec must be resolved before planning");
    a.self_extend = SelfExtendWindow{*spec.group, *spec.window};
  }
  return plan;
}

}  // namespace extembed
