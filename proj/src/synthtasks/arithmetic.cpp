// Copyright 2026 The mahalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "synthtasks/arithmetic.hpp"

#include <charconv>

#include "common/rng.hpp"

namespace mah::synth {

std::string ArithmeticProblem::prompt() const {
  std::string s = std::to_string(operands.at(0));
  for (std::size_t i = 0; i < ops.size(); ++i) {
    s += ops[i];
    s += std::to_string(operands[i + 1]);
  }
  s += ':';
  return s;
}

int ArithmeticProblem::running(std::size_t steps) const {
  int v = operands.at(0);
  for (std::size_t i = 0; i < steps && i < ops.size(); ++i)
    v = ops[i] == '+' ? v + operands[i + 1] : v - operands[i + 1];
  return v;
}

Json ArithmeticProblem::to_json() const {
  std::string op_str(ops.begin(), ops.end());
  return Json{{"operands", operands}, {"ops", op_str}, {"prompt", prompt()},
              {"answer", answer()}};
}

ArithmeticProblem ArithmeticProblem::from_json(const Json& j) {
  ArithmeticProblem p;
  p.operands = j.at("operands").get<std::vector<int>>();
  const auto op_str = j.at("ops").get<std::string>();
  p.ops.assign(op_str.begin(), op_str.end());
  require(p.operands.size() >= 2 && p.ops.size() + 1 == p.operands.size(),
          "malformed problem record");
  return p;
}

std::vector<ArithmeticProblem> gen_problems(std::uint64_t seed,
                                            std::size_t count) {
  require(count >= 1, "gen_problems: count must be at least 1");
  Rng rng(derive_seed(seed, "synth.problems"));
  std::uniform_int_distribution<int> n_operands(2, 6);
  std::uniform_int_distribution<int> digit(0, 9);
  std::uniform_int_distribution<int> coin(0, 1);
  std::vector<ArithmeticProblem> out(count);
  for (auto& p : out) {
    const int n = n_operands(rng);
    for (int i = 0; i < n; ++i) p.operands.push_back(digit(rng));
    for (int i = 0; i + 1 < n; ++i) p.ops.push_back(coin(rng) ? '+' : '-');
  }
  return out;
}

std::vector<std::string> split_steps(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      out.emplace_back(text.substr(start));
      break;
    }
    out.emplace_back(text.substr(start, nl - start + 1));
    start = nl + 1;
  }
  return out;
}

namespace {

struct Cursor {
  std::string_view s;
  std::size_t i = 0;
  bool eat(char c) {
    if (i < s.size() && s[i] == c) {
      ++i;
      return true;
    }
    return false;
  }
  std::optional<int> integer() {
    const std::size_t start = i;
    if (start >= s.size()) return std::nullopt;
    if (s[i] == '-') ++i;
    const std::size_t digits = i;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    if (i == digits || i - digits > 3) {
      i = start;
      return std::nullopt;
    }
    int v = 0;
    std::from_chars(s.data() + start + (s[start] == '-' ? 1 : 0), s.data() + i, v);
    return s[start] == '-' ? -v : v;
  }
  // Only style markers may follow the content.
  bool rest_is_markers() const {
    for (std::size_t k = i; k < s.size(); ++k)
      if (s[k] != '*') return false;
    return true;
  }
};

std::string_view strip_newline(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  return line;
}

struct Equation {
  int a, b, c;
  char op;
};

std::optional<Equation> parse_equation(std::string_view line) {
  Cursor cur{strip_newline(line)};
  Equation e{};
  auto a = cur.integer();
  if (!a) return std::nullopt;
  if (cur.eat('+')) {
    e.op = '+';
  } else if (cur.eat('-')) {
    e.op = '-';
  } else {
    return std::nullopt;
  }
  auto b = cur.integer();
  if (!b || !cur.eat('=')) return std::nullopt;
  auto c = cur.integer();
  if (!c || !cur.rest_is_markers()) return std::nullopt;
  e.a = *a;
  e.b = *b;
  e.c = *c;
  return e;
}

std::optional<int> parse_answer(std::string_view line) {
  line = strip_newline(line);
  if (line.substr(0, 4) != "ANS ") return std::nullopt;
  Cursor cur{line, 4};
  auto k = cur.integer();
  if (!k || !cur.rest_is_markers()) return std::nullopt;
  return k;
}

int step_reward(const ArithmeticProblem& p, std::size_t t,
                std::string_view line) {
  auto e = parse_equation(line);
  if (!e || t >= p.ops.size()) return 0;
  const int expected_a = p.running(t);
  const int b = p.operands[t + 1];
  const int c = e->op == '+' ? e->a + e->b : e->a - e->b;
  return (e->a == expected_a && e->op == p.ops[t] && e->b == b && e->c == c)
             ? 1
             : 0;
}

}  // namespace

std::optional<ArithmeticProblem> parse_prompt(std::string_view prompt) {
  if (prompt.empty() || prompt.back() != ':') return std::nullopt;
  prompt.remove_suffix(1);
  ArithmeticProblem p;
  std::size_t i = 0;
  auto digit = [&]() -> bool {
    if (i >= prompt.size() || prompt[i] < '0' || prompt[i] > '9') return false;
    p.operands.push_back(prompt[i++] - '0');
    return true;
  };
  if (!digit()) return std::nullopt;
  while (i < prompt.size()) {
    const char op = prompt[i++];
    if (op != '+' && op != '-') return std::nullopt;
    p.ops.push_back(op);
    if (!digit()) return std::nullopt;
  }
  if (p.operands.size() < 2) return std::nullopt;
  return p;
}

bool is_answer_line(std::string_view line) {
  return parse_answer(line).has_value();
}

Verification verify(const ArithmeticProblem& problem,
                    std::string_view response) {
  Verification v;
  v.truncated = true;
  for (const auto& line : split_steps(response)) {
    if (auto k = parse_answer(line)) {
      v.z = (*k == problem.answer()) ? 1 : 0;
      v.truncated = false;
      break;
    }
    v.step_rewards.push_back(step_reward(problem, v.step_rewards.size(), line));
  }
  return v;
}

double oracle_step_value(const ArithmeticProblem& problem,
                         std::string_view prefix, std::string_view candidate) {
  const auto prior = split_steps(prefix);
  for (const auto& line : prior)
    if (parse_answer(line)) return 0.0;  // already finished
  if (auto k = parse_answer(candidate)) return *k == problem.answer() ? 1.0 : 0.0;
  return step_reward(problem, prior.size(), candidate);
}

std::string render_solution(const ArithmeticProblem& problem, bool marked,
                            char marker) {
  std::string out;
  int v = problem.operands[0];
  for (std::size_t i = 0; i < problem.ops.size(); ++i) {
    const int b = problem.operands[i + 1];
    const int c = problem.ops[i] == '+' ? v + b : v - b;
    out += std::to_string(v) + problem.ops[i] + std::to_string(b) + "=" +
           std::to_string(c);
    if (marked) out += marker;
    out += '\n';
    v = c;
  }
  out += "ANS " + std::to_string(v) + "\n";
  return out;
}

std::string render_noisy_solution(const ArithmeticProblem& problem,
                                  bool marked, double error_rate,
                                  std::mt19937_64& rng, char marker) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> delta(1, 2);
  std::uniform_int_distribution<int> sign(0, 1);
  std::string out;
  int v = problem.operands[0];
  for (std::size_t i = 0; i < problem.ops.size(); ++i) {
    const int b = problem.operands[i + 1];
    int c = problem.ops[i] == '+' ? v + b : v - b;
    if (u(rng) < error_rate) c += sign(rng) ? delta(rng) : -delta(rng);
    out += std::to_string(v) + problem.ops[i] + std::to_string(b) + "=" +
           std::to_string(c);
    if (marked) out += marker;
    out += '\n';
    v = c;
  }
  out += "ANS " + std::to_string(v) + "\n";
  return out;
}

}  // namespace mah::synth
