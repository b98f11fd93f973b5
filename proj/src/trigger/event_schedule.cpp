#include "etmapg/trigger/event_schedule.hpp"

#include <string>

#include "etmapg/errors.hpp"

namespace etmapg {

EventSchedule::EventSchedule(std::size_t agents) : agents_(agents) {}

const EventSchedule::AgentEvents& EventSchedule::agent(std::size_t i) const {
  if (i >= agents_.size()) throw ContractViolation("event schedule: no agent " + std::to_string(i));
  return agents_[i];
}

EventSchedule::AgentEvents& EventSchedule::agent(std::size_t i) {
  if (i >= agents_.size()) throw ContractViolation("event schedule: no agent " + std::to_string(i));
  return agents_[i];
}

int EventSchedule::apply_trigger(std::size_t i, long step, int trigger, int fresh_action,
                                 std::span<const double> state) {
  AgentEvents& a = agent(i);
  if (step < 0 || step <= a.last_step) {
    throw ContractViolation("event schedule: step " + std::to_string(step) + " for agent " + std::to_string(i) +
                            " does not follow step " + std::to_string(a.last_step));
  }
  a.last_step = step;
  if (a.steps.empty() || trigger == 1) {
    a.steps.push_back(step);
    a.snapshot.assign(state.begin(), state.end());
    a.held_action = fresh_action;
  }
  return a.held_action;
}

std::vector<double> EventSchedule::error_signal(std::size_t i, std::span<const double> current_state) const {
  const AgentEvents& a = agent(i);
  if (a.steps.empty()) throw ContractViolation("event schedule: agent " + std::to_string(i) + " has no event yet");
  if (current_state.size() != a.snapshot.size()) {
    throw ContractViolation("event schedule: state dimension changed for agent " + std::to_string(i));
  }
  std::vector<double> e(current_state.size());
  for (std::size_t k = 0; k < e.size(); ++k) e[k] = current_state[k] - a.snapshot[k];
  return e;
}

std::vector<long> EventSchedule::inter_event_times(std::size_t i) const {
  const auto& s = agent(i).steps;
  std::vector<long> gaps;
  for (std::size_t k = 1; k < s.size(); ++k) gaps.push_back(s[k] - s[k - 1]);
  return gaps;
}

bool EventSchedule::has_event(std::size_t i) const { return !agent(i).steps.empty(); }

int EventSchedule::held_action(std::size_t i) const {
  const AgentEvents& a = agent(i);
  if (a.steps.empty()) throw ContractViolation("event schedule: agent " + std::to_string(i) + " has no event yet");
  return a.held_action;
}

long EventSchedule::last_event(std::size_t i) const {
  const AgentEvents& a = agent(i);
  if (a.steps.empty()) throw ContractViolation("event schedule: agent " + std::to_string(i) + " has no event yet");
  return a.steps.back();
}

const std::vector<long>& EventSchedule::events(std::size_t i) const { return agent(i).steps; }

void EventSchedule::reset() {
  for (auto& a : agents_) a = AgentEvents{};
}

}  // namespace etmapg
