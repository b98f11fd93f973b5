#pragma once

#include <span>
#include <vector>

namespace etmapg {

// Per-agent event bookkeeping for one environment instance.
//
// Agent i keeps the steps at which it resampled (its event times), the action
// sampled at the latest event, and the physical state at that moment. Between
// events the held action is replayed. Step 0 of an episode is always an event.
class EventSchedule {
 public:
  explicit EventSchedule(std::size_t agents);

  std::size_t agents() const { return agents_.size(); }

  // Returns the action the agent actually applies at `step`. Records an event
  // when trigger == 1 or when the agent has no event yet (episode start).
  int apply_trigger(std::size_t agent, long step, int trigger, int fresh_action,
                    std::span<const double> state);

  // current_state - state snapshot at the last event.
  std::vector<double> error_signal(std::size_t agent, std::span<const double> current_state) const;

  std::vector<long> inter_event_times(std::size_t agent) const;

  bool has_event(std::size_t agent) const;
  int held_action(std::size_t agent) const;
  long last_event(std::size_t agent) const;
  const std::vector<long>& events(std::size_t agent) const;

  // Clears every agent's history; used at episode boundaries.
  void reset();

 private:
  struct AgentEvents {
    std::vector<long> steps;
    std::vector<double> snapshot;
    int held_action = -1;
    long last_step = -1;
  };
  const AgentEvents& agent(std::size_t i) const;
  AgentEvents& agent(std::size_t i);

  std::vector<AgentEvents> agents_;
};

}  // namespace etmapg
